use vidseg_web::{budget_curve, Scene};

#[test]
fn scene_buffers_have_frame_size() {
    let s = Scene::new(3, 48, 32, 4).unwrap();
    assert_eq!(s.len(), 4);
    assert_eq!(s.image(0).len(), 48 * 32 * 4);
    assert_eq!(s.labels(3).len(), 48 * 32 * 4);
    // out-of-range frames clamp to the last one
    assert_eq!(s.labels(99), s.labels(3));
    assert_eq!(s.class_names(), "road,lane,sky,fence,car,truck");
}

#[test]
fn stride_one_round_trip_is_identity() {
    let s = Scene::new(1, 48, 32, 3).unwrap();
    assert_eq!(s.subn_labels(1, 1).unwrap(), s.labels(1));
    assert!(s
        .subn_iou(1)
        .unwrap()
        .iter()
        .all(|&v| v == 1.0 || v.is_nan()));
    let coarse = s.subn_iou(8).unwrap();
    assert!(coarse
        .iter()
        .filter(|v| !v.is_nan())
        .all(|&v| v < 1.0 + 1e-12));
}

#[test]
fn budget_curve_endpoints() {
    let c = budget_curve(1.0, 0.1, 0.1, 5, 30).unwrap();
    assert_eq!(c.len(), 6);
    assert_eq!(c[0], 1.0);
    assert_eq!(c[4], 0.36);
    assert!(c.windows(2).all(|w| w[1] < w[0]));
}
