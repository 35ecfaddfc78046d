//! Backward passes checked against central finite differences and a naive
//! convolution oracle.

use ndarray::{Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidseg::nn::{
    backward, forward, infer, init_params, masked_cross_entropy, LayerSpec, NetParams, NetSpec,
    Sgd, TrainConfig,
};
use vidseg::{ClassInfo, ClassTable, LabelMap};

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn(shape, |_| {
        // keep clear of the relu kink
        let v: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-8, f64::max);
    diff / scale
}

/// Scalar objective `sum(net(x, aux) * r)`.
fn objective(
    spec: &NetSpec,
    p: &NetParams,
    x: ArrayView3<f64>,
    aux: Option<ArrayView3<f64>>,
    r: &Array3<f64>,
) -> f64 {
    (infer(spec, p, x, aux).unwrap() * r).sum()
}

fn flat_params(p: &NetParams) -> Vec<f64> {
    p.named_tensors()
        .into_iter()
        .flat_map(|(_, _, v)| v)
        .collect()
}

fn perturb(p: &NetParams, index: usize, delta: f64) -> NetParams {
    let mut q = p.clone();
    let mut i = index;
    for c in &mut q.convs {
        if i < c.weight.len() {
            *c.weight.iter_mut().nth(i).unwrap() += delta;
            return q;
        }
        i -= c.weight.len();
        if i < c.bias.len() {
            c.bias[i] += delta;
            return q;
        }
        i -= c.bias.len();
    }
    panic!("index out of range");
}

/// Parameter-free layers are checked followed by a 1x1 conv.
fn check_net(spec: &NetSpec, shape: (usize, usize), seed: u64) {
    let p = init_params(spec, seed);
    let x = random((spec.input_channels, shape.0, shape.1), seed + 1);
    let aux = spec
        .aux_channels()
        .map(|c| random((c, shape.0, shape.1), seed + 2));
    let (y, cache) = forward(spec, &p, x.view(), aux.as_ref().map(|a| a.view())).unwrap();
    let r = random(y.dim(), seed + 3);
    let g = backward(spec, &p, &cache, &r).unwrap();
    let av = aux.as_ref().map(|a| a.view());

    let n = p.num_values();
    let numeric: Vec<f64> = (0..n)
        .map(|i| {
            let plus = objective(spec, &perturb(&p, i, EPS), x.view(), av, &r);
            let minus = objective(spec, &perturb(&p, i, -EPS), x.view(), av, &r);
            (plus - minus) / (2.0 * EPS)
        })
        .collect();
    if n > 0 {
        let e = rel_err(&flat_params(&g.params), &numeric);
        assert!(e < TOL, "{spec:?}: parameter gradient error {e}");
    }

    let mut numeric_x = Vec::new();
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        *xp.iter_mut().nth(i).unwrap() += EPS;
        *xm.iter_mut().nth(i).unwrap() -= EPS;
        numeric_x.push(
            (objective(spec, &p, xp.view(), av, &r) - objective(spec, &p, xm.view(), av, &r))
                / (2.0 * EPS),
        );
    }
    let e = rel_err(g.input.as_slice().unwrap(), &numeric_x);
    assert!(e < TOL, "{spec:?}: input gradient error {e}");

    if let Some(a) = &aux {
        let mut numeric_a = Vec::new();
        for i in 0..a.len() {
            let mut ap = a.clone();
            let mut am = a.clone();
            *ap.iter_mut().nth(i).unwrap() += EPS;
            *am.iter_mut().nth(i).unwrap() -= EPS;
            numeric_a.push(
                (objective(spec, &p, x.view(), Some(ap.view()), &r)
                    - objective(spec, &p, x.view(), Some(am.view()), &r))
                    / (2.0 * EPS),
            );
        }
        let e = rel_err(g.aux.as_ref().unwrap().as_slice().unwrap(), &numeric_a);
        assert!(e < TOL, "{spec:?}: aux gradient error {e}");
    }
}

#[test]
fn conv3x3() {
    check_net(
        &NetSpec::new(2, vec![LayerSpec::conv3(2, 3, 1)]).unwrap(),
        (5, 6),
        1,
    );
}

#[test]
fn conv1x1() {
    check_net(
        &NetSpec::new(3, vec![LayerSpec::conv1(3, 2)]).unwrap(),
        (4, 5),
        2,
    );
}

#[test]
fn dilated_conv() {
    check_net(
        &NetSpec::new(2, vec![LayerSpec::conv3(2, 2, 2)]).unwrap(),
        (7, 6),
        3,
    );
}

#[test]
fn relu() {
    check_net(
        &NetSpec::new(2, vec![LayerSpec::Relu, LayerSpec::conv1(2, 2)]).unwrap(),
        (4, 4),
        4,
    );
}

#[test]
fn downsample_odd_dims() {
    check_net(
        &NetSpec::new(2, vec![LayerSpec::Downsample2, LayerSpec::conv1(2, 2)]).unwrap(),
        (5, 7),
        5,
    );
}

#[test]
fn bilinear_up() {
    check_net(
        &NetSpec::new(
            2,
            vec![LayerSpec::BilinearUp { factor: 2 }, LayerSpec::conv1(2, 2)],
        )
        .unwrap(),
        (3, 4),
        6,
    );
    check_net(
        &NetSpec::new(
            1,
            vec![LayerSpec::BilinearUp { factor: 3 }, LayerSpec::conv1(1, 2)],
        )
        .unwrap(),
        (2, 3),
        7,
    );
}

#[test]
fn concat_input() {
    let spec = NetSpec::new(
        2,
        vec![
            LayerSpec::ConcatInput { channels: 3 },
            LayerSpec::conv1(5, 2),
        ],
    )
    .unwrap();
    check_net(&spec, (3, 4), 8);
}

#[test]
fn default_networks_end_to_end() {
    check_net(&NetSpec::default_approximating(3), (4, 5), 9);
    check_net(&NetSpec::default_ensemble(3), (4, 4), 10);
}

#[test]
fn priming_network_end_to_end() {
    check_net(&NetSpec::default_priming(2), (4, 4), 11);
}

fn table(n: u8) -> ClassTable {
    let classes = (0..n)
        .map(|i| ClassInfo {
            id: i,
            name: format!("c{i}"),
            color: [i * 20; 3],
        })
        .collect();
    ClassTable::new(classes, n - 1).unwrap()
}

#[test]
fn cross_entropy_gradient() {
    let t = table(5);
    let s = random((4, 3, 4), 12) * 3.0;
    let gt = LabelMap::from_fn(3, 4, |y, x| ((y * 4 + x) % 5) as u8).unwrap();
    let (_, g) = masked_cross_entropy(s.view(), &gt, &t).unwrap();
    let numeric: Vec<f64> = (0..s.len())
        .map(|i| {
            let mut sp = s.clone();
            let mut sm = s.clone();
            *sp.iter_mut().nth(i).unwrap() += EPS;
            *sm.iter_mut().nth(i).unwrap() -= EPS;
            let lp = masked_cross_entropy(sp.view(), &gt, &t).unwrap().0;
            let lm = masked_cross_entropy(sm.view(), &gt, &t).unwrap().0;
            (lp - lm) / (2.0 * EPS)
        })
        .collect();
    let e = rel_err(g.as_slice().unwrap(), &numeric);
    assert!(e < TOL, "loss gradient error {e}");
}

/// Direct per-pixel sum with zero padding.
fn naive_conv(
    x: &Array3<f64>,
    w: &ndarray::Array4<f64>,
    b: &ndarray::Array1<f64>,
    d: usize,
) -> Array3<f64> {
    let (ci, h, wd) = x.dim();
    let (co, _, k, _) = w.dim();
    let r = (k / 2 * d) as isize;
    Array3::from_shape_fn((co, h, wd), |(o, y, xx)| {
        let mut acc = b[o];
        for c in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let sy = y as isize + (ky * d) as isize - r;
                    let sx = xx as isize + (kx * d) as isize - r;
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                        acc += w[[o, c, ky, kx]] * x[[c, sy as usize, sx as usize]];
                    }
                }
            }
        }
        acc
    })
}

#[test]
fn conv_matches_naive_oracle() {
    for (k, d) in [(3, 1), (3, 2), (3, 3), (1, 1)] {
        let spec = NetSpec::new(
            3,
            vec![LayerSpec::Conv {
                in_channels: 3,
                out_channels: 4,
                kernel: k,
                dilation: d,
            }],
        )
        .unwrap();
        let p = init_params(&spec, 20 + d as u64);
        let x = random((3, 6, 9), 30);
        let y = infer(&spec, &p, x.view(), None).unwrap();
        let oracle = naive_conv(&x, &p.convs[0].weight, &p.convs[0].bias, d);
        let err = (&y - &oracle)
            .mapv(f64::abs)
            .fold(0.0, |a: f64, &b| a.max(b));
        assert!(err < 1e-9, "k={k} d={d}: {err}");
    }
}

#[test]
fn golden_conv_values() {
    // hand-computed: 2x2 input, all-ones 3x3 kernel, bias 0.5
    let spec = NetSpec::new(1, vec![LayerSpec::conv3(1, 1, 1)]).unwrap();
    let mut p = NetParams::zeros(&spec);
    p.convs[0].weight.fill(1.0);
    p.convs[0].bias.fill(0.5);
    let x = Array3::from_shape_vec((1, 2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let y = infer(&spec, &p, x.view(), None).unwrap();
    let expect = [12.5, 21.5, 16.5, 12.5, 21.5, 16.5];
    for (a, b) in y.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn translation_consistency() {
    // interior outputs shift with the input
    let spec = NetSpec::default_approximating(3);
    let p = init_params(&spec, 4);
    let big = random((3, 16, 20), 5);
    let shifted = Array3::from_shape_fn((3, 16, 20), |(c, y, x)| big[[c, y, (x + 2) % 20]]);
    let a = infer(&spec, &p, big.view(), None).unwrap();
    let b = infer(&spec, &p, shifted.view(), None).unwrap();
    // receptive field radius is 3, so columns 5..=14 of `b` are untouched by the wrap and the border
    for c in 0..3 {
        for y in 0..16 {
            for x in 3..13 {
                assert!((b[[c, y, x]] - a[[c, y, x + 2]]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn overfits_a_single_frame() {
    let t = table(4);
    let spec = NetSpec::default_approximating(3);
    let mut p = init_params(&spec, 7);
    let x = random((3, 8, 8), 8).mapv(f64::abs);
    let gt = LabelMap::from_fn(8, 8, |y, xx| {
        if y < 3 {
            0
        } else if xx < 4 {
            1
        } else {
            2
        }
    })
    .unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        momentum: 0.9,
        ..TrainConfig::default()
    };
    let mut opt = Sgd::new();
    let mut losses = Vec::new();
    for _ in 0..50 {
        let (y, cache) = forward(&spec, &p, x.view(), None).unwrap();
        let (loss, g) = masked_cross_entropy(y.view(), &gt, &t).unwrap();
        losses.push(loss);
        let grads = backward(&spec, &p, &cache, &g).unwrap();
        opt.step(&mut p, &grads.params, &cfg).unwrap();
    }
    assert!(
        losses[49] < 0.5 * losses[0],
        "{} -> {}",
        losses[0],
        losses[49]
    );
}
