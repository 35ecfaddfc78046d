//! Resampling kernels.
//!
//! Label maps only ever go through nearest-neighbour sampling. Images and
//! score maps use bilinear interpolation with half-pixel centres: target
//! coordinate `t` samples source coordinate `(t + 0.5) * src / dst - 0.5`,
//! clamped to the valid range.

use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::types::{Image, LabelMap, ScoreMap};

/// Offset applied to integer indices to get the pixel centre.
const PIXEL_CENTER: f64 = 0.5;

/// Nearest-neighbour subsampling with the top-left anchor: output `(i, j)`
/// is input `(i * stride, j * stride)`. Output size rounds up.
pub fn nn_subsample(labels: &LabelMap, stride: usize) -> Result<LabelMap> {
    if stride < 1 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let (h, w) = labels.dims();
    LabelMap::from_fn(h.div_ceil(stride), w.div_ceil(stride), |y, x| {
        labels.get(y * stride, x * stride)
    })
}

/// Nearest-neighbour upscaling: output `(i, j)` is input
/// `(floor(i * h / target_h), floor(j * w / target_w))`.
pub fn nn_upscale(labels: &LabelMap, target_h: usize, target_w: usize) -> Result<LabelMap> {
    let (h, w) = labels.dims();
    if target_h < h || target_w < w {
        return Err(Error::InvalidArgument(format!(
            "upscale target {target_h}x{target_w} is smaller than source {h}x{w}"
        )));
    }
    LabelMap::from_fn(target_h, target_w, |y, x| {
        labels.get(y * h / target_h, x * w / target_w)
    })
}

/// Subsample with `stride`, then upscale back to the original size.
pub fn subsample_round_trip(labels: &LabelMap, stride: usize) -> Result<LabelMap> {
    let (h, w) = labels.dims();
    nn_upscale(&nn_subsample(labels, stride)?, h, w)
}

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    let max = (src - 1) as f64;
    (0..dst)
        .map(|t| {
            let s = ((t as f64 + PIXEL_CENTER) * scale - PIXEL_CENTER).clamp(0.0, max);
            let lo = s.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(src - 1),
                frac: s - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resize of every channel of a `(channels, h, w)` array.
pub fn bilinear(src: ArrayView3<'_, f64>, target_h: usize, target_w: usize) -> Result<Array3<f64>> {
    let (c, h, w) = src.dim();
    if target_h < 1 || target_w < 1 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be at least 1x1, got {target_h}x{target_w}"
        )));
    }
    if h < 1 || w < 1 {
        return Err(Error::Shape("cannot resize an empty map".into()));
    }
    let ys = axis_taps(h, target_h);
    let xs = axis_taps(w, target_w);
    let mut out = Array3::zeros((c, target_h, target_w));
    for ch in 0..c {
        let plane = src.index_axis(ndarray::Axis(0), ch);
        let mut dst = out.index_axis_mut(ndarray::Axis(0), ch);
        for (ty, yt) in ys.iter().enumerate() {
            for (tx, xt) in xs.iter().enumerate() {
                let top = plane[[yt.lo, xt.lo]] * (1.0 - xt.frac) + plane[[yt.lo, xt.hi]] * xt.frac;
                let bot = plane[[yt.hi, xt.lo]] * (1.0 - xt.frac) + plane[[yt.hi, xt.hi]] * xt.frac;
                dst[[ty, tx]] = top * (1.0 - yt.frac) + bot * yt.frac;
            }
        }
    }
    Ok(out)
}

/// Adjoint (transpose) of [`bilinear`]: scatters a gradient over the
/// resized map back onto a `src_h x src_w` grid.
pub fn bilinear_adjoint(
    grad: ArrayView3<'_, f64>,
    src_h: usize,
    src_w: usize,
) -> Result<Array3<f64>> {
    let (c, th, tw) = grad.dim();
    if src_h < 1 || src_w < 1 || th < 1 || tw < 1 {
        return Err(Error::Shape("bilinear adjoint on an empty map".into()));
    }
    let ys = axis_taps(src_h, th);
    let xs = axis_taps(src_w, tw);
    let mut out = Array3::zeros((c, src_h, src_w));
    for ch in 0..c {
        let g = grad.index_axis(ndarray::Axis(0), ch);
        let mut dst = out.index_axis_mut(ndarray::Axis(0), ch);
        for (ty, yt) in ys.iter().enumerate() {
            for (tx, xt) in xs.iter().enumerate() {
                let v = g[[ty, tx]];
                let top = v * (1.0 - yt.frac);
                let bot = v * yt.frac;
                dst[[yt.lo, xt.lo]] += top * (1.0 - xt.frac);
                dst[[yt.lo, xt.hi]] += top * xt.frac;
                dst[[yt.hi, xt.lo]] += bot * (1.0 - xt.frac);
                dst[[yt.hi, xt.hi]] += bot * xt.frac;
            }
        }
    }
    Ok(out)
}

pub fn bilinear_resize(scores: &ScoreMap, target_h: usize, target_w: usize) -> Result<ScoreMap> {
    ScoreMap::new(bilinear(scores.data().view(), target_h, target_w)?)
}

/// Shrink by `factor` (output size rounds up) with the bilinear kernel.
pub fn downsample_image(img: &Image, factor: usize) -> Result<Image> {
    if factor < 1 {
        return Err(Error::InvalidArgument(
            "downsample factor must be at least 1".into(),
        ));
    }
    let (h, w) = img.dims();
    let mut out = bilinear(img.data().view(), h.div_ceil(factor), w.div_ceil(factor))?;
    // convex combinations can overshoot 1.0 by an ulp
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Image::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn row(vals: &[f64]) -> Array3<f64> {
        Array3::from_shape_vec((1, 1, vals.len()), vals.to_vec()).unwrap()
    }

    #[test]
    fn subsample_picks_top_left_grid() {
        let l = LabelMap::from_fn(4, 4, |y, x| (y * 4 + x) as u8).unwrap();
        let s = nn_subsample(&l, 2).unwrap();
        assert_eq!(s.dims(), (2, 2));
        assert_eq!(s.as_slice(), &[0, 2, 8, 10]);
    }

    #[test]
    fn subsample_rounds_up() {
        let l = LabelMap::from_fn(3, 3, |y, x| (y * 3 + x) as u8).unwrap();
        let s = nn_subsample(&l, 2).unwrap();
        assert_eq!(s.dims(), (2, 2));
        assert_eq!(s.as_slice(), &[0, 2, 6, 8]);
        assert!(nn_subsample(&l, 0).is_err());
    }

    #[test]
    fn upscale_replicates_blocks() {
        let l = LabelMap::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        let u = nn_upscale(&l, 4, 4).unwrap();
        assert_eq!(
            u.as_slice(),
            &[1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]
        );
        assert_eq!(nn_upscale(&l, 2, 2).unwrap(), l);
        assert!(nn_upscale(&l, 1, 4).is_err());
    }

    #[test]
    fn upscale_non_integer_factor() {
        let l = LabelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let u = nn_upscale(&l, 3, 3).unwrap();
        // rows and columns map to source indices [0, 0, 1]
        assert_eq!(u.as_slice(), &[0, 0, 1, 0, 0, 1, 2, 2, 3]);
    }

    #[test]
    fn bilinear_upsample_row() {
        let out = bilinear(row(&[0.0, 2.0]).view(), 1, 4).unwrap();
        assert_eq!(out.into_raw_vec_and_offset().0, vec![0.0, 0.5, 1.5, 2.0]);
    }

    #[test]
    fn bilinear_downsample_row() {
        let img = Image::new(Array3::from_shape_fn((3, 1, 4), |(_, _, x)| x as f64 / 3.0)).unwrap();
        let out = downsample_image(&img, 2).unwrap();
        assert_eq!(out.dims(), (1, 2));
        assert!((out.data()[[0, 0, 0]] - 0.5 / 3.0).abs() < 1e-15);
        assert!((out.data()[[0, 0, 1]] - 2.5 / 3.0).abs() < 1e-15);
        let out = bilinear(row(&[0.0, 1.0, 2.0, 3.0]).view(), 1, 2).unwrap();
        assert_eq!(out.into_raw_vec_and_offset().0, vec![0.5, 2.5]);
    }

    #[test]
    fn constant_stays_constant() {
        let src = Array3::from_elem((2, 3, 5), 0.7);
        for (h, w) in [(1, 1), (7, 2), (3, 5), (9, 11)] {
            let out = bilinear(src.view(), h, w).unwrap();
            assert!(out.iter().all(|&v| (v - 0.7).abs() < 1e-15));
        }
        let img = Image::new(Array3::from_elem((3, 4, 4), 0.25)).unwrap();
        let d = downsample_image(&img, 2).unwrap();
        assert_eq!(d.dims(), (2, 2));
        assert!(d.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn same_size_is_identity() {
        let src = Array3::from_shape_fn((2, 4, 3), |(c, y, x)| (c * 13 + y * 5 + x) as f64 * 0.1);
        let out = bilinear(src.view(), 4, 3).unwrap();
        for (a, b) in out.iter().zip(src.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let img = Image::new(Array3::from_shape_fn((3, 4, 3), |(c, y, x)| {
            ((c * 13 + y * 5 + x) % 10) as f64 / 10.0
        }))
        .unwrap();
        let d = downsample_image(&img, 1).unwrap();
        for (a, b) in d.data().iter().zip(img.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(downsample_image(&img, 0).is_err());
    }

    #[test]
    fn rejects_empty_target() {
        assert!(bilinear(array![[[1.0]]].view(), 0, 3).is_err());
    }

    /// Direct evaluation of the interpolation formula for one output pixel.
    fn brute(src: &Array3<f64>, c: usize, ty: usize, tx: usize, th: usize, tw: usize) -> f64 {
        let (_, h, w) = src.dim();
        let sy = ((ty as f64 + 0.5) * h as f64 / th as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let sx = ((tx as f64 + 0.5) * w as f64 / tw as f64 - 0.5).clamp(0.0, (w - 1) as f64);
        let mut acc = 0.0;
        for yy in 0..h {
            for xx in 0..w {
                let wy = (1.0 - (sy - yy as f64).abs()).max(0.0);
                let wx = (1.0 - (sx - xx as f64).abs()).max(0.0);
                acc += wy * wx * src[[c, yy, xx]];
            }
        }
        acc
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            vals in prop::collection::vec(-5.0f64..5.0, 2 * 5 * 7),
            th in 1usize..13,
            tw in 1usize..13,
        ) {
            let src = Array3::from_shape_vec((2, 5, 7), vals).unwrap();
            let out = bilinear(src.view(), th, tw).unwrap();
            for c in 0..2 {
                for y in 0..th {
                    for x in 0..tw {
                        prop_assert!((out[[c, y, x]] - brute(&src, c, y, x, th, tw)).abs() < 1e-9);
                    }
                }
            }
        }

        #[test]
        fn preserves_value_range(
            vals in prop::collection::vec(-5.0f64..5.0, 6 * 4),
            th in 1usize..15,
            tw in 1usize..15,
        ) {
            let src = Array3::from_shape_vec((1, 6, 4), vals.clone()).unwrap();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = bilinear(src.view(), th, tw).unwrap();
            for v in out.iter() {
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }

        #[test]
        fn adjoint_is_transpose(
            a in prop::collection::vec(-1.0f64..1.0, 3 * 5),
            b in prop::collection::vec(-1.0f64..1.0, 7 * 4),
        ) {
            // <R a, b> == <a, R^T b>
            let src = Array3::from_shape_vec((1, 3, 5), a).unwrap();
            let g = Array3::from_shape_vec((1, 7, 4), b).unwrap();
            let lhs: f64 = (bilinear(src.view(), 7, 4).unwrap() * &g).sum();
            let rhs: f64 = (&src * &bilinear_adjoint(g.view(), 3, 5).unwrap()).sum();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn round_trip_idempotent(
            ids in prop::collection::vec(0u8..4, 9 * 11),
            stride in 1usize..6,
        ) {
            let l = LabelMap::new(9, 11, ids).unwrap();
            let once = subsample_round_trip(&l, stride).unwrap();
            let twice = subsample_round_trip(&once, stride).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(subsample_round_trip(&l, 1).unwrap(), l);
        }
    }
}
