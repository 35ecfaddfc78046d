use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::types::{ClassTable, LabelMap};

/// Softmax cross-entropy averaged over the pixels whose ground truth is a
/// scored class, with its gradient w.r.t. the scores. Unknown pixels
/// contribute neither loss nor gradient; an all-unknown map gives zero loss.
pub fn masked_cross_entropy(
    scores: ArrayView3<'_, f64>,
    gt: &LabelMap,
    table: &ClassTable,
) -> Result<(f64, Array3<f64>)> {
    let (c, h, w) = scores.dim();
    if (h, w) != gt.dims() {
        return Err(Error::Shape(format!(
            "scores are {h}x{w}, labels are {}x{}",
            gt.height(),
            gt.width()
        )));
    }
    if c != table.num_scored() {
        return Err(Error::Shape(format!(
            "scores have {c} classes, table scores {}",
            table.num_scored()
        )));
    }
    let mut grad = Array3::zeros((c, h, w));
    let mut total = 0.0;
    let mut n = 0usize;
    let mut probs = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            let id = gt.get(y, x);
            if table.is_unknown(id) {
                continue;
            }
            let target = table.channel_of(id).ok_or_else(|| Error::ClassId {
                id,
                reason: "not defined by the class table".into(),
            })?;
            let max = (0..c)
                .map(|k| scores[[k, y, x]])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (k, p) in probs.iter_mut().enumerate() {
                *p = (scores[[k, y, x]] - max).exp();
                z += *p;
            }
            total += z.ln() - (scores[[target, y, x]] - max);
            for (k, p) in probs.iter().enumerate() {
                grad[[k, y, x]] = p / z;
            }
            grad[[target, y, x]] -= 1.0;
            n += 1;
        }
    }
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / n as f64;
    grad *= inv;
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClassInfo;

    fn table() -> ClassTable {
        let classes = (0..4)
            .map(|i| ClassInfo {
                id: i,
                name: format!("c{i}"),
                color: [i; 3],
            })
            .collect();
        ClassTable::new(classes, 3).unwrap()
    }

    #[test]
    fn uniform_two_class() {
        let classes = (0..3)
            .map(|i| ClassInfo {
                id: i,
                name: format!("c{i}"),
                color: [i; 3],
            })
            .collect();
        let t = ClassTable::new(classes, 2).unwrap();
        let s = Array3::zeros((2, 1, 1));
        let (loss, g) =
            masked_cross_entropy(s.view(), &LabelMap::filled(1, 1, 0).unwrap(), &t).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g[[0, 0, 0]], -0.5);
        assert_eq!(g[[1, 0, 0]], 0.5);
    }

    #[test]
    fn all_unknown_is_zero() {
        let t = table();
        let s = Array3::from_elem((3, 2, 2), 1.7);
        let (loss, g) =
            masked_cross_entropy(s.view(), &LabelMap::filled(2, 2, 3).unwrap(), &t).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unknown_pixels_have_no_gradient() {
        let t = table();
        let s = Array3::from_shape_fn((3, 2, 2), |(c, y, x)| (c * 4 + y * 2 + x) as f64 * 0.3);
        let gt = LabelMap::new(2, 2, vec![0, 3, 1, 2]).unwrap();
        let (_, g) = masked_cross_entropy(s.view(), &gt, &t).unwrap();
        assert!((0..3).all(|c| g[[c, 0, 1]] == 0.0));
        // softmax gradient sums to zero per scored pixel
        for (y, x) in [(0, 0), (1, 0), (1, 1)] {
            let sum: f64 = (0..3).map(|c| g[[c, y, x]]).sum();
            assert!(sum.abs() < 1e-15);
        }
    }

    #[test]
    fn large_scores_stay_finite() {
        let t = table();
        let mut s = Array3::zeros((3, 1, 1));
        s[[0, 0, 0]] = 1e4;
        let (loss, g) =
            masked_cross_entropy(s.view(), &LabelMap::filled(1, 1, 1).unwrap(), &t).unwrap();
        assert!((loss - 1e4).abs() < 1e-9);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dims_mismatch() {
        let t = table();
        let s = Array3::zeros((3, 2, 2));
        assert!(masked_cross_entropy(s.view(), &LabelMap::filled(2, 3, 0).unwrap(), &t).is_err());
        let s = Array3::zeros((2, 2, 2));
        assert!(masked_cross_entropy(s.view(), &LabelMap::filled(2, 2, 0).unwrap(), &t).is_err());
    }
}
