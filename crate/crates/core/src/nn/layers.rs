//! Forward and backward kernels for each layer kind, on `(channels, h, w)`
//! tensors.

use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis};

use super::params::ConvParams;
use super::Tensor;
use crate::error::{Error, Result};
use crate::resample;

/// Unfold a zero-padded, size-preserving `k x k` neighbourhood with
/// dilation `d` into a `(c * k * k, h * w)` matrix.
pub fn im2col(x: ArrayView3<'_, f64>, k: usize, d: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let half = (k / 2) as isize;
    let mut cols = Array2::zeros((c * k * k, h * w));
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("fresh array");
    let hw = h * w;
    for ci in 0..c {
        for ky in 0..k {
            let dy = (ky as isize - half) * d as isize;
            for kx in 0..k {
                let dx = (kx as isize - half) * d as isize;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cs[row * hw..(row + 1) * hw];
                let (x0, x1) = valid_range(w, dx);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let src = &xs[ci * hw + sy as usize * w..][..w];
                    let sx0 = (x0 as isize + dx) as usize;
                    dst[y * w + x0..y * w + x1].copy_from_slice(&src[sx0..sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: sum a `(c * k * k, h * w)` matrix back onto the input grid.
pub fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize, k: usize, d: usize) -> Tensor {
    let half = (k / 2) as isize;
    let mut out = Array3::zeros((c, h, w));
    let os = out.as_slice_mut().expect("fresh array");
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let hw = h * w;
    for ci in 0..c {
        for ky in 0..k {
            let dy = (ky as isize - half) * d as isize;
            for kx in 0..k {
                let dx = (kx as isize - half) * d as isize;
                let row = (ci * k + ky) * k + kx;
                let src = &cs[row * hw..(row + 1) * hw];
                let (x0, x1) = valid_range(w, dx);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let base = ci * hw + sy as usize * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    let dst = &mut os[base + sx0..base + sx0 + (x1 - x0)];
                    for (o, v) in dst.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *o += v;
                    }
                }
            }
        }
    }
    out
}

/// Output columns `[x0, x1)` whose shifted source `x + dx` lies inside `0..w`.
fn valid_range(w: usize, dx: isize) -> (usize, usize) {
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).clamp(0, w as isize) as usize;
    (x0.min(w), x1)
}

fn weight_matrix(p: &ConvParams) -> Array2<f64> {
    let (o, i, k, _) = p.weight.dim();
    p.weight
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((o, i * k * k))
        .expect("contiguous weight")
}

/// Returns the output and the unfolded input (kept for the backward pass).
pub fn conv_forward(
    x: ArrayView3<'_, f64>,
    p: &ConvParams,
    dilation: usize,
) -> (Tensor, Array2<f64>) {
    let (_, h, w) = x.dim();
    let (o, _, k, _) = p.weight.dim();
    let cols = im2col(x, k, dilation);
    let mut y = weight_matrix(p).dot(&cols);
    for (mut row, b) in y.axis_iter_mut(Axis(0)).zip(p.bias.iter()) {
        row += *b;
    }
    let y = y
        .into_shape_with_order((o, h, w))
        .expect("conv output shape");
    (y, cols)
}

/// Gradients w.r.t. the weights, bias and input of a conv layer.
pub fn conv_backward(
    grad_out: &Tensor,
    cols: &Array2<f64>,
    p: &ConvParams,
    in_channels: usize,
    dilation: usize,
) -> (ConvParams, Tensor) {
    let (o, h, w) = grad_out.dim();
    let (_, i, k, _) = p.weight.dim();
    let g = grad_out
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((o, h * w))
        .expect("grad shape");
    let dw = g
        .dot(&cols.t())
        .into_shape_with_order((o, i, k, k))
        .expect("weight grad shape");
    let db: Array1<f64> = g.sum_axis(Axis(1));
    let dcols = weight_matrix(p).t().dot(&g);
    let dx = col2im(&dcols, in_channels, h, w, k, dilation);
    (
        ConvParams {
            weight: dw,
            bias: db,
        },
        dx,
    )
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.mapv(|v| v.max(0.0))
}

/// Passes the gradient where the pre-activation was strictly positive.
pub fn relu_backward(grad_out: &Tensor, pre: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    g.zip_mut_with(pre, |g, &x| {
        if x <= 0.0 {
            *g = 0.0;
        }
    });
    g
}

pub fn downsample2_forward(x: ArrayView3<'_, f64>) -> Tensor {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Array3::zeros((c, oh, ow));
    for ch in 0..c {
        for y in 0..oh {
            let ys = 2 * y..(2 * y + 2).min(h);
            for xx in 0..ow {
                let xs = 2 * xx..(2 * xx + 2).min(w);
                let n = (ys.len() * xs.len()) as f64;
                out[[ch, y, xx]] = x.slice(s![ch, ys.clone(), xs]).sum() / n;
            }
        }
    }
    out
}

pub fn downsample2_backward(grad_out: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let (c, oh, ow) = grad_out.dim();
    let mut out = Array3::zeros((c, in_h, in_w));
    for ch in 0..c {
        for y in 0..oh {
            let ys = 2 * y..(2 * y + 2).min(in_h);
            for xx in 0..ow {
                let xs = 2 * xx..(2 * xx + 2).min(in_w);
                let n = (ys.len() * xs.len()) as f64;
                let g = grad_out[[ch, y, xx]] / n;
                out.slice_mut(s![ch, ys.clone(), xs]).fill(g);
            }
        }
    }
    out
}

pub fn upsample_forward(x: ArrayView3<'_, f64>, factor: usize) -> Result<Tensor> {
    let (_, h, w) = x.dim();
    resample::bilinear(x, h * factor, w * factor)
}

pub fn upsample_backward(grad_out: &Tensor, in_h: usize, in_w: usize) -> Result<Tensor> {
    resample::bilinear_adjoint(grad_out.view(), in_h, in_w)
}

pub fn concat_forward(x: &Tensor, aux: ArrayView3<'_, f64>) -> Result<Tensor> {
    let (_, h, w) = x.dim();
    let (_, ah, aw) = aux.dim();
    if (h, w) != (ah, aw) {
        return Err(Error::Shape(format!(
            "concatenated input is {ah}x{aw}, activations are {h}x{w}"
        )));
    }
    ndarray::concatenate(Axis(0), &[x.view(), aux]).map_err(|e| Error::Shape(e.to_string()))
}

/// Splits the gradient into the activation part and the auxiliary part.
pub fn concat_backward(grad_out: &Tensor, x_channels: usize) -> (Tensor, Tensor) {
    (
        grad_out.slice(s![..x_channels, .., ..]).to_owned(),
        grad_out.slice(s![x_channels.., .., ..]).to_owned(),
    )
}
