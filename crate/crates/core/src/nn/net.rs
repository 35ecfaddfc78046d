use ndarray::{Array2, ArrayView3};

use super::layers;
use super::params::NetParams;
use super::spec::{LayerSpec, NetSpec};
use super::Tensor;
use crate::error::{Error, Result};

/// Activations saved by [`forward`] for [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input of every layer.
    inputs: Vec<Tensor>,
    /// Unfolded inputs of the conv layers, in conv order.
    cols: Vec<Array2<f64>>,
    spec_hash: [u8; 32],
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: NetParams,
    pub input: Tensor,
    pub aux: Option<Tensor>,
}

fn check_inputs(
    spec: &NetSpec,
    params: &NetParams,
    input: &ArrayView3<'_, f64>,
    aux: Option<&ArrayView3<'_, f64>>,
) -> Result<()> {
    spec.validate()?;
    params.check_shapes(spec)?;
    if !params.is_finite() {
        return Err(Error::NonFinite("network parameters".into()));
    }
    if input
        .iter()
        .chain(aux.iter().flat_map(|a| a.iter()))
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("network input".into()));
    }
    let (c, h, w) = input.dim();
    if c != spec.input_channels {
        return Err(Error::Shape(format!(
            "network expects {} input channels, got {c}",
            spec.input_channels
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::Shape("empty network input".into()));
    }
    match (spec.aux_channels(), aux) {
        (Some(n), Some(a)) if a.dim().0 != n => Err(Error::Shape(format!(
            "auxiliary input needs {n} channels, got {}",
            a.dim().0
        ))),
        (Some(_), None) => Err(Error::Shape("network needs an auxiliary input".into())),
        (None, Some(_)) => Err(Error::Shape("network takes no auxiliary input".into())),
        _ => Ok(()),
    }
}

fn run(
    spec: &NetSpec,
    params: &NetParams,
    input: ArrayView3<'_, f64>,
    aux: Option<ArrayView3<'_, f64>>,
    keep: bool,
) -> Result<(Tensor, Option<ForwardCache>)> {
    check_inputs(spec, params, &input, aux.as_ref())?;
    let mut inputs = Vec::new();
    let mut cols_cache = Vec::new();
    let mut x = input.to_owned();
    let mut conv = 0;
    for layer in &spec.layers {
        let next = match *layer {
            LayerSpec::Conv { dilation, .. } => {
                let (y, cols) = layers::conv_forward(x.view(), &params.convs[conv], dilation);
                conv += 1;
                if keep {
                    cols_cache.push(cols);
                }
                y
            }
            LayerSpec::Relu => layers::relu_forward(&x),
            LayerSpec::Downsample2 => layers::downsample2_forward(x.view()),
            LayerSpec::BilinearUp { factor } => layers::upsample_forward(x.view(), factor)?,
            LayerSpec::ConcatInput { .. } => {
                layers::concat_forward(&x, aux.expect("checked above"))?
            }
        };
        if keep {
            inputs.push(std::mem::replace(&mut x, next));
        } else {
            x = next;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network output".into()));
    }
    let cache = keep.then(|| ForwardCache {
        inputs,
        cols: cols_cache,
        spec_hash: spec.hash(),
    });
    Ok((x, cache))
}

/// Forward pass keeping the activations needed by [`backward`].
pub fn forward(
    spec: &NetSpec,
    params: &NetParams,
    input: ArrayView3<'_, f64>,
    aux: Option<ArrayView3<'_, f64>>,
) -> Result<(Tensor, ForwardCache)> {
    let (y, cache) = run(spec, params, input, aux, true)?;
    Ok((y, cache.expect("kept")))
}

/// Forward pass without a cache.
pub fn infer(
    spec: &NetSpec,
    params: &NetParams,
    input: ArrayView3<'_, f64>,
    aux: Option<ArrayView3<'_, f64>>,
) -> Result<Tensor> {
    Ok(run(spec, params, input, aux, false)?.0)
}

/// Exact gradients of the forward composition w.r.t. parameters, the
/// input, and the auxiliary input (if any).
pub fn backward(
    spec: &NetSpec,
    params: &NetParams,
    cache: &ForwardCache,
    grad_out: &Tensor,
) -> Result<Gradients> {
    if cache.spec_hash != spec.hash() || cache.inputs.len() != spec.layers.len() {
        return Err(Error::Shape(
            "forward cache does not belong to this network".into(),
        ));
    }
    let mut grads = NetParams::zeros(spec);
    let mut conv = params.convs.len();
    let mut aux_grad = None;
    let mut g = grad_out.clone();
    for (layer, x) in spec.layers.iter().zip(&cache.inputs).rev() {
        let (c, h, w) = x.dim();
        g = match *layer {
            LayerSpec::Conv { dilation, .. } => {
                conv -= 1;
                let (pg, dx) =
                    layers::conv_backward(&g, &cache.cols[conv], &params.convs[conv], c, dilation);
                grads.convs[conv] = pg;
                dx
            }
            LayerSpec::Relu => layers::relu_backward(&g, x),
            LayerSpec::Downsample2 => layers::downsample2_backward(&g, h, w),
            LayerSpec::BilinearUp { .. } => layers::upsample_backward(&g, h, w)?,
            LayerSpec::ConcatInput { .. } => {
                let (dx, daux) = layers::concat_backward(&g, c);
                aux_grad = Some(daux);
                dx
            }
        };
    }
    Ok(Gradients {
        params: grads,
        input: g,
        aux: aux_grad,
    })
}
