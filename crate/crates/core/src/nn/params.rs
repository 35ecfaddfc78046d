use ndarray::{Array1, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::NetSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    /// `(out, in, k, k)`
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

/// Weights and biases of every conv layer, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub convs: Vec<ConvParams>,
}

impl NetParams {
    pub fn zeros(spec: &NetSpec) -> Self {
        Self {
            convs: spec
                .conv_layers()
                .map(|(i, o, k)| ConvParams {
                    weight: Array4::zeros((o, i, k, k)),
                    bias: Array1::zeros(o),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams {
                    weight: Array4::zeros(c.weight.dim()),
                    bias: Array1::zeros(c.bias.dim()),
                })
                .collect(),
        }
    }

    pub fn check_shapes(&self, spec: &NetSpec) -> Result<()> {
        let expected: Vec<_> = spec.conv_layers().collect();
        if expected.len() != self.convs.len() {
            return Err(Error::Shape(format!(
                "spec has {} conv layers, params have {}",
                expected.len(),
                self.convs.len()
            )));
        }
        for (n, ((i, o, k), c)) in expected.iter().zip(&self.convs).enumerate() {
            if c.weight.dim() != (*o, *i, *k, *k) || c.bias.len() != *o {
                return Err(Error::Shape(format!(
                    "conv {n}: expected weight {:?}, got {:?}",
                    (o, i, k, k),
                    c.weight.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &NetParams) -> bool {
        self.convs.len() == other.convs.len()
            && self
                .convs
                .iter()
                .zip(&other.convs)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.dim() == b.bias.dim())
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &NetParams) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            a.weight.scaled_add(alpha, &b.weight);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for c in &mut self.convs {
            c.weight *= alpha;
            c.bias *= alpha;
        }
    }

    pub fn norm(&self) -> f64 {
        self.convs
            .iter()
            .map(|c| {
                c.weight.iter().map(|v| v * v).sum::<f64>()
                    + c.bias.iter().map(|v| v * v).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.convs
            .iter()
            .all(|c| c.weight.iter().chain(c.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn num_values(&self) -> usize {
        self.convs
            .iter()
            .map(|c| c.weight.len() + c.bias.len())
            .sum()
    }

    /// `(name, shape, values)` for every tensor, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::with_capacity(self.convs.len() * 2);
        for (i, c) in self.convs.iter().enumerate() {
            out.push((
                format!("conv{i}.weight"),
                c.weight.shape().to_vec(),
                c.weight.iter().copied().collect(),
            ));
            out.push((
                format!("conv{i}.bias"),
                c.bias.shape().to_vec(),
                c.bias.to_vec(),
            ));
        }
        out
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
pub fn init_params(spec: &NetSpec, seed: u64) -> NetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetParams::zeros(spec);
    for conv in &mut params.convs {
        let (_, i, k, _) = conv.weight.dim();
        let std = (2.0 / (i * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        conv.weight.mapv_inplace(|_| normal.sample(&mut rng));
    }
    params
}
