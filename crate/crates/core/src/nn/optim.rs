use serde::{Deserialize, Serialize};

use super::params::NetParams;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Rescale each step's gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
    /// Train on every `frame_stride`-th labeled frame.
    pub frame_stride: usize,
    /// Frames a joint-training loss is backpropagated through the recurrence.
    pub unroll: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 10,
            batch_size: 4,
            seed: 0,
            clip_norm: Some(5.0),
            frame_stride: 1,
            unroll: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.epochs < 1 || self.batch_size < 1 || self.frame_stride < 1 || self.unroll < 1 {
            return Err(Error::Config(
                "epochs, batch_size, frame_stride and unroll must be at least 1".into(),
            ));
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Momentum SGD: `v = momentum * v + g; p -= lr * v`.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    velocity: Option<NetParams>,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(
        &mut self,
        params: &mut NetParams,
        grads: &NetParams,
        config: &TrainConfig,
    ) -> Result<()> {
        if !params.same_shape(grads) {
            return Err(Error::Shape(
                "gradient shapes do not match parameters".into(),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let mut g = grads.clone();
        if let Some(max) = config.clip_norm {
            let n = g.norm();
            if n > max {
                g.scale(max / n);
            }
        }
        let v = self.velocity.get_or_insert_with(|| params.zeros_like());
        if !v.same_shape(params) {
            return Err(Error::Shape(
                "optimizer state belongs to another network".into(),
            ));
        }
        v.scale(config.momentum);
        v.add_scaled(1.0, &g);
        params.add_scaled(-config.learning_rate, v);
        Ok(())
    }
}

/// One momentum step on `params` with explicit velocity state.
pub fn sgd_step(
    params: &mut NetParams,
    grads: &NetParams,
    state: &mut Sgd,
    config: &TrainConfig,
) -> Result<()> {
    state.step(params, grads, config)
}
