//! Small fully-convolutional networks with hand-written backward passes.
//!
//! Tensors are `(channels, height, width)` arrays of `f64`. Convolutions
//! are lowered to matrix products via [`layers::im2col`].

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod net;
pub mod optim;
pub mod params;
pub mod spec;

pub type Tensor = ndarray::Array3<f64>;

pub use loss::masked_cross_entropy;
pub use net::{backward, forward, infer, ForwardCache, Gradients};
pub use optim::{sgd_step, Sgd, TrainConfig};
pub use params::{init_params, ConvParams, NetParams};
pub use spec::{LayerSpec, NetSpec};
