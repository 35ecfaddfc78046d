//! Budget-aware semantic video segmentation.
//!
//! A large *priming* network labels keyframes; in between, a small
//! *approximating* network labels a downsampled frame and a thin
//! *ensemble* network fuses its upsampled scores with the previous frame's
//! scores. The priming period trades runtime against accuracy.

#[cfg(feature = "cli")]
pub mod cli;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod resample;
pub mod subn;
pub mod synthgen;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    argmax_labels, validate_sequence, ClassId, ClassInfo, ClassTable, Frame, Image, LabelMap,
    ScoreMap, VideoSequence,
};
