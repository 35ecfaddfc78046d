//! Sub-N control: how well can ground truth itself survive stride-N
//! nearest-neighbour subsampling and upscaling?
//!
//! This bounds any method that labels a downsampled frame and upsamples
//! the result.

use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::resample::subsample_round_trip;
use crate::types::{ClassTable, LabelMap};

pub const DEFAULT_STRIDES: [usize; 5] = [2, 4, 8, 16, 32];

#[derive(Clone, Debug, PartialEq)]
pub struct SubNReport {
    pub stride: usize,
    pub metrics: MetricsReport,
}

/// Round-trip every map at a single stride and accumulate one matrix.
pub fn subn_confusion(
    dataset: &[&LabelMap],
    stride: usize,
    table: &ClassTable,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::for_table(table);
    for gt in dataset {
        cm.accumulate_allow_unknown(gt, &subsample_round_trip(gt, stride)?, table)?;
    }
    Ok(cm)
}

/// Sub-N oracle over a dataset for each stride.
pub fn run_subn(
    dataset: &[&LabelMap],
    strides: &[usize],
    table: &ClassTable,
) -> Result<Vec<SubNReport>> {
    if dataset.is_empty() {
        return Err(Error::Empty("sub-N needs at least one label map".into()));
    }
    if let Some(&s) = strides.iter().find(|&&s| s < 1) {
        return Err(Error::InvalidArgument(format!("stride {s} is below 1")));
    }
    strides
        .iter()
        .map(|&stride| {
            let cm = subn_confusion(dataset, stride, table)?;
            Ok(SubNReport {
                stride,
                metrics: MetricsReport::from_confusion(&cm, table)?,
            })
        })
        .collect()
}
