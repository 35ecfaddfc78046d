//! Exact-count evaluation: confusion matrices, per-class IoU, mIoU,
//! class-average accuracy and annotation density statistics.
//!
//! All counting is done in `u64`; floating point only appears when a ratio
//! is reported. Pixels whose ground truth is the unknown class are skipped.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{ClassId, ClassTable, LabelMap, VideoSequence};

/// Row = ground-truth channel, column = predicted channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    /// Per gt channel: pixels predicted as the unknown class. Only the
    /// sub-N oracle produces these; they count as false negatives.
    unscored: Vec<u64>,
}

/// True positives, false positives and false negatives of one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    pub fn iou(&self) -> Option<f64> {
        let denom = self.tp + self.fp + self.fn_;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        let denom = self.tp + self.fn_;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            unscored: vec![0; num_classes],
        }
    }

    pub fn for_table(table: &ClassTable) -> Self {
        Self::new(table.num_scored())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.unscored.iter().sum::<u64>()
    }

    /// Add one gt/prediction pair. Unknown ground-truth pixels are skipped;
    /// an unknown id in the prediction is an error.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap, table: &ClassTable) -> Result<()> {
        self.accumulate_inner(gt, pred, table, false)
    }

    /// Like [`accumulate`](Self::accumulate), but an unknown prediction at a
    /// scored gt pixel is recorded as a false negative instead of an error.
    pub fn accumulate_allow_unknown(
        &mut self,
        gt: &LabelMap,
        pred: &LabelMap,
        table: &ClassTable,
    ) -> Result<()> {
        self.accumulate_inner(gt, pred, table, true)
    }

    fn accumulate_inner(
        &mut self,
        gt: &LabelMap,
        pred: &LabelMap,
        table: &ClassTable,
        allow_unknown: bool,
    ) -> Result<()> {
        if gt.dims() != pred.dims() {
            return Err(Error::Shape(format!(
                "ground truth is {:?}, prediction is {:?}",
                gt.dims(),
                pred.dims()
            )));
        }
        if table.num_scored() != self.num_classes {
            return Err(Error::Shape(format!(
                "confusion matrix has {} classes, table scores {}",
                self.num_classes,
                table.num_scored()
            )));
        }
        let channel = |id: ClassId, what: &str| {
            table.channel_of(id).ok_or_else(|| Error::ClassId {
                id,
                reason: if table.contains(id) {
                    format!("unknown class in {what}")
                } else {
                    format!("not defined by the class table ({what})")
                },
            })
        };
        let mut local = vec![0u64; self.counts.len()];
        let mut unscored = vec![0u64; self.num_classes];
        for (&g, &p) in gt.as_slice().iter().zip(pred.as_slice()) {
            let pc = if allow_unknown && table.is_unknown(p) {
                None
            } else {
                Some(channel(p, "prediction")?)
            };
            if table.is_unknown(g) {
                continue;
            }
            let gc = channel(g, "ground truth")?;
            match pc {
                Some(pc) => local[gc * self.num_classes + pc] += 1,
                None => unscored[gc] += 1,
            }
        }
        for (c, l) in self.counts.iter_mut().zip(local) {
            *c += l;
        }
        for (c, l) in self.unscored.iter_mut().zip(unscored) {
            *c += l;
        }
        Ok(())
    }

    /// Entrywise sum; used to combine partial accumulations.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.unscored.iter_mut().zip(&other.unscored) {
            *a += b;
        }
        Ok(())
    }

    pub fn class_counts(&self, c: usize) -> ClassCounts {
        let n = self.num_classes;
        let tp = self.get(c, c);
        let row: u64 = (0..n).map(|j| self.get(c, j)).sum();
        let col: u64 = (0..n).map(|i| self.get(i, c)).sum();
        ClassCounts {
            tp,
            fp: col - tp,
            fn_: row - tp + self.unscored[c],
        }
    }

    /// Per-channel IoU; `None` where TP + FP + FN is zero.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|c| self.class_counts(c).iou())
            .collect()
    }

    pub fn miou(&self) -> Result<f64> {
        mean_present(&self.iou())
    }

    /// Per-channel recall; `None` where the ground-truth row is empty.
    pub fn accuracy(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|c| self.class_counts(c).accuracy())
            .collect()
    }

    pub fn class_avg_accuracy(&self) -> Result<f64> {
        mean_present(&self.accuracy())
    }
}

/// Unweighted mean of the present values, summed in index order.
pub fn mean_present(values: &[Option<f64>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values.iter().flatten() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoScoredClasses);
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassScore {
    pub id: ClassId,
    pub name: String,
    pub iou: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassScore>,
    pub miou: f64,
    pub class_avg_accuracy: f64,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix, table: &ClassTable) -> Result<Self> {
        if cm.num_classes() != table.num_scored() {
            return Err(Error::Shape(format!(
                "confusion matrix has {} classes, table scores {}",
                cm.num_classes(),
                table.num_scored()
            )));
        }
        let iou = cm.iou();
        let acc = cm.accuracy();
        let classes = (0..cm.num_classes())
            .map(|c| {
                let id = table.class_of_channel(c);
                ClassScore {
                    id,
                    name: table.info(id).map(|i| i.name.clone()).unwrap_or_default(),
                    iou: iou[c],
                    accuracy: acc[c],
                }
            })
            .collect();
        Ok(Self {
            classes,
            miou: mean_present(&iou)?,
            class_avg_accuracy: mean_present(&acc)?,
        })
    }

    pub fn iou_of(&self, id: ClassId) -> Option<f64> {
        self.classes.iter().find(|c| c.id == id).and_then(|c| c.iou)
    }
}

/// Evaluate predictions against ground truth, pairwise.
pub fn evaluate<'a>(
    pairs: impl IntoIterator<Item = (&'a LabelMap, &'a LabelMap)>,
    table: &ClassTable,
) -> Result<MetricsReport> {
    let mut cm = ConfusionMatrix::for_table(table);
    for (gt, pred) in pairs {
        cm.accumulate(gt, pred, table)?;
    }
    MetricsReport::from_confusion(&cm, table)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityReport {
    /// Annotated (non-unknown) pixels over all pixels of the labeled frames.
    pub spatial_density: f64,
    /// Annotated frames per second.
    pub temporal_density: f64,
    pub annotated_pixels: u64,
    pub total_pixels: u64,
    pub annotated_frames: usize,
    pub total_frames: usize,
}

/// Fraction of labeled pixels that are not the unknown class.
pub fn spatial_density(labels: &[&LabelMap], table: &ClassTable) -> Result<f64> {
    let (annotated, total) = annotated_pixels(labels, table)?;
    Ok(annotated as f64 / total as f64)
}

fn annotated_pixels(labels: &[&LabelMap], table: &ClassTable) -> Result<(u64, u64)> {
    if labels.is_empty() {
        return Err(Error::Empty(
            "spatial density needs at least one label map".into(),
        ));
    }
    let mut annotated = 0u64;
    let mut total = 0u64;
    for l in labels {
        total += l.as_slice().len() as u64;
        annotated += l
            .as_slice()
            .iter()
            .filter(|&&id| !table.is_unknown(id))
            .count() as u64;
    }
    Ok((annotated, total))
}

/// Tolerance, in frame periods, within which a timestamp span is snapped to
/// a whole number of frames.
const FRAME_SNAP: f64 = 1e-6;

/// `(annotated frames - 1) / (timestamp span of the annotated frames)`, in Hz.
///
/// The span is measured in periods of the sequence's frame clock and
/// snapped to a whole number of frames when it lies within [`FRAME_SNAP`]
/// of one, so `i / rate` timestamps give an exact rate.
pub fn temporal_density(seq: &VideoSequence) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::Empty(
            "temporal density needs at least 2 frames".into(),
        ));
    }
    let annotated: Vec<f64> = seq
        .frames
        .iter()
        .filter(|f| f.label.is_some())
        .map(|f| f.timestamp)
        .collect();
    if annotated.len() < 2 {
        return Ok(0.0);
    }
    let span = annotated[annotated.len() - 1] - annotated[0];
    let intervals = (annotated.len() - 1) as f64;
    let rate = seq.frame_rate;
    if rate.is_finite() && rate > 0.0 {
        let periods = span * rate;
        let snapped = periods.round();
        if snapped >= 1.0 && (periods - snapped).abs() <= FRAME_SNAP {
            if snapped == intervals {
                return Ok(rate);
            }
            return Ok(intervals * rate / snapped);
        }
    }
    if span <= 0.0 {
        return Err(Error::InvalidArgument(
            "annotated timestamps do not increase".into(),
        ));
    }
    Ok(intervals / span)
}

/// Density over a whole dataset: spatial density over every label map,
/// temporal density as the mean over sequences with at least 2 frames.
pub fn density_report(sequences: &[VideoSequence], table: &ClassTable) -> Result<DensityReport> {
    let labels: Vec<&LabelMap> = sequences.iter().flat_map(|s| s.labels()).collect();
    let (annotated_pixels, total_pixels) = annotated_pixels(&labels, table)?;
    let rates = sequences
        .iter()
        .filter(|s| s.len() >= 2)
        .map(temporal_density)
        .collect::<Result<Vec<_>>>()?;
    if rates.is_empty() {
        return Err(Error::Empty(
            "temporal density needs a sequence with at least 2 frames".into(),
        ));
    }
    let temporal_density = if rates.iter().all(|r| *r == rates[0]) {
        rates[0]
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    };
    Ok(DensityReport {
        spatial_density: annotated_pixels as f64 / total_pixels as f64,
        temporal_density,
        annotated_pixels,
        total_pixels,
        annotated_frames: labels.len(),
        total_frames: sequences.iter().map(|s| s.len()).sum(),
    })
}
