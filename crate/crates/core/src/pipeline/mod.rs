//! Keyframe scheduling: the priming network labels every k-th frame, the
//! approximating and ensemble networks carry the scores forward in between.

mod budget;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::nn::{infer, init_params, NetParams, NetSpec, Tensor};
use crate::resample::{bilinear, downsample_image};
use crate::types::{argmax_labels, ClassTable, Image, LabelMap, ScoreMap, VideoSequence};

pub use budget::{amortized_relative_runtime, budget_curve, calibrate, BudgetRow, CostModel};
pub use train::{
    blend_ensemble, passthrough_ensemble, train_approximating, train_joint, train_priming,
    JointOutcome, TrainReport,
};

/// How often the priming network runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PeriodRepr", into = "PeriodRepr")]
pub enum PrimingPeriod {
    /// Frames `0, k, 2k, ...`.
    Every(usize),
    /// Frame 0 only (k = infinity).
    FirstOnly,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PeriodRepr {
    Int(u64),
    Text(String),
}

impl TryFrom<PeriodRepr> for PrimingPeriod {
    type Error = Error;

    fn try_from(r: PeriodRepr) -> Result<Self> {
        match r {
            PeriodRepr::Int(k) => PrimingPeriod::every(k as usize),
            PeriodRepr::Text(s) => s.parse(),
        }
    }
}

impl From<PrimingPeriod> for PeriodRepr {
    fn from(p: PrimingPeriod) -> Self {
        match p {
            PrimingPeriod::Every(k) => PeriodRepr::Int(k as u64),
            PrimingPeriod::FirstOnly => PeriodRepr::Text("inf".into()),
        }
    }
}

impl PrimingPeriod {
    pub fn every(k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidArgument(
                "priming period must be at least 1".into(),
            ));
        }
        Ok(PrimingPeriod::Every(k))
    }

    pub fn is_primed(self, t: usize) -> bool {
        match self {
            PrimingPeriod::Every(k) => t.is_multiple_of(k),
            PrimingPeriod::FirstOnly => t == 0,
        }
    }

    /// Number of primed frames among the first `len`.
    pub fn primed_count(self, len: usize) -> usize {
        match self {
            PrimingPeriod::Every(k) => len.div_ceil(k),
            PrimingPeriod::FirstOnly => len.min(1),
        }
    }
}

impl FromStr for PrimingPeriod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(PrimingPeriod::FirstOnly),
            t => {
                let k = t.parse::<usize>().map_err(|_| {
                    Error::InvalidArgument(format!(
                        "priming period must be a positive integer or 'inf', got '{s}'"
                    ))
                })?;
                PrimingPeriod::every(k)
            }
        }
    }
}

impl fmt::Display for PrimingPeriod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrimingPeriod::Every(k) => write!(f, "{k}"),
            PrimingPeriod::FirstOnly => f.write_str("inf"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub period: PrimingPeriod,
    /// Shrink factor of the approximating network's input.
    #[serde(default = "default_factor")]
    pub downsample_factor: usize,
}

fn default_factor() -> usize {
    4
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            period: PrimingPeriod::Every(5),
            downsample_factor: default_factor(),
        }
    }
}

impl ScheduleConfig {
    pub fn new(period: PrimingPeriod, downsample_factor: usize) -> Result<Self> {
        let s = Self {
            period,
            downsample_factor,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.period, PrimingPeriod::Every(0)) {
            return Err(Error::InvalidArgument(
                "priming period must be at least 1".into(),
            ));
        }
        if self.downsample_factor < 1 {
            return Err(Error::InvalidArgument(
                "downsample factor must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetSpec,
    pub params: NetParams,
}

impl Network {
    pub fn new(spec: NetSpec, params: NetParams) -> Result<Self> {
        spec.validate()?;
        params.check_shapes(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn init(spec: NetSpec, seed: u64) -> Self {
        let params = init_params(&spec, seed);
        Self { spec, params }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub priming: Network,
    pub approximating: Network,
    pub ensemble: Network,
}

impl Networks {
    /// Freshly initialised default architectures for `classes` scored classes.
    pub fn default_init(classes: usize, seed: u64) -> Self {
        Self {
            priming: Network::init(NetSpec::default_priming(classes), seed),
            approximating: Network::init(
                NetSpec::default_approximating(classes),
                seed.wrapping_add(1),
            ),
            ensemble: Network::init(NetSpec::default_ensemble(classes), seed.wrapping_add(2)),
        }
    }

    pub fn check(&self, table: &ClassTable) -> Result<()> {
        check_roles(&self.priming, &self.approximating, &self.ensemble, table)
    }
}

pub(crate) fn check_roles(
    priming: &Network,
    approx: &Network,
    ensemble: &Network,
    table: &ClassTable,
) -> Result<()> {
    let c = table.num_scored();
    let role = |name: &str, net: &Network, input: usize, aux: Option<usize>| -> Result<()> {
        let out = net.spec.validate()?;
        net.params.check_shapes(&net.spec)?;
        if out != c || net.spec.input_channels != input || net.spec.aux_channels() != aux {
            return Err(Error::Shape(format!(
                "{name} network maps {} channels (aux {:?}) to {out}; expected {input} (aux {aux:?}) to {c}",
                net.spec.input_channels,
                net.spec.aux_channels()
            )));
        }
        Ok(())
    };
    role("priming", priming, 3, None)?;
    role("approximating", approx, 3, None)?;
    role("ensemble", ensemble, c, Some(c))
}

/// Resize to `h x w` unless already there.
fn fit(y: Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (_, yh, yw) = y.dim();
    if (yh, yw) == (h, w) {
        Ok(y)
    } else {
        bilinear(y.view(), h, w)
    }
}

/// Priming scores at frame resolution.
pub fn prime(net: &Network, image: &Image) -> Result<Tensor> {
    let (h, w) = image.dims();
    fit(
        infer(&net.spec, &net.params, image.data().view(), None)?,
        h,
        w,
    )
}

/// Approximating scores on the downsampled frame, bilinearly upsampled to
/// frame resolution.
pub fn approximate(net: &Network, image: &Image, factor: usize) -> Result<Tensor> {
    let (h, w) = image.dims();
    let small = downsample_image(image, factor)?;
    let a = infer(&net.spec, &net.params, small.data().view(), None)?;
    bilinear(a.view(), h, w)
}

/// Ensemble of the previous frame's scores with the upsampled approximation.
pub fn fuse(net: &Network, previous: &Tensor, upsampled: &Tensor) -> Result<Tensor> {
    infer(
        &net.spec,
        &net.params,
        previous.view(),
        Some(upsampled.view()),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FramePath {
    Primed,
    Approximated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub scores: ScoreMap,
    pub labels: LabelMap,
    pub path: FramePath,
    pub cost: f64,
}

/// Recurrent state carried between frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineState {
    pub previous_scores: Tensor,
}

/// Frame-by-frame driver of the schedule.
pub struct Segmenter<'a> {
    nets: &'a Networks,
    sched: ScheduleConfig,
    costs: &'a CostModel,
    table: &'a ClassTable,
    state: Option<PipelineState>,
    t: usize,
}

impl<'a> Segmenter<'a> {
    pub fn new(
        nets: &'a Networks,
        sched: ScheduleConfig,
        costs: &'a CostModel,
        table: &'a ClassTable,
    ) -> Result<Self> {
        nets.check(table)?;
        sched.validate()?;
        costs.validate()?;
        Ok(Self {
            nets,
            sched,
            costs,
            table,
            state: None,
            t: 0,
        })
    }

    pub fn state(&self) -> Option<&PipelineState> {
        self.state.as_ref()
    }

    pub fn step(&mut self, image: &Image) -> Result<FrameResult> {
        let (scores, path, cost) = match &self.state {
            Some(s) if !self.sched.period.is_primed(self.t) => {
                let (_, h, w) = s.previous_scores.dim();
                if image.dims() != (h, w) {
                    return Err(Error::Shape(format!(
                        "frame {} is {}x{}, earlier frames are {h}x{w}",
                        self.t,
                        image.height(),
                        image.width()
                    )));
                }
                let up = approximate(
                    &self.nets.approximating,
                    image,
                    self.sched.downsample_factor,
                )?;
                let scores = fuse(&self.nets.ensemble, &s.previous_scores, &up)?;
                (
                    scores,
                    FramePath::Approximated,
                    self.costs.cost_approx + self.costs.cost_ensemble,
                )
            }
            _ => (
                prime(&self.nets.priming, image)?,
                FramePath::Primed,
                self.costs.cost_prime,
            ),
        };
        let scores = ScoreMap::new(scores)?;
        let labels = argmax_labels(&scores, self.table)?;
        self.state = Some(PipelineState {
            previous_scores: scores.data().clone(),
        });
        self.t += 1;
        Ok(FrameResult {
            scores,
            labels,
            path,
            cost,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceOutput {
    pub frames: Vec<FrameResult>,
}

impl SequenceOutput {
    pub fn labels(&self) -> Vec<&LabelMap> {
        self.frames.iter().map(|f| &f.labels).collect()
    }

    pub fn cost_trace(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.cost).collect()
    }

    pub fn total_cost(&self) -> f64 {
        self.frames.iter().map(|f| f.cost).sum()
    }
}

/// Run the schedule over a whole sequence in frame order.
pub fn segment_sequence(
    seq: &VideoSequence,
    nets: &Networks,
    sched: ScheduleConfig,
    costs: &CostModel,
    table: &ClassTable,
) -> Result<SequenceOutput> {
    if seq.is_empty() {
        return Err(Error::Empty("cannot segment an empty sequence".into()));
    }
    let mut seg = Segmenter::new(nets, sched, costs, table)?;
    let frames = seq
        .frames
        .iter()
        .map(|f| seg.step(&f.image))
        .collect::<Result<_>>()?;
    Ok(SequenceOutput { frames })
}

/// Labels from the approximating network alone, frame by frame.
pub fn approximate_sequence(
    seq: &VideoSequence,
    net: &Network,
    factor: usize,
    table: &ClassTable,
) -> Result<Vec<LabelMap>> {
    seq.frames
        .iter()
        .map(|f| argmax_labels(&ScoreMap::new(approximate(net, &f.image, factor)?)?, table))
        .collect()
}

/// Labels from the priming network alone, frame by frame.
pub fn prime_sequence(
    seq: &VideoSequence,
    net: &Network,
    table: &ClassTable,
) -> Result<Vec<LabelMap>> {
    seq.frames
        .iter()
        .map(|f| argmax_labels(&ScoreMap::new(prime(net, &f.image)?)?, table))
        .collect()
}

/// Confusion per frame index, merged over sequences. Frames without a
/// label are skipped; index `t` of the result covers frame `t` of every
/// sequence long enough to have one.
pub fn frame_confusions(
    seqs: &[VideoSequence],
    preds: &[Vec<LabelMap>],
    table: &ClassTable,
) -> Result<Vec<ConfusionMatrix>> {
    if seqs.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} sequences but {} prediction lists",
            seqs.len(),
            preds.len()
        )));
    }
    let longest = seqs.iter().map(VideoSequence::len).max().unwrap_or(0);
    let mut out = vec![ConfusionMatrix::for_table(table); longest];
    for (seq, pred) in seqs.iter().zip(preds) {
        if seq.len() != pred.len() {
            return Err(Error::Shape(format!(
                "sequence has {} frames, prediction has {}",
                seq.len(),
                pred.len()
            )));
        }
        for (t, (frame, p)) in seq.frames.iter().zip(pred).enumerate() {
            if let Some(gt) = &frame.label {
                out[t].accumulate(gt, p, table)?;
            }
        }
    }
    Ok(out)
}

/// All frame confusions merged.
pub fn total_confusion(
    per_frame: &[ConfusionMatrix],
    table: &ClassTable,
) -> Result<ConfusionMatrix> {
    let mut total = ConfusionMatrix::for_table(table);
    for cm in per_frame {
        total.merge(cm)?;
    }
    Ok(total)
}

/// Order-preserving map, parallel when the `parallel` feature is on.
pub(crate) fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
