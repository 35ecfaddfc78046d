//! Browser demo: synthetic scene viewer, sub-N explorer and budget curve.
//!
//! Images cross the boundary as RGBA bytes, row-major.

use vidseg::metrics::ConfusionMatrix;
use vidseg::pipeline::{amortized_relative_runtime, CostModel, PrimingPeriod, ScheduleConfig};
use vidseg::resample::subsample_round_trip;
use vidseg::synthgen::{generate, SceneConfig};
use vidseg::{ClassTable, LabelMap};
use wasm_bindgen::prelude::*;

fn err(e: vidseg::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn label_rgba(labels: &LabelMap, table: &ClassTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.as_slice().len() * 4);
    for &id in labels.as_slice() {
        let c = table.info(id).map(|i| i.color).unwrap_or([0, 0, 0]);
        out.extend_from_slice(&[c[0], c[1], c[2], 255]);
    }
    out
}

/// One generated sequence, kept so frames can be scrubbed without
/// regenerating.
#[wasm_bindgen]
pub struct Scene {
    table: ClassTable,
    frames: Vec<(Vec<u8>, LabelMap)>,
    width: usize,
    height: usize,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, width: usize, height: usize, frames: usize) -> Result<Scene, JsError> {
        let cfg = SceneConfig {
            num_frames: frames,
            seed,
            ..SceneConfig::sized(width, height)
        };
        let seq = generate(&cfg).map_err(err)?;
        let frames = seq
            .frames
            .into_iter()
            .map(|f| {
                let d = f.image.data();
                let mut rgba = Vec::with_capacity(width * height * 4);
                for y in 0..height {
                    for x in 0..width {
                        for c in 0..3 {
                            rgba.push((d[[c, y, x]] * 255.0).round().clamp(0.0, 255.0) as u8);
                        }
                        rgba.push(255);
                    }
                }
                (rgba, f.label.expect("generated frames are labeled"))
            })
            .collect();
        Ok(Scene {
            table: cfg.table(),
            frames,
            width,
            height,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn image(&self, t: usize) -> Vec<u8> {
        self.frames[t.min(self.frames.len() - 1)].0.clone()
    }

    pub fn labels(&self, t: usize) -> Vec<u8> {
        label_rgba(&self.frames[t.min(self.frames.len() - 1)].1, &self.table)
    }

    /// Labels of frame `t` after stride-`stride` subsampling and
    /// nearest-neighbour upscaling.
    pub fn subn_labels(&self, t: usize, stride: usize) -> Result<Vec<u8>, JsError> {
        let gt = &self.frames[t.min(self.frames.len() - 1)].1;
        Ok(label_rgba(
            &subsample_round_trip(gt, stride).map_err(err)?,
            &self.table,
        ))
    }

    /// Per-class IoU of the sub-N round trip over every frame, in class
    /// table order; NaN where a class never appears.
    pub fn subn_iou(&self, stride: usize) -> Result<Vec<f64>, JsError> {
        let mut cm = ConfusionMatrix::for_table(&self.table);
        for (_, gt) in &self.frames {
            let pred = subsample_round_trip(gt, stride).map_err(err)?;
            cm.accumulate_allow_unknown(gt, &pred, &self.table)
                .map_err(err)?;
        }
        Ok(cm
            .iou()
            .into_iter()
            .map(|v| v.unwrap_or(f64::NAN))
            .collect())
    }

    /// Names of the scored classes, comma-separated.
    pub fn class_names(&self) -> String {
        self.table
            .scored_ids()
            .iter()
            .map(|&id| self.table.info(id).map(|i| i.name.as_str()).unwrap_or(""))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Relative runtime for priming periods `1..=max_period` followed by
/// priming the first frame only, over `len` frames.
#[wasm_bindgen]
pub fn budget_curve(
    cost_prime: f64,
    cost_approx: f64,
    cost_ensemble: f64,
    max_period: usize,
    len: usize,
) -> Result<Vec<f64>, JsError> {
    let costs = CostModel::new(cost_prime, cost_approx, cost_ensemble, "browser").map_err(err)?;
    let periods = (1..=max_period)
        .map(PrimingPeriod::Every)
        .chain(std::iter::once(PrimingPeriod::FirstOnly));
    periods
        .map(|period| {
            let sched = ScheduleConfig {
                period,
                ..ScheduleConfig::default()
            };
            amortized_relative_runtime(&sched, &costs, len).map_err(err)
        })
        .collect()
}
