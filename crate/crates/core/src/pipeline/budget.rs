use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{approximate, fuse, prime, Networks, PrimingPeriod, ScheduleConfig};
use crate::error::{Error, Result};
use crate::synthgen::{generate, SceneConfig};

/// Per-frame cost of each path, in arbitrary consistent units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub cost_prime: f64,
    /// Downsampling, approximating network and upsampling.
    pub cost_approx: f64,
    pub cost_ensemble: f64,
    /// Where the numbers came from.
    #[serde(default)]
    pub provenance: String,
}

impl CostModel {
    pub fn new(
        cost_prime: f64,
        cost_approx: f64,
        cost_ensemble: f64,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let m = Self {
            cost_prime,
            cost_approx,
            cost_ensemble,
            provenance: provenance.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cost_prime", self.cost_prime),
            ("cost_approx", self.cost_approx),
            ("cost_ensemble", self.cost_ensemble),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Cost of one non-primed frame.
    pub fn approx_path(&self) -> f64 {
        self.cost_approx + self.cost_ensemble
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Mean per-frame cost over `len` frames relative to priming every frame.
pub fn amortized_relative_runtime(
    sched: &ScheduleConfig,
    costs: &CostModel,
    len: usize,
) -> Result<f64> {
    sched.validate()?;
    costs.validate()?;
    if len < 1 {
        return Err(Error::InvalidArgument(
            "sequence length must be at least 1".into(),
        ));
    }
    let primed = sched.period.primed_count(len);
    Ok(rounded_ratio(primed, len - primed, costs))
}

/// `(a + b)` as an unevaluated sum `hi + lo`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// `a * b` as an unevaluated sum `hi + lo`.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn dd_add((ah, al): (f64, f64), (bh, bl): (f64, f64)) -> (f64, f64) {
    let (s, e) = two_sum(ah, bh);
    let (s, e2) = two_sum(s, e + al + bl);
    (s, e2)
}

/// `(p * cp + q * (ca + ce)) / ((p + q) * cp)` carried in double-double
/// precision so the result is the rounded exact quotient; plain evaluation
/// rounds three times and can miss by an ulp.
fn rounded_ratio(p: usize, q: usize, c: &CostModel) -> f64 {
    let (pf, qf) = (p as f64, q as f64);
    let (ah, al) = two_sum(c.cost_approx, c.cost_ensemble);
    let (qh, ql) = two_prod(qf, ah);
    let num = dd_add(two_prod(pf, c.cost_prime), (qh, ql + qf * al));
    let den = two_prod(pf + qf, c.cost_prime);
    let q1 = num.0 / den.0;
    let prod = two_prod(q1, den.0);
    let prod = dd_add(prod, two_prod(q1, den.1));
    let rem = dd_add(num, (-prod.0, -prod.1));
    q1 + (rem.0 + rem.1) / den.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetRow {
    pub period: PrimingPeriod,
    pub relative_runtime: f64,
}

pub fn budget_curve(
    costs: &CostModel,
    periods: &[PrimingPeriod],
    len: usize,
) -> Result<Vec<BudgetRow>> {
    periods
        .iter()
        .map(|&period| {
            let sched = ScheduleConfig {
                period,
                ..ScheduleConfig::default()
            };
            Ok(BudgetRow {
                period,
                relative_runtime: amortized_relative_runtime(&sched, costs, len)?,
            })
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Time each path `runs` times on a fixed generated `height x width` frame
/// and keep the medians, in milliseconds.
pub fn calibrate(
    nets: &Networks,
    downsample_factor: usize,
    height: usize,
    width: usize,
    runs: usize,
) -> Result<CostModel> {
    if runs < 1 {
        return Err(Error::InvalidArgument(
            "calibration needs at least one run".into(),
        ));
    }
    let seq = generate(&SceneConfig {
        num_frames: 2,
        ..SceneConfig::sized(width, height)
    })?;
    let image = &seq.frames[0].image;
    let previous = prime(&nets.priming, image)?;
    let up = approximate(&nets.approximating, image, downsample_factor)?;
    let time = |f: &dyn Fn() -> Result<()>| -> Result<f64> {
        let mut samples = Vec::with_capacity(runs);
        for _ in 0..runs {
            let start = Instant::now();
            f()?;
            samples.push(start.elapsed().as_secs_f64() * 1e3);
        }
        // a zero reading would make the model invalid
        Ok(median(samples).max(1e-6))
    };
    let cost_prime = time(&|| prime(&nets.priming, image).map(drop))?;
    let cost_approx =
        time(&|| approximate(&nets.approximating, image, downsample_factor).map(drop))?;
    let cost_ensemble = time(&|| fuse(&nets.ensemble, &previous, &up).map(drop))?;
    CostModel::new(
        cost_prime,
        cost_approx,
        cost_ensemble,
        format!("calibrated: median of {runs} runs on a {height}x{width} frame, downsample factor {downsample_factor}, milliseconds"),
    )
}
