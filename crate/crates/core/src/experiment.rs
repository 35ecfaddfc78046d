//! End-to-end training recipe shared by the CLI and the test suites.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{NetSpec, TrainConfig};
use crate::pipeline::{
    blend_ensemble, train_approximating, train_joint, train_priming, Network, Networks,
    PrimingPeriod, ScheduleConfig, TrainReport,
};
use crate::synthgen::SceneConfig;
use crate::types::{ClassTable, VideoSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Schedule used at inference.
    pub schedule: ScheduleConfig,
    /// Priming period simulated during joint training.
    pub joint_period: PrimingPeriod,
    /// Weight on the previous frame's scores in the ensemble's initial blend.
    pub ensemble_blend: f64,
    pub priming: TrainConfig,
    pub approximating: TrainConfig,
    pub joint: TrainConfig,
    pub scene: SceneConfig,
    /// Timing repetitions per path when calibrating a cost model.
    pub calibration_runs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            schedule: ScheduleConfig::default(),
            joint_period: PrimingPeriod::FirstOnly,
            ensemble_blend: 0.5,
            priming: TrainConfig {
                epochs: 8,
                frame_stride: 2,
                ..TrainConfig::default()
            },
            approximating: TrainConfig {
                epochs: 8,
                ..TrainConfig::default()
            },
            joint: TrainConfig {
                learning_rate: 0.01,
                epochs: 12,
                unroll: 3,
                ..TrainConfig::default()
            },
            scene: SceneConfig::default(),
            calibration_runs: 30,
        }
    }
}

impl ExperimentConfig {
    /// Use `seed` everywhere a seed is consumed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.priming.seed = seed;
        self.approximating.seed = seed;
        self.joint.seed = seed;
        self.scene.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.priming.validate()?;
        self.approximating.validate()?;
        self.joint.validate()?;
        self.scene.validate()?;
        if !(0.0..=1.0).contains(&self.ensemble_blend) {
            return Err(Error::Config("ensemble_blend must be in [0, 1]".into()));
        }
        if self.calibration_runs < 1 {
            return Err(Error::Config("calibration_runs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Output of the first training stage.
#[derive(Clone, Debug)]
pub struct FirstStage {
    pub priming: Network,
    /// The approximating network trained on its own.
    pub approximating: Network,
    pub priming_report: TrainReport,
    pub approximating_report: TrainReport,
}

/// Train the priming network and, independently, the approximating network.
pub fn train_first_stage(
    train: &[VideoSequence],
    cfg: &ExperimentConfig,
    table: &ClassTable,
) -> Result<FirstStage> {
    cfg.validate()?;
    let c = table.num_scored();
    let ps = NetSpec::default_priming(c);
    let (pp, priming_report) = train_priming(train, &ps, &cfg.priming, table)?;
    let aspec = NetSpec::default_approximating(c);
    let (ap, approximating_report) = train_approximating(
        train,
        &aspec,
        cfg.schedule.downsample_factor,
        &cfg.approximating,
        table,
    )?;
    Ok(FirstStage {
        priming: Network::new(ps, pp)?,
        approximating: Network::new(aspec, ap)?,
        priming_report,
        approximating_report,
    })
}

/// Train the approximating and ensemble networks through the recurrence,
/// starting from the stand-alone approximating network and a blend
/// ensemble. The priming network stays fixed.
pub fn train_second_stage(
    train: &[VideoSequence],
    priming: &Network,
    approximating: &Network,
    cfg: &ExperimentConfig,
    table: &ClassTable,
) -> Result<(Networks, TrainReport)> {
    cfg.validate()?;
    let es = NetSpec::default_ensemble(table.num_scored());
    let ensemble = Network::new(es.clone(), blend_ensemble(&es, cfg.ensemble_blend)?)?;
    let sched = ScheduleConfig::new(cfg.joint_period, cfg.schedule.downsample_factor)?;
    let out = train_joint(
        train,
        priming,
        approximating,
        &ensemble,
        sched,
        &cfg.joint,
        table,
    )?;
    let nets = Networks {
        priming: priming.clone(),
        approximating: Network::new(approximating.spec.clone(), out.approximating)?,
        ensemble: Network::new(es, out.ensemble)?,
    };
    Ok((nets, out.report))
}
