use std::collections::VecDeque;

use ndarray::{Array1, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_roles, map_ordered, prime, Network, ScheduleConfig};
use crate::error::{Error, Result};
use crate::nn::{
    backward, forward, infer, masked_cross_entropy, ForwardCache, LayerSpec, NetParams, NetSpec,
    Sgd, Tensor, TrainConfig,
};
use crate::resample::{bilinear, bilinear_adjoint, downsample_image};
use crate::types::{ClassTable, Frame, LabelMap, VideoSequence};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointOutcome {
    pub approximating: NetParams,
    pub ensemble: NetParams,
    pub report: TrainReport,
}

#[derive(Clone, Copy)]
enum Mode {
    Priming,
    Approximating { factor: usize },
}

fn require_labels(train: &[VideoSequence]) -> Result<()> {
    if train.iter().all(|s| s.is_empty()) {
        return Err(Error::Empty("training set has no frames".into()));
    }
    for (s, seq) in train.iter().enumerate() {
        if let Some(t) = seq.frames.iter().position(|f| f.label.is_none()) {
            return Err(Error::MissingLabel {
                sequence: s,
                frame: t,
            });
        }
    }
    Ok(())
}

fn label_of(f: &Frame) -> &LabelMap {
    f.label.as_ref().expect("labels checked before training")
}

/// Loss and parameter gradient of one frame for a frame-independent net.
fn frame_gradient(
    spec: &NetSpec,
    params: &NetParams,
    mode: Mode,
    frame: &Frame,
    table: &ClassTable,
) -> Result<(f64, NetParams)> {
    let (h, w) = frame.image.dims();
    let small;
    let input = match mode {
        Mode::Priming => frame.image.data(),
        Mode::Approximating { factor } => {
            small = downsample_image(&frame.image, factor)?;
            small.data()
        }
    };
    let (y, cache) = forward(spec, params, input.view(), None)?;
    let (_, yh, yw) = y.dim();
    let resized = (yh, yw) != (h, w);
    let scores = if resized {
        bilinear(y.view(), h, w)?
    } else {
        y
    };
    let (loss, g) = masked_cross_entropy(scores.view(), label_of(frame), table)?;
    let g = if resized {
        bilinear_adjoint(g.view(), yh, yw)?
    } else {
        g
    };
    Ok((loss, backward(spec, params, &cache, &g)?.params))
}

fn train_frames(
    train: &[VideoSequence],
    spec: &NetSpec,
    mode: Mode,
    config: &TrainConfig,
    table: &ClassTable,
) -> Result<(NetParams, TrainReport)> {
    config.validate()?;
    require_labels(train)?;
    let frames: Vec<&Frame> = train
        .iter()
        .flat_map(|s| s.frames.iter().step_by(config.frame_stride))
        .collect();
    let mut params = crate::nn::init_params(spec, config.seed);
    let mut opt = Sgd::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut report = TrainReport::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = map_ordered(batch, |&i| {
                frame_gradient(spec, &params, mode, frames[i], table)
            });
            let mut grads = params.zeros_like();
            for r in results {
                let (loss, g) = r?;
                epoch_loss += loss;
                grads.add_scaled(1.0, &g);
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut params, &grads, config)?;
        }
        let mean = epoch_loss / frames.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        report.epoch_losses.push(mean);
    }
    Ok((params, report))
}

/// Frame-independent training of the priming network from a seeded
/// initialisation. Every frame must be labeled.
pub fn train_priming(
    train: &[VideoSequence],
    spec: &NetSpec,
    config: &TrainConfig,
    table: &ClassTable,
) -> Result<(NetParams, TrainReport)> {
    train_frames(train, spec, Mode::Priming, config, table)
}

/// Frame-independent training of the approximating network on its own,
/// with the loss on its upsampled scores.
pub fn train_approximating(
    train: &[VideoSequence],
    spec: &NetSpec,
    downsample_factor: usize,
    config: &TrainConfig,
    table: &ClassTable,
) -> Result<(NetParams, TrainReport)> {
    if downsample_factor < 1 {
        return Err(Error::InvalidArgument(
            "downsample factor must be at least 1".into(),
        ));
    }
    train_frames(
        train,
        spec,
        Mode::Approximating {
            factor: downsample_factor,
        },
        config,
        table,
    )
}

/// Ensemble parameters whose output equals the upsampled approximation
/// (the auxiliary input) exactly. Needs the default ensemble layout with at
/// least twice as many hidden channels as classes.
pub fn passthrough_ensemble(spec: &NetSpec) -> Result<NetParams> {
    blend_ensemble(spec, 0.0)
}

/// Ensemble parameters computing `w * previous + (1 - w) * upsampled`
/// per class, through one relu pair per class.
pub fn blend_ensemble(spec: &NetSpec, w: f64) -> Result<NetParams> {
    let bad = || {
        Error::InvalidArgument(
            "blend needs concat, conv 3x3, relu, conv 1x1 with hidden >= 2 * classes".into(),
        )
    };
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidArgument(format!(
            "blend weight must be in [0, 1], got {w}"
        )));
    }
    let c = spec.input_channels;
    let (hidden, k) = match spec.layers.as_slice() {
        [LayerSpec::ConcatInput { channels }, LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel,
            ..
        }, LayerSpec::Relu, LayerSpec::Conv {
            in_channels: h2,
            out_channels: o2,
            kernel: 1,
            ..
        }] if *channels == c
            && *in_channels == 2 * c
            && h2 == out_channels
            && *o2 == c
            && *out_channels >= 2 * c =>
        {
            (*out_channels, *kernel)
        }
        _ => return Err(bad()),
    };
    let centre = k / 2;
    let mut w1 = Array4::zeros((hidden, 2 * c, k, k));
    let mut w2 = Array4::zeros((c, hidden, 1, 1));
    for ch in 0..c {
        for (unit, sign) in [(2 * ch, 1.0), (2 * ch + 1, -1.0)] {
            if w > 0.0 {
                w1[[unit, ch, centre, centre]] = sign * w;
            }
            w1[[unit, c + ch, centre, centre]] = sign * (1.0 - w);
            w2[[ch, unit, 0, 0]] = sign;
        }
    }
    let mut p = NetParams::zeros(spec);
    p.convs[0].weight = w1;
    p.convs[0].bias = Array1::zeros(hidden);
    p.convs[1].weight = w2;
    p.convs[1].bias = Array1::zeros(c);
    Ok(p)
}

struct Step {
    ensemble: ForwardCache,
    approx: ForwardCache,
    approx_dims: (usize, usize),
}

/// Joint training of the approximating and ensemble networks through the
/// live pipeline. The priming network is only read. The loss is applied
/// at every non-primed frame (every `frame_stride`-th of them) and is
/// backpropagated through at most `unroll` consecutive ensemble steps;
/// previous scores from before that window are constants.
pub fn train_joint(
    train: &[VideoSequence],
    priming: &Network,
    approximating: &Network,
    ensemble: &Network,
    sched: ScheduleConfig,
    config: &TrainConfig,
    table: &ClassTable,
) -> Result<JointOutcome> {
    config.validate()?;
    sched.validate()?;
    check_roles(priming, approximating, ensemble, table)?;
    require_labels(train)?;
    let (sa, se) = (&approximating.spec, &ensemble.spec);
    let mut pa = approximating.params.clone();
    let mut pe = ensemble.params.clone();
    let (mut opt_a, mut opt_e) = (Sgd::new(), Sgd::new());
    let (mut acc_a, mut acc_e) = (pa.zeros_like(), pe.zeros_like());
    let mut pending = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport::default();
    let mut history: VecDeque<Step> = VecDeque::with_capacity(config.unroll);

    let mut flush = |pa: &mut NetParams,
                     pe: &mut NetParams,
                     acc_a: &mut NetParams,
                     acc_e: &mut NetParams,
                     n: usize|
     -> Result<()> {
        acc_a.scale(1.0 / n as f64);
        acc_e.scale(1.0 / n as f64);
        opt_a.step(pa, acc_a, config)?;
        opt_e.step(pe, acc_e, config)?;
        *acc_a = acc_a.zeros_like();
        *acc_e = acc_e.zeros_like();
        Ok(())
    };

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_frames) = (0.0, 0usize);
        for &s in &order {
            let mut previous: Option<Tensor> = None;
            history.clear();
            let mut since_prime = 0usize;
            for (t, frame) in train[s].frames.iter().enumerate() {
                let prev = match previous.take() {
                    Some(p) if !sched.period.is_primed(t) => p,
                    _ => {
                        previous = Some(prime(priming, &frame.image)?);
                        history.clear();
                        since_prime = 0;
                        continue;
                    }
                };
                since_prime += 1;
                let (h, w) = frame.image.dims();
                let small = downsample_image(&frame.image, sched.downsample_factor)?;
                let with_loss = (since_prime - 1).is_multiple_of(config.frame_stride);
                if !with_loss && config.unroll == 1 {
                    let a = infer(sa, &pa, small.data().view(), None)?;
                    let up = bilinear(a.view(), h, w)?;
                    previous = Some(infer(se, &pe, prev.view(), Some(up.view()))?);
                    continue;
                }
                let (a, ca) = forward(sa, &pa, small.data().view(), None)?;
                let (_, ah, aw) = a.dim();
                let up = bilinear(a.view(), h, w)?;
                let (scores, ce) = forward(se, &pe, prev.view(), Some(up.view()))?;
                if history.len() == config.unroll {
                    history.pop_front();
                }
                history.push_back(Step {
                    ensemble: ce,
                    approx: ca,
                    approx_dims: (ah, aw),
                });
                if with_loss {
                    let (loss, mut g) =
                        masked_cross_entropy(scores.view(), label_of(frame), table)?;
                    epoch_loss += loss;
                    epoch_frames += 1;
                    for step in history.iter().rev() {
                        let ge = backward(se, &pe, &step.ensemble, &g)?;
                        acc_e.add_scaled(1.0, &ge.params);
                        let g_up = ge.aux.expect("ensemble has an auxiliary input");
                        let g_small =
                            bilinear_adjoint(g_up.view(), step.approx_dims.0, step.approx_dims.1)?;
                        acc_a.add_scaled(1.0, &backward(sa, &pa, &step.approx, &g_small)?.params);
                        g = ge.input;
                    }
                    pending += 1;
                    if pending == config.batch_size {
                        flush(&mut pa, &mut pe, &mut acc_a, &mut acc_e, pending)?;
                        pending = 0;
                        // cached activations belong to the old parameters
                        history.clear();
                    }
                }
                previous = Some(scores);
            }
        }
        if pending > 0 {
            flush(&mut pa, &mut pe, &mut acc_a, &mut acc_e, pending)?;
            pending = 0;
        }
        if epoch_frames == 0 {
            return Err(Error::Empty("no non-primed frames to train on; use a longer sequence or a larger priming period".into()));
        }
        let mean = epoch_loss / epoch_frames as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        report.epoch_losses.push(mean);
    }
    Ok(JointOutcome {
        approximating: pa,
        ensemble: pe,
        report,
    })
}
