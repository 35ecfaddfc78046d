//! Deterministic synthetic highway-like video.
//!
//! Each sequence is a road trapezoid under a sky band, flanked by fence
//! structures, with thin lane lines converging on a vanishing point that
//! drifts sideways, a few cars and trucks moving smoothly on the road, and
//! a fixed bonnet strip of unknown pixels at the bottom. Labels are exact
//! by construction; images are the class colours with brightness drift,
//! a scrolling fence texture and seeded Gaussian noise, quantized to 8 bits.

use std::f64::consts::TAU;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassId, ClassTable, Frame, Image, LabelMap, VideoSequence};

pub const ROAD: ClassId = 0;
pub const LANE: ClassId = 1;
pub const SKY: ClassId = 2;
pub const FENCE: ClassId = 3;
pub const CAR: ClassId = 4;
pub const TRUCK: ClassId = 5;
pub const UNKNOWN: ClassId = 6;

/// Classes covering large compact areas.
pub const LARGE_BACKGROUND: [ClassId; 2] = [ROAD, SKY];
/// The 1-2 px wide lane class.
pub const THIN_STRUCTURE: ClassId = LANE;

const BONNET_COLOR: [f64; 3] = [0.16, 0.16, 0.18];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub num_frames: usize,
    pub frame_rate: f64,
    pub seed: u64,
    /// Horizon row as a fraction of the height.
    pub horizon: f64,
    pub lanes: usize,
    /// Lane line width in pixels (1 or 2).
    pub lane_width: usize,
    pub cars: usize,
    pub trucks: usize,
    /// Upper bound on mover speed, pixels per frame (at most 3).
    pub max_speed: f64,
    /// Upper bound on the sideways drift of the vanishing point, pixels per frame.
    pub max_drift: f64,
    /// Rows of unknown pixels at the bottom of every frame.
    pub bonnet_rows: usize,
    pub noise_std: f64,
    /// Relative amplitude of the global brightness oscillation.
    pub brightness_drift: f64,
    /// Fence texture scroll, pixels per frame.
    pub scroll_speed: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 384,
            height: 256,
            num_frames: 60,
            frame_rate: 30.0,
            seed: 0,
            horizon: 0.375,
            lanes: 3,
            lane_width: 2,
            cars: 2,
            trucks: 1,
            max_speed: 1.0,
            max_drift: 0.15,
            bonnet_rows: 16,
            noise_std: 0.08,
            brightness_drift: 0.08,
            scroll_speed: 1.0,
        }
    }
}

impl SceneConfig {
    /// Default scene at another size, with the bonnet kept at 1/16 of the height.
    pub fn sized(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bonnet_rows: (height / 16).max(1),
            ..Self::default()
        }
    }

    pub fn table(&self) -> ClassTable {
        ClassTable::highway()
    }

    /// Unknown pixels per frame as `(numerator, denominator)` of the frame area.
    pub fn unknown_fraction(&self) -> (usize, usize) {
        (self.bonnet_rows, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("scene config: {m}")));
        if self.width < 16 || self.height < 16 {
            return bad("frames must be at least 16x16");
        }
        if self.num_frames < 2 {
            return bad("at least 2 frames are required");
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad("frame rate must be positive");
        }
        if !(0.1..=0.7).contains(&self.horizon) {
            return bad("horizon must be within [0.1, 0.7]");
        }
        if !(1..=2).contains(&self.lane_width) {
            return bad("lane width must be 1 or 2 pixels");
        }
        if !(0.0..=3.0).contains(&self.max_speed) || !(0.0..=3.0).contains(&self.max_drift) {
            return bad("speeds must lie in [0, 3] pixels per frame");
        }
        let horizon_row = (self.horizon * self.height as f64).round() as usize;
        if self.bonnet_rows + horizon_row + 8 > self.height {
            return bad("bonnet leaves no room for the road");
        }
        if self.noise_std < 0.0 || !(0.0..0.5).contains(&self.brightness_drift) {
            return bad("noise and brightness drift must be small and non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Mover {
    class: ClassId,
    h: f64,
    w: f64,
    y: f64,
    x: f64,
    vy: f64,
    vx: f64,
}

#[derive(Clone, Debug)]
struct Layout {
    horizon_row: usize,
    vanish_x: f64,
    drift: f64,
    spread: f64,
    lane_offsets: Vec<f64>,
    movers: Vec<Mover>,
    brightness_phase: f64,
}

impl Layout {
    fn sample(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = (cfg.height as f64, cfg.width as f64);
        let base = (cfg.horizon * h).round() as i64;
        // object sizes are tuned for 96x64 and scale with the frame
        let (sx, sy) = (w / 96.0, h / 64.0);
        let jitter = (rng.random_range(-2i64..=2) as f64 * sy).round() as i64;
        let horizon_row = (base + jitter).max(2) as usize;
        let vanish_x = w / 2.0 + rng.random_range(-0.1..=0.1) * w;
        let drift = if cfg.max_drift > 0.0 {
            rng.random_range(-cfg.max_drift..=cfg.max_drift)
        } else {
            0.0
        };
        let road_rows = (cfg.height - cfg.bonnet_rows - horizon_row) as f64;
        let spread = rng.random_range(0.55..0.75) * w / road_rows;
        let lane_offsets = (0..cfg.lanes)
            .map(|i| {
                if cfg.lanes == 1 {
                    0.0
                } else {
                    -0.6 + 1.2 * i as f64 / (cfg.lanes - 1) as f64
                }
            })
            .collect();
        let top = horizon_row as f64 + 3.0;
        let bottom = (cfg.height - cfg.bonnet_rows) as f64;
        let mut movers = Vec::new();
        let kinds =
            std::iter::repeat_n(CAR, cfg.cars).chain(std::iter::repeat_n(TRUCK, cfg.trucks));
        for class in kinds {
            let (mh, mw): (f64, f64) = if class == CAR {
                (rng.random_range(4.0..7.0), rng.random_range(7.0..11.0))
            } else {
                (rng.random_range(7.0..10.0), rng.random_range(11.0..15.0))
            };
            let (mh, mw) = ((mh * sy).min(0.5 * (bottom - top)), (mw * sx).min(0.5 * w));
            let y = rng.random_range(top..(bottom - mh).max(top + 1.0));
            let x = rng.random_range(0.15 * w..(0.85 * w - mw).max(0.15 * w + 1.0));
            let (vy, vx) = if cfg.max_speed > 0.0 {
                let speed = rng.random_range(0.3 * cfg.max_speed..=cfg.max_speed);
                let angle: f64 = rng.random_range(0.0..TAU);
                (speed * angle.sin() * 0.5, speed * angle.cos())
            } else {
                (0.0, 0.0)
            };
            movers.push(Mover {
                class,
                h: mh,
                w: mw,
                y,
                x,
                vy,
                vx,
            });
        }
        Self {
            horizon_row,
            vanish_x,
            drift,
            spread,
            lane_offsets,
            movers,
            brightness_phase: rng.random_range(0.0..TAU),
        }
    }

    fn labels_at(&self, cfg: &SceneConfig, t: usize) -> LabelMap {
        let (h, w) = (cfg.height, cfg.width);
        let vx = self.vanish_x + self.drift * t as f64;
        let road_bottom = h - cfg.bonnet_rows;
        let mut labels = LabelMap::from_fn(h, w, |y, x| {
            if y < self.horizon_row {
                return SKY;
            }
            let half = self.spread * (y - self.horizon_row) as f64;
            if (x as f64 + 0.5 - vx).abs() <= half {
                ROAD
            } else {
                FENCE
            }
        })
        .expect("non-empty frame");
        // lines start once neighbours are at least two pixels apart
        let min_gap = self
            .lane_offsets
            .windows(2)
            .map(|p| p[1] - p[0])
            .fold(2.0, f64::min);
        let first = ((cfg.lane_width as f64 + 3.0) / (min_gap * self.spread)).ceil() as usize;
        for y in self.horizon_row + first.max(2)..road_bottom {
            let half = self.spread * (y - self.horizon_row) as f64;
            for &u in &self.lane_offsets {
                let centre = vx + u * half;
                let start = (centre - cfg.lane_width as f64 / 2.0).round() as isize;
                for x in start..start + cfg.lane_width as isize {
                    if (0..w as isize).contains(&x) && labels.get(y, x as usize) == ROAD {
                        labels.set(y, x as usize, LANE);
                    }
                }
            }
        }
        let top = self.horizon_row as f64 + 3.0;
        for m in &self.movers {
            let y0 = reflect(m.y + m.vy * t as f64, top, road_bottom as f64 - m.h);
            let x0 = reflect(m.x + m.vx * t as f64, 0.0, w as f64 - m.w);
            let (ys, xs) = (y0.round() as usize, x0.round() as usize);
            let (ye, xe) = ((y0 + m.h).round() as usize, (x0 + m.w).round() as usize);
            for y in ys..ye.min(road_bottom) {
                for x in xs..xe.min(w) {
                    labels.set(y, x, m.class);
                }
            }
        }
        for y in road_bottom..h {
            for x in 0..w {
                labels.set(y, x, UNKNOWN);
            }
        }
        labels
    }
}

/// Position bouncing between `lo` and `hi`.
fn reflect(p: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let span = hi - lo;
    let m = (p - lo).rem_euclid(2.0 * span);
    lo + if m <= span { m } else { 2.0 * span - m }
}

fn render(
    cfg: &SceneConfig,
    table: &ClassTable,
    layout: &Layout,
    labels: &LabelMap,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Image {
    let (h, w) = labels.dims();
    let normal = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let gain = 1.0 + cfg.brightness_drift * (TAU * t as f64 / 60.0 + layout.brightness_phase).sin();
    let scroll = cfg.scroll_speed * t as f64;
    let mut data = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let id = labels.get(y, x);
            let mut rgb = if id == UNKNOWN {
                BONNET_COLOR
            } else {
                table
                    .info(id)
                    .expect("generator ids are in the table")
                    .color
                    .map(|c| f64::from(c) / 255.0)
            };
            if id == FENCE && ((x as f64 + scroll) / 3.0).floor() as i64 % 2 == 0 {
                rgb = rgb.map(|v| v * 0.8);
            }
            for (c, base) in rgb.iter().enumerate() {
                let noise = if cfg.noise_std > 0.0 {
                    normal.sample(rng)
                } else {
                    0.0
                };
                let v = (base * gain + noise).clamp(0.0, 1.0);
                data[[c, y, x]] = (v * 255.0).round() / 255.0;
            }
        }
    }
    Image::new(data).expect("values clamped to [0, 1]")
}

/// Generate one fully labeled sequence.
pub fn generate(cfg: &SceneConfig) -> Result<VideoSequence> {
    cfg.validate()?;
    let table = cfg.table();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layout = Layout::sample(cfg, &mut rng);
    let frames = (0..cfg.num_frames)
        .map(|t| {
            let labels = layout.labels_at(cfg, t);
            let image = render(cfg, &table, &layout, &labels, t, &mut rng);
            Frame {
                image,
                label: Some(labels),
                timestamp: t as f64 / cfg.frame_rate,
            }
        })
        .collect();
    Ok(VideoSequence {
        frames,
        frame_rate: cfg.frame_rate,
    })
}

/// Seed of the `index`-th sequence derived from a dataset seed.
pub fn sequence_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64 + 1)
}

/// `count` sequences sharing `cfg` except for their seeds.
pub fn generate_dataset(cfg: &SceneConfig, count: usize) -> Result<Vec<VideoSequence>> {
    (0..count)
        .map(|i| {
            generate(&SceneConfig {
                seed: sequence_seed(cfg.seed, i),
                ..cfg.clone()
            })
        })
        .collect()
}

/// Fraction of pixels with equal labels between frames `t` and `t + lag`,
/// averaged over all valid `t`.
pub fn label_agreement(seq: &VideoSequence, lag: usize) -> f64 {
    let labels: Vec<&LabelMap> = seq.labels().collect();
    if lag >= labels.len() {
        return f64::NAN;
    }
    let mut total = 0.0;
    for t in 0..labels.len() - lag {
        let (a, b) = (labels[t].as_slice(), labels[t + lag].as_slice());
        let same = a.iter().zip(b).filter(|(p, q)| p == q).count();
        total += same as f64 / a.len() as f64;
    }
    total / (labels.len() - lag) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{spatial_density, temporal_density};
    use crate::types::validate_sequence;

    #[test]
    fn deterministic() {
        let cfg = SceneConfig {
            num_frames: 5,
            ..SceneConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SceneConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn static_scene_has_constant_labels() {
        let cfg = SceneConfig {
            num_frames: 12,
            max_speed: 0.0,
            max_drift: 0.0,
            ..SceneConfig::default()
        };
        let seq = generate(&cfg).unwrap();
        let first = seq.frames[0].label.as_ref().unwrap();
        assert!(seq.labels().all(|l| l == first));
    }

    #[test]
    fn adjacent_frames_agree_more_than_distant_ones() {
        for seed in 0..4 {
            let seq = generate(&SceneConfig {
                seed,
                ..SceneConfig::default()
            })
            .unwrap();
            let a1 = label_agreement(&seq, 1);
            let a30 = label_agreement(&seq, 30);
            assert!(a1 >= 0.95, "seed {seed}: lag-1 agreement {a1}");
            assert!(a30 < a1, "seed {seed}: lag-30 {a30} vs lag-1 {a1}");
            let lags = [1, 2, 4, 8, 16, 30];
            let curve: Vec<f64> = lags.iter().map(|&l| label_agreement(&seq, l)).collect();
            assert!(
                curve.windows(2).all(|p| p[1] <= p[0]),
                "seed {seed}: {curve:?}"
            );
        }
    }

    #[test]
    fn densities_match_config() {
        let cfg = SceneConfig::default();
        let seq = generate(&cfg).unwrap();
        assert!(validate_sequence(&seq, &cfg.table()).is_empty());
        let labels: Vec<&LabelMap> = seq.labels().collect();
        assert_eq!(labels.len(), cfg.num_frames);
        let (num, den) = cfg.unknown_fraction();
        assert_eq!(
            spatial_density(&labels, &cfg.table()).unwrap(),
            1.0 - num as f64 / den as f64
        );
        assert_eq!(temporal_density(&seq).unwrap(), cfg.frame_rate);
    }

    #[test]
    fn all_roles_present() {
        let seq = generate(&SceneConfig::default()).unwrap();
        let mut seen = [false; 7];
        for l in seq.labels() {
            for &id in l.as_slice() {
                seen[id as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "{seen:?}");
    }

    #[test]
    fn lane_is_thin() {
        let cfg = SceneConfig::default();
        let seq = generate(&SceneConfig {
            cars: 0,
            trucks: 0,
            ..cfg.clone()
        })
        .unwrap();
        let l = seq.frames[0].label.as_ref().unwrap();
        for y in 0..cfg.height {
            let mut run = 0;
            for x in 0..cfg.width {
                if l.get(y, x) == LANE {
                    run += 1;
                    assert!(run <= cfg.lane_width);
                } else {
                    run = 0;
                }
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            SceneConfig {
                width: 4,
                ..SceneConfig::default()
            },
            SceneConfig {
                num_frames: 1,
                ..SceneConfig::default()
            },
            SceneConfig {
                lane_width: 3,
                ..SceneConfig::default()
            },
            SceneConfig {
                max_speed: 4.0,
                ..SceneConfig::default()
            },
            SceneConfig {
                bonnet_rows: 250,
                ..SceneConfig::default()
            },
        ] {
            assert!(generate(&cfg).is_err());
        }
    }

    #[test]
    fn reflect_stays_in_bounds() {
        for i in -100..100 {
            let p = reflect(i as f64 * 0.7, 2.0, 9.0);
            assert!((2.0..=9.0).contains(&p));
        }
    }
}
