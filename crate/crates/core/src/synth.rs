//! Seeded synthetic embedding streams with controllable drift.
//!
//! Before the onset, pooled embeddings come from two unit-covariance
//! Gaussian blobs at `±separation · e₁`. From the onset on, the configured
//! drift transforms samples. Every sample carries 1–3 segment vectors
//! scattered around its latent point, and consecutive runs of 1–3 samples
//! share a subject.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftKind {
    #[default]
    None,
    /// Adds `delta` to every post-onset embedding (zero-padded to `dim`).
    CovariateShift { delta: Vec<f64> },
    /// Flips post-onset labels with probability `rate`.
    LabelFlip { rate: f64 },
    /// Draws post-onset classes with a new positive probability.
    BalanceShift { positive_rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub span_days: f64,
    pub dim: usize,
    pub class_balance: f64,
    pub separation: f64,
    pub segment_noise: f64,
    pub drift_onset: f64,
    pub drift: DriftKind,
    #[serde(with = "crate::sample::iso_millis")]
    pub start: DateTime<Utc>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            span_days: 280.0,
            dim: 16,
            class_balance: 0.5,
            separation: 1.5,
            segment_noise: 0.5,
            drift_onset: 1.0,
            drift: DriftKind::None,
            start: Utc.with_ymd_and_hms(2020, 4, 1, 0, 0, 0).unwrap(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_samples < 2 || self.dim == 0 {
            return bad(format!(
                "need n_samples >= 2 and dim >= 1, got {} / {}",
                self.n_samples, self.dim
            ));
        }
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return bad(format!("class_balance must lie in (0, 1), got {}", self.class_balance));
        }
        if !(0.0..=1.0).contains(&self.drift_onset) {
            return bad(format!("drift_onset must lie in [0, 1], got {}", self.drift_onset));
        }
        if !(self.span_days > 0.0) || self.span_days * 86_400_000.0 < self.n_samples as f64 {
            return bad("span_days too short for millisecond-distinct timestamps".into());
        }
        match &self.drift {
            DriftKind::CovariateShift { delta } if delta.len() > self.dim => {
                bad(format!("delta has {} entries for dim {}", delta.len(), self.dim))
            }
            DriftKind::LabelFlip { rate } if !(0.0..=1.0).contains(rate) => {
                bad(format!("flip rate must lie in [0, 1], got {rate}"))
            }
            DriftKind::BalanceShift { positive_rate } if !(0.0..=1.0).contains(positive_rate) => {
                bad(format!("positive_rate must lie in [0, 1], got {positive_rate}"))
            }
            _ => Ok(()),
        }
    }

    /// Timestamp at which the drift starts.
    pub fn onset_time(&self) -> DateTime<Utc> {
        self.start + Duration::milliseconds((self.drift_onset * self.span_days * 86_400_000.0).round() as i64)
    }
}

/// Generates a chronologically sorted, labeled stream.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let step_ms = cfg.span_days * 86_400_000.0 / cfg.n_samples as f64;
    let onset = cfg.onset_time();
    let delta: Vec<f64> = match &cfg.drift {
        DriftKind::CovariateShift { delta } => {
            let mut d = delta.clone();
            d.resize(cfg.dim, 0.0);
            d
        }
        _ => vec![0.0; cfg.dim],
    };
    let mut subject = 0usize;
    let mut left_in_run = 0usize;
    let mut out = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let timestamp = cfg.start + Duration::milliseconds((i as f64 * step_ms).round() as i64);
        let drifted = cfg.drift_onset < 1.0 && timestamp >= onset;
        if left_in_run == 0 {
            subject += 1;
            left_in_run = rng.random_range(1..=3);
        }
        left_in_run -= 1;

        let u_class: f64 = rng.random();
        let u_flip: f64 = rng.random();
        let p_pos = match (&cfg.drift, drifted) {
            (DriftKind::BalanceShift { positive_rate }, true) => *positive_rate,
            _ => cfg.class_balance,
        };
        let true_class = u_class < p_pos;
        let sign = if true_class { 1.0 } else { -1.0 };
        let mut latent: Vec<f64> = (0..cfg.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        latent[0] += sign * cfg.separation;
        if drifted {
            latent.iter_mut().zip(&delta).for_each(|(x, d)| *x += d);
        }
        let n_seg = rng.random_range(1..=3);
        let segments = (0..n_seg)
            .map(|_| {
                latent
                    .iter()
                    .map(|x| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x + cfg.segment_noise * z
                    })
                    .collect()
            })
            .collect();
        let flipped = matches!((&cfg.drift, drifted), (DriftKind::LabelFlip { rate }, true) if u_flip < *rate);
        let label = u8::from(true_class != flipped);
        out.push(Sample {
            sample_id: format!("s{i:06}"),
            subject_id: format!("subj{subject:05}"),
            timestamp,
            label: Some(label),
            segments,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SynthConfig {
            n_samples: 200,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn timestamps_strictly_increase_and_shapes_hold() {
        let cfg = SynthConfig {
            n_samples: 600,
            dim: 5,
            ..SynthConfig::default()
        };
        let s = generate(&cfg).unwrap();
        assert!(s.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        for x in &s {
            assert!((1..=3).contains(&x.segments.len()));
            assert!(x.segments.iter().all(|v| v.len() == 5));
            x.validate().unwrap();
        }
    }

    #[test]
    fn class_counts_within_three_sigma() {
        for (seed, p) in [(1u64, 0.5), (2, 0.2), (3, 0.8)] {
            let cfg = SynthConfig {
                n_samples: 2000,
                class_balance: p,
                seed,
                ..SynthConfig::default()
            };
            let pos = generate(&cfg).unwrap().iter().filter(|s| s.label == Some(1)).count() as f64;
            let n = 2000.0;
            let sd = (n * p * (1.0 - p)).sqrt();
            assert!((pos - n * p).abs() <= 3.0 * sd, "seed {seed}: {pos}");
        }
    }

    #[test]
    fn covariate_shift_moves_post_onset_mean() {
        let cfg = SynthConfig {
            n_samples: 2000,
            dim: 3,
            drift_onset: 0.5,
            drift: DriftKind::CovariateShift { delta: vec![4.0] },
            ..SynthConfig::default()
        };
        let s = generate(&cfg).unwrap();
        let onset = cfg.onset_time();
        let mean_e1 = |pre: bool| {
            let v: Vec<f64> = s
                .iter()
                .filter(|x| (x.timestamp < onset) == pre)
                .map(|x| x.pooled()[0])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((mean_e1(false) - mean_e1(true) - 4.0).abs() < 0.3);
    }

    #[test]
    fn label_flip_and_balance_shift() {
        let base = SynthConfig {
            n_samples: 2000,
            drift_onset: 0.5,
            ..SynthConfig::default()
        };
        let flipped = generate(&SynthConfig {
            drift: DriftKind::LabelFlip { rate: 1.0 },
            ..base.clone()
        })
        .unwrap();
        let clean = generate(&base).unwrap();
        let onset = base.onset_time();
        for (a, b) in flipped.iter().zip(&clean) {
            assert_eq!(a.segments, b.segments);
            assert_eq!(a.label != b.label, a.timestamp >= onset);
        }
        let shifted = generate(&SynthConfig {
            drift: DriftKind::BalanceShift { positive_rate: 0.9 },
            ..base
        })
        .unwrap();
        let post: Vec<_> = shifted.iter().filter(|s| s.timestamp >= onset).collect();
        let frac = post.iter().filter(|s| s.label == Some(1)).count() as f64 / post.len() as f64;
        assert!((frac - 0.9).abs() < 0.05);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { n_samples: 1, ..SynthConfig::default() },
            SynthConfig { dim: 0, ..SynthConfig::default() },
            SynthConfig { class_balance: 1.0, ..SynthConfig::default() },
            SynthConfig { drift_onset: 1.5, ..SynthConfig::default() },
            SynthConfig {
                dim: 2,
                drift: DriftKind::CovariateShift { delta: vec![1.0; 3] },
                ..SynthConfig::default()
            },
        ] {
            assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
        }
    }
}
