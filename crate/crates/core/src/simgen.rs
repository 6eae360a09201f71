//! Seeded synthetic listening logs.
//!
//! Each exposure draws `ε ~ N(0, 1)` and is a listening event iff
//! `y*(x) + ε > 0`, so the per-index listening rate is `Φ(y*(x))`.
//!
//! Random streams use ChaCha8 (`rand_chacha::ChaCha8Rng`): the generator for
//! user `u` is `ChaCha8Rng::seed_from_u64(seed)` switched to stream `u`. Per
//! exposure the draws are, in order: the standard normal noise (ziggurat,
//! `rand_distr::StandardNormal`), the listening duration, then the gap to the
//! next exposure when gaps are random.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exposure_log::RawRecord;

/// Identifier of the random stream algorithm, recorded in configs.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Habituation/tedium decomposition of latent interest:
/// `y*(x) = b + h·(1 − exp(−x/τ)) − t·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoFactorParams {
    pub baseline: f64,
    pub habituation_amplitude: f64,
    /// τ, in exposures.
    pub habituation_rate: f64,
    pub tedium_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatentModel {
    TwoFactor(TwoFactorParams),
    /// `y*(x) = β₀ + β₁x + β₂x²`
    QuadraticLatent {
        beta: [f64; 3],
    },
}

impl LatentModel {
    pub fn constant(value: f64) -> Self {
        LatentModel::QuadraticLatent {
            beta: [value, 0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        match self {
            LatentModel::TwoFactor(p) => {
                let all = [
                    p.baseline,
                    p.habituation_amplitude,
                    p.habituation_rate,
                    p.tedium_slope,
                ];
                if all.iter().any(|v| !v.is_finite()) {
                    return bad("two-factor parameters must be finite");
                }
                if p.habituation_rate <= 0.0 {
                    return bad("habituation rate must be positive");
                }
                if p.habituation_amplitude < 0.0 || p.tedium_slope < 0.0 {
                    return bad("habituation amplitude and tedium slope must be non-negative");
                }
                Ok(())
            }
            LatentModel::QuadraticLatent { beta } => {
                if beta.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    bad("quadratic coefficients must be finite")
                }
            }
        }
    }
}

pub fn latent_interest(model: &LatentModel, x: u32) -> f64 {
    let x = x as f64;
    match model {
        LatentModel::TwoFactor(p) => {
            p.baseline + p.habituation_amplitude * (1.0 - (-x / p.habituation_rate).exp())
                - p.tedium_slope * x
        }
        LatentModel::QuadraticLatent { beta } => beta[0] + beta[1] * x + beta[2] * x * x,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    pub track_id: String,
    pub latent: LatentModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimestampModel {
    Fixed {
        gap_seconds: i64,
    },
    /// Uniform integer gaps in `min_gap..=max_gap`.
    Random {
        min_gap: i64,
        max_gap: i64,
    },
}

impl Default for TimestampModel {
    fn default() -> Self {
        TimestampModel::Fixed { gap_seconds: 3600 }
    }
}

fn default_exposures() -> u32 {
    40
}

fn default_prefix() -> String {
    "u".into()
}

fn default_start() -> i64 {
    1_600_000_000
}

fn default_rng() -> String {
    RNG_ALGORITHM.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_users: u64,
    #[serde(default = "default_exposures")]
    pub n_exposures: u32,
    pub tracks: Vec<TrackSpec>,
    pub seed: u64,
    #[serde(default)]
    pub timestamps: TimestampModel,
    /// User ids are `{user_prefix}{index}` with the index zero-padded to 6 digits.
    #[serde(default = "default_prefix")]
    pub user_prefix: String,
    #[serde(default = "default_start")]
    pub start_timestamp: i64,
    #[serde(default = "default_rng")]
    pub rng: String,
}

impl SimConfig {
    /// One track shared by `n_users` users, default timing.
    pub fn single_track(n_users: u64, n_exposures: u32, latent: LatentModel, seed: u64) -> Self {
        SimConfig {
            n_users,
            n_exposures,
            tracks: vec![TrackSpec {
                track_id: "t0".into(),
                latent,
            }],
            seed,
            timestamps: TimestampModel::default(),
            user_prefix: default_prefix(),
            start_timestamp: default_start(),
            rng: default_rng(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users < 1 || self.n_exposures < 1 {
            return Err(Error::InvalidArgument(
                "need at least one user and one exposure".into(),
            ));
        }
        if self.tracks.is_empty() {
            return Err(Error::InvalidArgument("need at least one track".into()));
        }
        if self.rng != RNG_ALGORITHM {
            return Err(Error::InvalidArgument(format!(
                "unsupported rng `{}` (only `{RNG_ALGORITHM}`)",
                self.rng
            )));
        }
        match self.timestamps {
            TimestampModel::Fixed { gap_seconds } if gap_seconds < 1 => {
                return Err(Error::InvalidArgument(
                    "timestamp gap must be at least 1 second".into(),
                ))
            }
            TimestampModel::Random { min_gap, max_gap } if min_gap < 1 || max_gap < min_gap => {
                return Err(Error::InvalidArgument(
                    "random gaps need 1 <= min_gap <= max_gap".into(),
                ))
            }
            _ => {}
        }
        self.tracks.iter().try_for_each(|t| t.latent.validate())
    }

    fn user_id(&self, index: u64) -> String {
        format!("{}{:06}", self.user_prefix, index)
    }
}

fn user_records(config: &SimConfig, user: u64) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(user);
    let user_id = config.user_id(user);
    let mut out = Vec::with_capacity(config.tracks.len() * config.n_exposures as usize);
    let mut ts = config.start_timestamp;
    for track in &config.tracks {
        for x in 1..=config.n_exposures {
            let noise: f64 = rng.sample(StandardNormal);
            let listened = latent_interest(&track.latent, x) + noise > 0.0;
            let listen_seconds = if listened {
                rng.random_range(30.0..=240.0)
            } else {
                rng.random_range(0.0..30.0)
            };
            out.push(RawRecord {
                user_id: user_id.clone(),
                track_id: track.track_id.clone(),
                timestamp: ts,
                listen_seconds,
            });
            ts += match config.timestamps {
                TimestampModel::Fixed { gap_seconds } => gap_seconds,
                TimestampModel::Random { min_gap, max_gap } => rng.random_range(min_gap..=max_gap),
            };
        }
    }
    out
}

/// Lazily generated records, user-major, then track order, then exposure.
pub fn records(config: &SimConfig) -> Result<impl Iterator<Item = RawRecord>> {
    config.validate()?;
    let config = config.clone();
    Ok((0..config.n_users).flat_map(move |u| user_records(&config, u)))
}

pub fn simulate(config: &SimConfig) -> Result<Vec<RawRecord>> {
    Ok(records(config)?.collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE_BETA: [f64; 3] = [0.7952, 0.0048, -0.0002];

    #[test]
    fn constant_two_factor() {
        let m = LatentModel::TwoFactor(TwoFactorParams {
            baseline: 0.4,
            habituation_amplitude: 0.0,
            habituation_rate: 2.0,
            tedium_slope: 0.0,
        });
        assert!((1..=40).all(|x| latent_interest(&m, x) == 0.4));
    }

    #[test]
    fn quadratic_peaks_at_twelve() {
        let m = LatentModel::QuadraticLatent {
            beta: REFERENCE_BETA,
        };
        let best = (1..=40)
            .max_by(|a, b| latent_interest(&m, *a).total_cmp(&latent_interest(&m, *b)))
            .unwrap();
        assert_eq!(best, 12);
    }

    #[test]
    fn two_factor_interior_argmax() {
        let m = LatentModel::TwoFactor(TwoFactorParams {
            baseline: 0.0,
            habituation_amplitude: 1.0,
            habituation_rate: 3.0,
            tedium_slope: 0.05,
        });
        // exhaustive scan; continuous optimum is x = τ·ln(h/(τ t)) = 3 ln(20/3) ≈ 5.69
        let vals: Vec<f64> = (1..=40).map(|x| latent_interest(&m, x)).collect();
        let arg = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0
            + 1;
        assert_eq!(arg, 6);
        assert_eq!(vals.iter().filter(|v| **v == vals[arg - 1]).count(), 1);
    }

    #[test]
    fn deterministic_and_well_formed() {
        let mut cfg = SimConfig::single_track(
            20,
            15,
            LatentModel::QuadraticLatent {
                beta: REFERENCE_BETA,
            },
            7,
        );
        cfg.timestamps = TimestampModel::Random {
            min_gap: 60,
            max_gap: 86_400,
        };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        for pair in a.windows(2) {
            if pair[0].user_id == pair[1].user_id {
                assert!(pair[1].timestamp > pair[0].timestamp);
            }
        }
        assert!(a.iter().all(|r| (0.0..=240.0).contains(&r.listen_seconds)));
        cfg.seed = 8;
        assert_ne!(simulate(&cfg).unwrap(), a);
    }

    #[test]
    fn zero_latent_rate_near_half() {
        let cfg = SimConfig::single_track(1000, 40, LatentModel::constant(0.0), 3);
        let recs = simulate(&cfg).unwrap();
        let n = recs.len() as f64;
        let rate = recs.iter().filter(|r| r.listen_seconds >= 30.0).count() as f64 / n;
        assert!((rate - 0.5).abs() <= 3.0 * (0.25 / n).sqrt(), "{rate}");
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SimConfig::single_track(1, 1, LatentModel::constant(0.0), 0);
        cfg.n_users = 0;
        assert!(cfg.validate().is_err());
        let cfg = SimConfig::single_track(
            1,
            1,
            LatentModel::TwoFactor(TwoFactorParams {
                baseline: 0.0,
                habituation_amplitude: 1.0,
                habituation_rate: 0.0,
                tedium_slope: 0.0,
            }),
            0,
        );
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::single_track(1, 1, LatentModel::constant(0.0), 0);
        cfg.rng = "pcg".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: SimConfig = serde_json::from_str(
            r#"{"n_users": 3, "seed": 1, "tracks": [{"track_id": "a", "latent": {"mode": "quadratic_latent", "beta": [0.5, 0, 0]}}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.n_exposures, 40);
        assert_eq!(cfg.timestamps, TimestampModel::Fixed { gap_seconds: 3600 });
        cfg.validate().unwrap();
    }
}
