//! JSON experiment configuration.
//!
//! Only `experiment` and `seed` are required. Everything else falls back to
//! the per-experiment defaults in [`ExperimentKind::defaults`]; unknown keys
//! are rejected.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::profiles::{
    default_profile, high_band_profile, NuProfile, ProfileSpec, MAX_PACKETS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "homological")]
    Homological,
    #[serde(rename = "identities")]
    Identities,
    #[serde(rename = "ratio-scaling")]
    RatioScaling,
    #[serde(rename = "autocorrelation")]
    Autocorrelation,
    #[serde(rename = "lemma3-scan")]
    Lemma3Scan,
    #[serde(rename = "chebyshev")]
    Chebyshev,
    #[serde(rename = "multi-packet")]
    MultiPacket,
    #[serde(rename = "theorem2-h1")]
    Theorem2H1,
    #[serde(rename = "sampler-validation")]
    SamplerValidation,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::Homological,
        ExperimentKind::Identities,
        ExperimentKind::SamplerValidation,
        ExperimentKind::Lemma3Scan,
        ExperimentKind::RatioScaling,
        ExperimentKind::Autocorrelation,
        ExperimentKind::Chebyshev,
        ExperimentKind::MultiPacket,
        ExperimentKind::Theorem2H1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Homological => "homological",
            ExperimentKind::Identities => "identities",
            ExperimentKind::RatioScaling => "ratio-scaling",
            ExperimentKind::Autocorrelation => "autocorrelation",
            ExperimentKind::Lemma3Scan => "lemma3-scan",
            ExperimentKind::Chebyshev => "chebyshev",
            ExperimentKind::MultiPacket => "multi-packet",
            ExperimentKind::Theorem2H1 => "theorem2-h1",
            ExperimentKind::SamplerValidation => "sampler-validation",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::Homological => {
                "homological residual of the corrector at Gibbs states; bracket-norm bound"
            }
            ExperimentKind::Identities => {
                "sine-transform involution, Parseval, leapfrog energy conservation"
            }
            ExperimentKind::RatioScaling => "‖Φ̇‖/σ_Φ and σ_Φ1/σ_Φ0 against β, log-log slopes",
            ExperimentKind::Autocorrelation => {
                "normalized C_Φ0(t) along trajectories; persistence and half-life scaling"
            }
            ExperimentKind::Lemma3Scan => "normalized variances of Φ0, H1, Φ1 over N × β",
            ExperimentKind::Chebyshev => "drift probability of Φ0 at t = β^(1−a) against β",
            ExperimentKind::MultiPacket => "joint drift and persistence of K disjoint packets",
            ExperimentKind::Theorem2H1 => {
                "h1/(c0+c2) over the profile family; divergence for g'(0) ≠ 0"
            }
            ExperimentKind::SamplerValidation => {
                "constraint, single-site moments, slab-rejection reference, covariance trend"
            }
        }
    }

    /// Defaults applied to keys missing from a config.
    pub fn defaults(self) -> Defaults {
        let base = Defaults {
            n_list: vec![127],
            beta_list: vec![100.0],
            a: 1.0,
            profile: default_profile(),
            n_samples: 1000,
            dt: crate::chain::DEFAULT_DT,
            t_grid: None,
            sweeps: 100_000,
            chebyshev_a: 0.4,
            packets: 4,
        };
        match self {
            ExperimentKind::Homological => Defaults {
                n_list: vec![31],
                profile: ProfileSpec::Constant { value: 1.0 },
                n_samples: 100,
                ..base
            },
            ExperimentKind::Identities => Defaults {
                n_list: vec![64, 127, 255, 1023],
                n_samples: 4,
                t_grid: Some(TimeGrid {
                    horizon: 1000.0,
                    points: 1001,
                    in_units_of_beta: false,
                }),
                ..base
            },
            ExperimentKind::SamplerValidation => Defaults {
                n_list: vec![8, 64, 128, 256],
                n_samples: 10_000,
                ..base
            },
            ExperimentKind::Lemma3Scan => Defaults {
                n_list: vec![63, 127, 255],
                beta_list: vec![50.0, 100.0, 200.0],
                n_samples: 2000,
                ..base
            },
            ExperimentKind::RatioScaling => Defaults {
                beta_list: vec![25.0, 50.0, 100.0, 200.0],
                profile: high_band_profile(),
                n_samples: 4000,
                ..base
            },
            ExperimentKind::Autocorrelation => Defaults {
                beta_list: vec![50.0, 100.0, 200.0],
                n_samples: 1500,
                t_grid: Some(TimeGrid {
                    horizon: 4.0,
                    points: 201,
                    in_units_of_beta: true,
                }),
                ..base
            },
            ExperimentKind::Chebyshev => Defaults {
                beta_list: vec![50.0, 100.0, 200.0],
                profile: high_band_profile(),
                n_samples: 4000,
                ..base
            },
            ExperimentKind::MultiPacket => base,
            ExperimentKind::Theorem2H1 => base,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// Sampling times `i·horizon/(points−1)`, optionally scaled by `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub horizon: f64,
    pub points: usize,
    #[serde(default)]
    pub in_units_of_beta: bool,
}

impl TimeGrid {
    pub fn horizon_at(&self, beta: f64) -> f64 {
        if self.in_units_of_beta {
            self.horizon * beta
        } else {
            self.horizon
        }
    }

    pub fn interval_at(&self, beta: f64) -> f64 {
        self.horizon_at(beta) / (self.points - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Defaults {
    pub n_list: Vec<usize>,
    pub beta_list: Vec<f64>,
    pub a: f64,
    pub profile: ProfileSpec,
    pub n_samples: usize,
    pub dt: f64,
    pub t_grid: Option<TimeGrid>,
    pub sweeps: usize,
    pub chebyshev_a: f64,
    pub packets: usize,
}

/// The config file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_list: Option<Vec<f64>>,
    /// Quartic coefficient of the bond potential.
    #[serde(default, rename = "A", skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<usize>,
    /// Exponent `a` of the drift experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chebyshev_a: Option<f64>,
    /// Number of disjoint packets in `multi-packet`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packets: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A config with only the required keys.
    pub fn minimal(experiment: ExperimentKind, seed: u64) -> Self {
        ExperimentConfig {
            experiment,
            seed,
            n_list: None,
            beta_list: None,
            a: None,
            profile: None,
            n_samples: None,
            dt: None,
            t_grid: None,
            sweeps: None,
            chebyshev_a: None,
            packets: None,
            output: None,
        }
    }
}

/// A validated config with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub n_list: Vec<usize>,
    pub beta_list: Vec<f64>,
    #[serde(rename = "A")]
    pub a: f64,
    pub profile: ProfileSpec,
    pub n_samples: usize,
    pub dt: f64,
    pub t_grid: Option<TimeGrid>,
    pub sweeps: usize,
    pub chebyshev_a: f64,
    pub packets: usize,
    pub output: PathBuf,
}

impl Settings {
    pub fn from_config(config: ExperimentConfig) -> Result<Settings> {
        let d = config.experiment.defaults();
        let s = Settings {
            experiment: config.experiment,
            seed: config.seed,
            n_list: config.n_list.unwrap_or(d.n_list),
            beta_list: config.beta_list.unwrap_or(d.beta_list),
            a: config.a.unwrap_or(d.a),
            profile: config.profile.unwrap_or(d.profile),
            n_samples: config.n_samples.unwrap_or(d.n_samples),
            dt: config.dt.unwrap_or(d.dt),
            t_grid: config.t_grid.or(d.t_grid),
            sweeps: config.sweeps.unwrap_or(d.sweeps),
            chebyshev_a: config.chebyshev_a.unwrap_or(d.chebyshev_a),
            packets: config.packets.unwrap_or(d.packets),
            output: config
                .output
                .unwrap_or_else(|| PathBuf::from("runs").join(config.experiment.name())),
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(invalid("n_list", "must not be empty"));
        }
        if let Some(n) = self.n_list.iter().find(|&&n| n < 3) {
            return Err(invalid("n_list", format!("N must be at least 3, got {n}")));
        }
        if self.beta_list.is_empty() {
            return Err(invalid("beta_list", "must not be empty"));
        }
        if let Some(b) = self.beta_list.iter().find(|&&b| !(b > 0.0 && b.is_finite())) {
            return Err(invalid("beta_list", format!("β must be positive, got {b}")));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(invalid("A", format!("must be positive, got {}", self.a)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if self.n_samples < 2 {
            return Err(invalid("n_samples", "must be at least 2"));
        }
        if self.sweeps < 20 {
            return Err(invalid("sweeps", "must be at least 20"));
        }
        if !(0.0..=0.5).contains(&self.chebyshev_a) {
            return Err(invalid("chebyshev_a", "must lie in [0, 1/2]"));
        }
        if self.packets == 0 || self.packets > MAX_PACKETS {
            return Err(invalid("packets", format!("must lie in 1..={MAX_PACKETS}")));
        }
        if let Some(g) = self.t_grid {
            if !(g.horizon > 0.0 && g.horizon.is_finite()) || g.points < 2 {
                return Err(invalid("t_grid", "needs a positive horizon and at least 2 points"));
            }
        }
        let needs_grid = matches!(
            self.experiment,
            ExperimentKind::Identities | ExperimentKind::Autocorrelation
        );
        if needs_grid && self.t_grid.is_none() {
            return Err(invalid("t_grid", "required by this experiment"));
        }
        let nu = NuProfile::new(self.profile.clone())?;
        if !nu.is_admissible() {
            return Err(invalid(
                "profile",
                format!("`{}` has g'(0) ≠ 0; the corrector is unbounded", self.profile.kind()),
            ));
        }
        if self.experiment == ExperimentKind::RatioScaling && self.beta_list.len() < 3 {
            return Err(invalid("beta_list", "a slope fit needs at least 3 values"));
        }
        Ok(())
    }
}

/// Parses and validates a JSON config.
pub fn validate_config(text: &str) -> Result<Settings> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
        let mut msg = format!("config: {e}");
        if msg.contains("`even_polynomial`") {
            msg.push_str(&format!(" (registered profile kinds: {})", ProfileSpec::KINDS.join(", ")));
        }
        Error::Config(msg)
    })?;
    Settings::from_config(config)
}
