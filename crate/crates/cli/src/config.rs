//! Experiment configuration: one JSON document, strictly validated.

use std::path::{Path, PathBuf};

use behavior_guard_core::attack::AttackKind;
use behavior_guard_core::conditions::CertifyOptions;
use behavior_guard_core::lti::{discretize_zoh, mass_spring_chain, ChainParams, SystemSpec, TimeKind};
use behavior_guard_core::recover::{Method, RecoverOptions};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

/// Either a named model (`"mass_spring_chain:3"`) or an inline state-space system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Preset(String),
    Inline(SystemSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    Gaussian,
    /// Uniform with standard deviation `sigma`, i.e. on `[-√3 σ, √3 σ]`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub distribution: NoiseKind,
    /// Standard deviation of the measurement noise on the online windows.
    #[serde(default)]
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub magnitude: f64,
    /// Seed for the attack stream; the experiment seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Fixed 1-based entries or channels. A random set of size `k` per window when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
}

fn default_ts() -> f64 {
    1.3
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSource,
    /// Sampling period used when the system is continuous-time.
    #[serde(default = "default_ts")]
    pub ts: f64,
    /// Offline data length.
    #[serde(rename = "T")]
    pub t: usize,
    /// Window length (block rows of the Hankel matrix).
    #[serde(rename = "L")]
    pub l: usize,
    /// Attack budget handed to the recovery methods.
    pub k: usize,
    pub attack: AttackConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub methods: Vec<Method>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Abort when the offline data fail the excitation rank test.
    #[serde(default = "yes")]
    pub require_gpe: bool,
    /// Run the recoverability tests on the offline Hankel matrix.
    #[serde(default = "yes")]
    pub certify: bool,
    #[serde(default)]
    pub solver: RecoverOptions,
    #[serde(default)]
    pub certificates: CertifyOptions,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `"mass_spring_chain:n"`.
pub fn parse_preset_system(name: &str) -> Result<usize> {
    let n = name
        .strip_prefix("mass_spring_chain:")
        .ok_or_else(|| config_err(format!("unknown system preset {name:?} (expected \"mass_spring_chain:<n>\")")))?;
    let n: usize = n.parse().map_err(|_| config_err(format!("bad chain length in {name:?}")))?;
    if n < 2 {
        return Err(config_err(format!("a chain needs at least 2 masses, got {n}")));
    }
    Ok(n)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            config_err(format!("line {} column {}: {}", e.line(), e.column(), e))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The discrete-time model the data are generated from.
    pub fn resolve_system(&self) -> Result<SystemSpec> {
        let sys = match &self.system {
            SystemSource::Preset(name) => {
                let n = parse_preset_system(name)?;
                mass_spring_chain(n, &ChainParams::repeating(n))?
            }
            SystemSource::Inline(sys) => sys.clone(),
        };
        Ok(match sys.time_kind {
            TimeKind::Continuous => discretize_zoh(&sys, self.ts)?,
            TimeKind::Discrete => sys,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let sys = self.resolve_system()?;
        let q = sys.q();
        if self.trials == 0 {
            return Err(config_err("trials must be at least 1"));
        }
        if self.l == 0 || self.t < self.l {
            return Err(config_err(format!("need 1 <= L <= T, got L = {}, T = {}", self.l, self.t)));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(config_err(format!("ts must be positive, got {}", self.ts)));
        }
        if self.methods.is_empty() {
            return Err(config_err("at least one recovery method is required"));
        }
        let universe = match self.attack.kind {
            AttackKind::Entry => q * self.l,
            AttackKind::Channel => q,
        };
        if self.k > universe {
            return Err(config_err(format!("k = {} exceeds the {} available targets", self.k, universe)));
        }
        if !(self.attack.magnitude >= 0.0 && self.attack.magnitude.is_finite()) {
            return Err(config_err("attack magnitude must be finite and non-negative"));
        }
        if let Some(support) = &self.attack.support {
            let mut sorted = support.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != support.len() || sorted.iter().any(|&i| i == 0 || i > universe) {
                return Err(config_err(format!("attack support must be distinct indices in 1..={universe}")));
            }
        }
        let sigma = self.noise.sigma;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(config_err("noise sigma must be finite and non-negative"));
        }
        if self.noise.distribution != NoiseKind::None && sigma == 0.0 {
            log::warn!("noise distribution set but sigma = 0; windows stay noiseless");
        }
        Ok(())
    }

    /// Number of attacked targets per window.
    pub fn attack_count(&self) -> usize {
        self.attack.support.as_ref().map_or(self.k, Vec::len)
    }
}
