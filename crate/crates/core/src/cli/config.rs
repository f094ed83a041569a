//! Experiment configuration, read from TOML and echoed back after overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::MixtureSpec;
use crate::domain::{BetaSchedule, CostModel};
use crate::error::{Error, Result};
use crate::h2t2::{tuned_params, PseudoLossVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    H2t2,
    NoOffload,
    FullOffload,
    SingleHi,
    OfflineSingle,
    OfflineTwo,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::H2t2,
        PolicyKind::NoOffload,
        PolicyKind::FullOffload,
        PolicyKind::SingleHi,
        PolicyKind::OfflineSingle,
        PolicyKind::OfflineTwo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::H2t2 => "h2t2",
            PolicyKind::NoOffload => "no-offload",
            PolicyKind::FullOffload => "full-offload",
            PolicyKind::SingleHi => "single-hi",
            PolicyKind::OfflineSingle => "offline-single",
            PolicyKind::OfflineTwo => "offline-two",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

/// A hyperparameter given as a number or as `"tuned"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Value(f64),
    Keyword(Tuned),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tuned {
    Tuned,
}

impl Param {
    pub const TUNED: Param = Param::Keyword(Tuned::Tuned);

    pub fn parse(s: &str) -> Result<Self> {
        if s == "tuned" {
            return Ok(Self::TUNED);
        }
        s.parse()
            .map(Param::Value)
            .map_err(|_| Error::Config(format!("`{s}` is neither a number nor `tuned`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataConfig {
    Mixture(MixtureSpec),
    Calibrated(CalibratedConfig),
    Csv(CsvConfig),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibratedConfig {
    /// Relative weight per grid cell; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    pub path: PathBuf,
    /// Draw `horizon` rows with replacement per seed instead of taking the
    /// first `horizon` rows.
    #[serde(default = "yes")]
    pub resample: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaConfig {
    Fixed(f64),
    Schedule(BetaTable),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BetaTable {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Sinusoid {
        mean: f64,
        amplitude: f64,
        period: f64,
    },
}

impl BetaConfig {
    pub fn schedule(self) -> BetaSchedule {
        match self {
            BetaConfig::Fixed(b) => BetaSchedule::Fixed(b),
            BetaConfig::Schedule(BetaTable::Uniform { lo, hi }) => {
                BetaSchedule::UniformRandom { lo, hi }
            }
            BetaConfig::Schedule(BetaTable::Sinusoid {
                mean,
                amplitude,
                period,
            }) => BetaSchedule::Sinusoid {
                mean,
                amplitude,
                period,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub delta_fp: f64,
    pub delta_fn: f64,
    pub beta: BetaConfig,
    #[serde(default = "unit")]
    pub beta_cap: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub eta: Param,
    pub epsilon: Param,
    #[serde(default)]
    pub pseudo_loss: PseudoLossVariant,
    /// Cost bound used for tuning; the cost cap when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub betas: Vec<f64>,
    pub ratios: Vec<f64>,
    pub etas: Vec<f64>,
    pub bits: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub seeds: usize,
    pub horizon: usize,
    pub bits: u8,
    pub out: PathBuf,
    pub policies: Vec<PolicyKind>,
    pub data: DataConfig,
    pub costs: CostConfig,
    pub learner: LearnerConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset()
    }
}

impl ExperimentConfig {
    /// Reference operating point: 4-bit scores, false positives at 0.7 of a
    /// false negative, 10^4 rounds, unit learning rate, tuned exploration.
    pub fn preset() -> Self {
        Self {
            seed: 0,
            seeds: 1,
            horizon: 10_000,
            bits: 4,
            out: PathBuf::from("out"),
            policies: PolicyKind::ALL.to_vec(),
            data: DataConfig::Mixture(MixtureSpec::reference()),
            costs: CostConfig {
                delta_fp: 0.7,
                delta_fn: 1.0,
                beta: BetaConfig::Fixed(0.3),
                beta_cap: 1.0,
            },
            learner: LearnerConfig {
                eta: Param::Value(1.0),
                epsilon: Param::TUNED,
                pseudo_loss: PseudoLossVariant::Unbiased,
                beta_bar: None,
            },
            sweep: SweepConfig {
                betas: (1..=9).map(|k| k as f64 / 10.0).collect(),
                ratios: vec![0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
                etas: vec![0.001, 0.01, 0.1, 1.0, 10.0],
                bits: (2..=8).collect(),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.policies.is_empty() {
            return bad("policy list is empty".into());
        }
        self.cost_model()?;
        if let Some(b) = self.learner.beta_bar {
            if !(b > 0.0 && b <= 1.0) {
                return bad(format!("beta_bar must lie in (0, 1], got {b}"));
            }
        }
        for p in [self.learner.eta, self.learner.epsilon] {
            if let Param::Value(v) = p {
                if !(v.is_finite() && v > 0.0) {
                    return bad(format!("learner parameters must be positive, got {v}"));
                }
            }
        }
        crate::domain::Score::new(0, self.bits).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        let c = &self.costs;
        CostModel::new(c.delta_fp, c.delta_fn, c.beta.schedule(), c.beta_cap)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn beta_bar(&self) -> f64 {
        self.learner.beta_bar.unwrap_or(self.costs.beta_cap)
    }

    /// `(eta, epsilon)` for a run of `horizon` rounds on a `bits` grid.
    pub fn learner_params(&self, bits: u8, horizon: usize) -> Result<(f64, f64)> {
        let (eps_star, eta_star) = tuned_params(bits, horizon, self.beta_bar())?;
        let eta = match self.learner.eta {
            Param::Value(v) => v,
            Param::Keyword(_) => eta_star,
        };
        let epsilon = match self.learner.epsilon {
            Param::Value(v) => v,
            Param::Keyword(_) => eps_star,
        };
        Ok((eta, epsilon))
    }
}
