//! Domain objects shared by every policy: quantized scores, labels, the cost
//! model, threshold pairs and the per-round loss accounting.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported quantization depth.
pub const MAX_BITS: u8 = 16;

fn check_bits(bits: u8) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::invalid(format!(
            "quantization bits must be in 1..={MAX_BITS}, got {bits}"
        )));
    }
    Ok(())
}

/// Number of cells on a `bits`-bit score grid.
pub fn grid_cells(bits: u8) -> u32 {
    1u32 << bits
}

/// Local-model score for class 1, quantized to `{i / 2^b : i = 0..2^b-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Score {
    index: u32,
    bits: u8,
}

impl Score {
    pub fn new(index: u32, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        if index >= grid_cells(bits) {
            return Err(Error::invalid(format!(
                "score index {index} outside the {bits}-bit grid"
            )));
        }
        Ok(Self { index, bits })
    }

    /// Quantizes a raw score in `[0, 1]` with `floor(f * 2^b)`; `f = 1` lands
    /// in the top cell.
    pub fn quantize(raw: f64, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        if !(0.0..=1.0).contains(&raw) {
            return Err(Error::invalid(format!("score {raw} outside [0, 1]")));
        }
        let cells = grid_cells(bits);
        let index = ((raw * cells as f64).floor() as u32).min(cells - 1);
        Ok(Self { index, bits })
    }

    pub fn index(self) -> u32 {
        self.index
    }

    pub fn bits(self) -> u8 {
        self.bits
    }

    pub fn cells(self) -> u32 {
        grid_cells(self.bits)
    }

    pub fn value(self) -> f64 {
        self.index as f64 / self.cells() as f64
    }

    /// Index-space confidence `max(i, 2^b - i)`, i.e. `max(f, 1 - f) * 2^b`.
    pub fn confidence_index(self) -> u32 {
        self.index.max(self.cells() - self.index)
    }

    /// Argmax prediction; the tie at `f = 0.5` goes to class 1.
    pub fn argmax(self) -> Label {
        if 2 * self.index >= self.cells() {
            Label::One
        } else {
            Label::Zero
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Zero,
    One,
}

impl Label {
    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Label::Zero),
            1 => Ok(Label::One),
            other => Err(Error::invalid(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Zero => 0,
            Label::One => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Local0,
    Local1,
    Offload,
}

impl Decision {
    pub fn local(label: Label) -> Self {
        match label {
            Label::Zero => Decision::Local0,
            Label::One => Decision::Local1,
        }
    }

    pub fn prediction(self) -> Option<Label> {
        match self {
            Decision::Local0 => Some(Label::Zero),
            Decision::Local1 => Some(Label::One),
            Decision::Offload => None,
        }
    }

    pub fn is_offload(self) -> bool {
        self == Decision::Offload
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Local0 => "local0",
            Decision::Local1 => "local1",
            Decision::Offload => "offload",
        }
    }
}

/// Where a score falls relative to one threshold pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Predict0,
    Ambiguous,
    Predict1,
}

impl Region {
    pub fn prediction(self) -> Option<Label> {
        match self {
            Region::Predict0 => Some(Label::Zero),
            Region::Predict1 => Some(Label::One),
            Region::Ambiguous => None,
        }
    }
}

/// Two thresholds `(theta_l, theta_u)` stored as grid indices.
///
/// `upper` may equal `2^b` (threshold value 1), one cell past the top score.
/// The online expert set never uses that column; the offline comparator
/// family does, so that full offloading is a member of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ThresholdPair {
    lower: u32,
    upper: u32,
    bits: u8,
}

impl ThresholdPair {
    pub fn new(lower: u32, upper: u32, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        if lower > upper || upper > grid_cells(bits) {
            return Err(Error::invalid(format!(
                "threshold pair ({lower}, {upper}) invalid on the {bits}-bit grid"
            )));
        }
        Ok(Self { lower, upper, bits })
    }

    pub fn lower(self) -> u32 {
        self.lower
    }

    pub fn upper(self) -> u32 {
        self.upper
    }

    pub fn bits(self) -> u8 {
        self.bits
    }

    pub fn theta_l(self) -> f64 {
        self.lower as f64 / grid_cells(self.bits) as f64
    }

    pub fn theta_u(self) -> f64 {
        self.upper as f64 / grid_cells(self.bits) as f64
    }

    pub fn width(self) -> u32 {
        self.upper - self.lower
    }

    /// Half-open band: ambiguous iff `theta_l <= f < theta_u`, predict 1 iff
    /// `f >= theta_u`, predict 0 iff `f < theta_l`.
    pub fn region(self, score: Score) -> Region {
        debug_assert_eq!(score.bits(), self.bits);
        let i = score.index();
        if i < self.lower {
            Region::Predict0
        } else if i < self.upper {
            Region::Ambiguous
        } else {
            Region::Predict1
        }
    }

    pub fn decision(self, score: Score) -> Decision {
        match self.region(score) {
            Region::Predict0 => Decision::Local0,
            Region::Ambiguous => Decision::Offload,
            Region::Predict1 => Decision::Local1,
        }
    }
}

impl fmt::Display for ThresholdPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.theta_l(), self.theta_u())
    }
}

/// Source of the per-round offloading cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BetaSchedule {
    Fixed(f64),
    UniformRandom {
        lo: f64,
        hi: f64,
    },
    Trace(Vec<f64>),
    Sinusoid {
        mean: f64,
        amplitude: f64,
        period: f64,
    },
}

impl BetaSchedule {
    fn validate(&self, cap: f64) -> Result<()> {
        let in_range = |b: f64| b.is_finite() && (0.0..=cap).contains(&b);
        let ok = match self {
            BetaSchedule::Fixed(b) => in_range(*b),
            BetaSchedule::UniformRandom { lo, hi } => in_range(*lo) && in_range(*hi) && lo <= hi,
            BetaSchedule::Trace(values) => values.iter().all(|&b| in_range(b)),
            BetaSchedule::Sinusoid {
                mean,
                amplitude,
                period,
            } => {
                in_range(mean - amplitude.abs())
                    && in_range(mean + amplitude.abs())
                    && period.is_finite()
                    && *period > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "offload cost schedule {self:?} leaves [0, {cap}]"
            )))
        }
    }

    /// Emits `beta_t` for rounds `0..n`. Only `UniformRandom` consumes the RNG.
    pub fn realize<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            BetaSchedule::Fixed(b) => Ok(vec![*b; n]),
            BetaSchedule::UniformRandom { lo, hi } => Ok((0..n)
                .map(|_| lo + (hi - lo) * rng.random::<f64>())
                .collect()),
            BetaSchedule::Trace(values) => {
                if values.len() < n {
                    return Err(Error::invalid(format!(
                        "offload cost trace has {} entries but {n} rounds were requested",
                        values.len()
                    )));
                }
                Ok(values[..n].to_vec())
            }
            BetaSchedule::Sinusoid {
                mean,
                amplitude,
                period,
            } => Ok((0..n)
                .map(|t| mean + amplitude * (2.0 * PI * t as f64 / period).sin())
                .collect()),
        }
    }

    /// The constant cost, if the schedule is fixed.
    pub fn fixed_value(&self) -> Option<f64> {
        match self {
            BetaSchedule::Fixed(b) => Some(*b),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            BetaSchedule::Fixed(b) => format!("{b}"),
            BetaSchedule::UniformRandom { lo, hi } => format!("uniform({lo};{hi})"),
            BetaSchedule::Trace(_) => "trace".to_string(),
            BetaSchedule::Sinusoid {
                mean,
                amplitude,
                period,
            } => format!("sinusoid({mean};{amplitude};{period})"),
        }
    }
}

/// Normalized false-positive, false-negative and offloading costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    delta_fp: f64,
    delta_fn: f64,
    beta: BetaSchedule,
    beta_cap: f64,
}

impl CostModel {
    pub fn new(delta_fp: f64, delta_fn: f64, beta: BetaSchedule, beta_cap: f64) -> Result<Self> {
        for (name, v) in [
            ("delta_fp", delta_fp),
            ("delta_fn", delta_fn),
            ("beta_cap", beta_cap),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        beta.validate(beta_cap)?;
        Ok(Self {
            delta_fp,
            delta_fn,
            beta,
            beta_cap,
        })
    }

    /// Fixed offloading cost with the default cap of 1.
    pub fn fixed(delta_fp: f64, delta_fn: f64, beta: f64) -> Result<Self> {
        Self::new(delta_fp, delta_fn, BetaSchedule::Fixed(beta), 1.0)
    }

    pub fn delta_fp(&self) -> f64 {
        self.delta_fp
    }

    pub fn delta_fn(&self) -> f64 {
        self.delta_fn
    }

    pub fn beta(&self) -> &BetaSchedule {
        &self.beta
    }

    pub fn beta_cap(&self) -> f64 {
        self.beta_cap
    }

    pub fn with_beta(&self, beta: BetaSchedule) -> Result<Self> {
        Self::new(self.delta_fp, self.delta_fn, beta, self.beta_cap)
    }

    pub fn with_deltas(&self, delta_fp: f64, delta_fn: f64) -> Result<Self> {
        Self::new(delta_fp, delta_fn, self.beta.clone(), self.beta_cap)
    }
}

/// One round as seen by the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub score: Score,
    /// Remote-model label, used as the ground-truth proxy.
    pub rdl_label: Label,
    pub true_label: Option<Label>,
    pub beta_override: Option<f64>,
}

impl Sample {
    pub fn new(score: Score, rdl_label: Label) -> Self {
        Self {
            score,
            rdl_label,
            true_label: None,
            beta_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub decision: Decision,
    /// `E_t`: offloaded because of the exploration coin on an unambiguous draw.
    pub explored: bool,
    /// `O_t`.
    pub offloaded: bool,
    /// Loss of the local prediction; `None` on ambiguous offloads where no
    /// local prediction was formed.
    pub phi: Option<f64>,
    pub beta: f64,
    pub loss: f64,
}

/// Local misclassification loss against the remote label.
pub fn phi(local_pred: Label, rdl_label: Label, costs: &CostModel) -> f64 {
    match (local_pred, rdl_label) {
        (Label::One, Label::Zero) => costs.delta_fp,
        (Label::Zero, Label::One) => costs.delta_fn,
        _ => 0.0,
    }
}

pub fn round_loss(decision: Decision, phi: f64, beta: f64) -> f64 {
    match decision {
        Decision::Offload => beta,
        Decision::Local0 | Decision::Local1 => phi,
    }
}

/// Loss of the fixed-threshold policy `pair` on one sample.
pub fn fixed_threshold_loss(
    pair: ThresholdPair,
    sample: &Sample,
    beta: f64,
    costs: &CostModel,
) -> f64 {
    match pair.region(sample.score).prediction() {
        None => beta,
        Some(pred) => phi(pred, sample.rdl_label, costs),
    }
}
