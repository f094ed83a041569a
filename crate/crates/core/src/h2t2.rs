//! H2T2: exponential weights over the two-threshold expert grid with
//! epsilon-exploration and importance-weighted pseudo-losses.
//!
//! Experts are the pairs `(theta_l, theta_u)` with `theta_l <= theta_u` on the
//! `2^b`-value score grid. For an observed score every expert lands in one of
//! three regions (predict 0, ambiguous, predict 1); the policy samples a
//! region with probability equal to its normalized weight mass, which is the
//! same as sampling an expert in proportion to its weight.
//!
//! Weights live in log space and are re-centred after every update, so no
//! weight underflows regardless of horizon or learning rate.

use serde::{Deserialize, Serialize};

use crate::domain::{phi, CostModel, Decision, Label, Region, Score, ThresholdPair};
use crate::error::{Error, Result};
use crate::harness::{Choice, Policy, RoundInput, SimRng};

/// Largest grid depth the online learner accepts (about 8.4M experts).
pub const MAX_EXPERT_BITS: u8 = 12;

/// Which pseudo-loss schedule the learner uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoLossVariant {
    /// Ambiguous experts are charged `beta_t` every round (it is announced
    /// up front); unambiguous experts are charged `phi / epsilon` whenever the
    /// exploration coin lands. Unbiased for every expert.
    #[default]
    Unbiased,
    /// Updates only on offload rounds: `beta_t` to ambiguous experts when
    /// `O_t = 1`, `phi / epsilon` to unambiguous experts when `E_t = 1`.
    Literal,
}

impl std::str::FromStr for PseudoLossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unbiased" => Ok(Self::Unbiased),
            "literal" => Ok(Self::Literal),
            other => Err(Error::Config(format!(
                "unknown pseudo-loss variant `{other}` (expected unbiased|literal)"
            ))),
        }
    }
}

/// `|Theta| = 2^(b-1) * (2^b + 1)`.
pub fn expert_count(bits: u8) -> u64 {
    let n = 1u64 << bits;
    n * (n + 1) / 2
}

/// Normalized region masses for one observed score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMasses {
    /// Ambiguous (offload) region.
    pub q: f64,
    /// Predict-1 region.
    pub p: f64,
    /// Predict-0 region.
    pub r: f64,
}

/// What the learner sees after a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback {
    pub score: Score,
    pub beta: f64,
    /// `O_t`.
    pub offloaded: bool,
    /// `E_t`.
    pub explored: bool,
    /// `zeta_t`, the raw exploration coin.
    pub exploration_draw: bool,
    /// Present iff `offloaded`.
    pub rdl_label: Option<Label>,
}

pub(crate) fn region_pseudo_loss(
    region: Region,
    fb: &Feedback,
    costs: &CostModel,
    epsilon: f64,
    variant: PseudoLossVariant,
) -> Result<f64> {
    match region.prediction() {
        None => Ok(match variant {
            PseudoLossVariant::Unbiased => fb.beta,
            PseudoLossVariant::Literal if fb.offloaded => fb.beta,
            PseudoLossVariant::Literal => 0.0,
        }),
        Some(pred) => {
            let charged = match variant {
                PseudoLossVariant::Unbiased => fb.exploration_draw,
                PseudoLossVariant::Literal => fb.explored,
            };
            if !charged {
                return Ok(0.0);
            }
            let label = fb.rdl_label.ok_or(Error::MissingFeedback { round: 0 })?;
            Ok(phi(pred, label, costs) / epsilon)
        }
    }
}

/// Estimated loss of one expert for the round described by `fb`.
pub fn pseudo_loss(
    pair: ThresholdPair,
    fb: &Feedback,
    costs: &CostModel,
    epsilon: f64,
    variant: PseudoLossVariant,
) -> Result<f64> {
    region_pseudo_loss(pair.region(fb.score), fb, costs, epsilon, variant)
}

/// Region choice from the two uniform draws.
///
/// Offloads when `psi <= q` or `zeta`; `E_t` is set only when the coin forced
/// an offload the drawn expert would not have made.
pub fn decide(masses: RegionMasses, psi: f64, zeta: bool) -> Choice {
    let ambiguous = psi <= masses.q;
    let local_prediction = if ambiguous {
        None
    } else if psi <= masses.q + masses.p {
        Some(Label::One)
    } else {
        Some(Label::Zero)
    };
    match local_prediction {
        Some(pred) if !zeta => Choice {
            decision: Decision::local(pred),
            explored: false,
            local_prediction,
        },
        _ => Choice {
            decision: Decision::Offload,
            explored: zeta && !ambiguous,
            local_prediction,
        },
    }
}

/// `(epsilon*, eta*)` minimizing the regret bound for horizon `T`.
pub fn tuned_params(bits: u8, horizon: usize, beta_cap: f64) -> Result<(f64, f64)> {
    if horizon == 0 || beta_cap <= 0.0 {
        return Err(Error::invalid(format!(
            "tuning needs horizon >= 1 and beta cap > 0 (got {horizon}, {beta_cap})"
        )));
    }
    let ln_experts = (expert_count(bits) as f64).ln();
    let t = horizon as f64;
    let epsilon = (ln_experts / (2.0 * beta_cap * beta_cap * t))
        .cbrt()
        .min(1.0);
    let eta = (2.0 * epsilon * ln_experts / t).sqrt();
    Ok((epsilon, eta))
}

/// `(epsilon * beta + eta / (2 epsilon)) T + ln|Theta| / eta`.
pub fn regret_bound(eta: f64, epsilon: f64, horizon: usize, beta_cap: f64, experts: u64) -> f64 {
    let t = horizon as f64;
    (epsilon * beta_cap + eta / (2.0 * epsilon)) * t + (experts as f64).ln() / eta
}

/// Weighted expert set over threshold pairs.
#[derive(Debug, Clone)]
pub struct ExpertGrid {
    bits: u8,
    cells: usize,
    pairs: Vec<ThresholdPair>,
    log_weights: Vec<f64>,
    eta: f64,
    epsilon: f64,
    variant: PseudoLossVariant,
    // Linear weights relative to the current maximum, plus the prefix sums
    // that answer region queries in O(1).
    weights: Vec<f64>,
    total: f64,
    // Σ_{u <= i} Σ_l w(l, u)
    upper_prefix: Vec<f64>,
    // Σ_{l > i} Σ_u w(l, u)
    lower_suffix: Vec<f64>,
}

impl ExpertGrid {
    pub fn new(bits: u8, eta: f64, epsilon: f64, variant: PseudoLossVariant) -> Result<Self> {
        if bits == 0 || bits > MAX_EXPERT_BITS {
            return Err(Error::invalid(format!(
                "expert grid bits must be in 1..={MAX_EXPERT_BITS}, got {bits}"
            )));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be > 0, got {eta}"
            )));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::invalid(format!(
                "exploration rate must be in (0, 1], got {epsilon}"
            )));
        }
        let cells = 1usize << bits;
        let mut pairs = Vec::with_capacity(expert_count(bits) as usize);
        for l in 0..cells as u32 {
            for u in l..cells as u32 {
                pairs.push(ThresholdPair::new(l, u, bits)?);
            }
        }
        let n = pairs.len();
        let mut grid = Self {
            bits,
            cells,
            pairs,
            log_weights: vec![0.0; n],
            eta,
            epsilon,
            variant,
            weights: vec![1.0; n],
            total: n as f64,
            upper_prefix: vec![0.0; cells],
            lower_suffix: vec![0.0; cells],
        };
        grid.refresh();
        Ok(grid)
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn pairs(&self) -> &[ThresholdPair] {
        &self.pairs
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn variant(&self) -> PseudoLossVariant {
        self.variant
    }

    /// Log weights, shifted so the largest is 0.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `w / W` for every pair, in `pairs()` order.
    pub fn normalized_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / self.total).collect()
    }

    /// Overwrites the log weights (any additive shift is irrelevant).
    pub fn set_log_weights(&mut self, log_weights: Vec<f64>) -> Result<()> {
        if log_weights.len() != self.pairs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.pairs.len(),
                actual: log_weights.len(),
            });
        }
        if log_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("log weights must be finite"));
        }
        self.log_weights = log_weights;
        self.refresh();
        Ok(())
    }

    /// Expert with the largest weight; ties resolve to the earliest pair.
    pub fn argmax_pair(&self) -> ThresholdPair {
        let mut best = 0;
        for (k, &w) in self.log_weights.iter().enumerate() {
            if w > self.log_weights[best] {
                best = k;
            }
        }
        self.pairs[best]
    }

    pub fn region_masses(&self, score: Score) -> RegionMasses {
        let i = score.index() as usize;
        debug_assert!(i < self.cells);
        let p = self.upper_prefix[i] / self.total;
        let r = self.lower_suffix[i] / self.total;
        let q = (1.0 - p - r).max(0.0);
        RegionMasses { q, p, r }
    }

    /// Multiplies every weight by `exp(-eta * pseudo_loss)`.
    pub fn update(&mut self, fb: &Feedback, costs: &CostModel) -> Result<()> {
        if self.variant == PseudoLossVariant::Literal && !fb.offloaded {
            return Ok(());
        }
        let charge = |region| region_pseudo_loss(region, fb, costs, self.epsilon, self.variant);
        let amb = self.eta * charge(Region::Ambiguous)?;
        let low = self.eta * charge(Region::Predict0)?;
        let high = self.eta * charge(Region::Predict1)?;
        let i = fb.score.index();
        for (pair, lw) in self.pairs.iter().zip(self.log_weights.iter_mut()) {
            *lw -= if i < pair.lower() {
                low
            } else if i < pair.upper() {
                amb
            } else {
                high
            };
        }
        self.refresh();
        Ok(())
    }

    fn refresh(&mut self) {
        let max = self
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut row = vec![0.0; self.cells];
        let mut col = vec![0.0; self.cells];
        self.total = 0.0;
        for ((pair, lw), w) in self
            .pairs
            .iter()
            .zip(self.log_weights.iter_mut())
            .zip(self.weights.iter_mut())
        {
            *lw -= max;
            *w = lw.exp();
            row[pair.lower() as usize] += *w;
            col[pair.upper() as usize] += *w;
            self.total += *w;
        }
        let mut acc = 0.0;
        for (i, c) in col.iter().enumerate() {
            acc += c;
            self.upper_prefix[i] = acc;
        }
        acc = 0.0;
        for i in (0..self.cells).rev() {
            self.lower_suffix[i] = acc;
            acc += row[i];
        }
    }
}

/// The online policy: an [`ExpertGrid`] plus the per-round draws.
#[derive(Debug, Clone)]
pub struct H2t2Policy {
    grid: ExpertGrid,
    pending_zeta: bool,
}

impl H2t2Policy {
    pub fn new(bits: u8, eta: f64, epsilon: f64, variant: PseudoLossVariant) -> Result<Self> {
        Ok(Self {
            grid: ExpertGrid::new(bits, eta, epsilon, variant)?,
            pending_zeta: false,
        })
    }

    pub fn grid(&self) -> &ExpertGrid {
        &self.grid
    }
}

impl Policy for H2t2Policy {
    fn name(&self) -> String {
        "h2t2".to_string()
    }

    fn decide(&mut self, input: &RoundInput, rng: &mut SimRng) -> Choice {
        use rand::Rng;
        let masses = self.grid.region_masses(input.score);
        // psi first, then zeta; psi in (0, 1] so that q = 0 never offloads
        let psi = 1.0 - rng.random::<f64>();
        let zeta = rng.random::<f64>() < self.grid.epsilon;
        self.pending_zeta = zeta;
        decide(masses, psi, zeta)
    }

    fn learn(
        &mut self,
        input: &RoundInput,
        choice: &Choice,
        rdl_label: Option<Label>,
        costs: &CostModel,
    ) -> Result<()> {
        let fb = Feedback {
            score: input.score,
            beta: input.beta,
            offloaded: choice.decision.is_offload(),
            explored: choice.explored,
            exploration_draw: self.pending_zeta,
            rdl_label,
        };
        self.grid.update(&fb, costs).map_err(|e| match e {
            Error::MissingFeedback { .. } => Error::MissingFeedback { round: input.t },
            other => other,
        })
    }
}
