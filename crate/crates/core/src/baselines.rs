//! Comparison policies: never offload, always offload, an online
//! single-threshold learner, and brute-force offline optima over the
//! single- and two-threshold families.
//!
//! The single-threshold family offloads when the confidence `max(f, 1 - f)`
//! falls below a threshold `theta in [1/2, 1]` and otherwise predicts the
//! argmax class. On the grid, with `N = 2^b`, a threshold is the index
//! `k in N/2..=N` and the confidence of cell `i` is `max(i, N - i)`.

use rand::Rng;

use crate::datagen::Dataset;
use crate::domain::{
    fixed_threshold_loss, grid_cells, phi, CostModel, Decision, Label, Region, RoundRecord, Sample,
    Score, ThresholdPair, MAX_BITS,
};
use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::h2t2::{decide, region_pseudo_loss, Feedback, PseudoLossVariant, RegionMasses};
use crate::harness::{fingerprint, Choice, Policy, RoundInput, SimRng};

/// Argmax prediction on every round.
pub fn no_offload_step(t: usize, sample: &Sample, beta: f64, costs: &CostModel) -> RoundRecord {
    let pred = sample.score.argmax();
    let loss = phi(pred, sample.rdl_label, costs);
    RoundRecord {
        t,
        decision: Decision::local(pred),
        explored: false,
        offloaded: false,
        phi: Some(loss),
        beta,
        loss,
    }
}

pub fn full_offload_step(t: usize, beta: f64) -> RoundRecord {
    RoundRecord {
        t,
        decision: Decision::Offload,
        explored: false,
        offloaded: true,
        phi: None,
        beta,
        loss: beta,
    }
}

fn local_choice(pred: Label) -> Choice {
    Choice {
        decision: Decision::local(pred),
        explored: false,
        local_prediction: Some(pred),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoOffload;

impl Policy for NoOffload {
    fn name(&self) -> String {
        "no-offload".into()
    }

    fn decide(&mut self, input: &RoundInput, _: &mut SimRng) -> Choice {
        local_choice(input.score.argmax())
    }

    fn learn(&mut self, _: &RoundInput, _: &Choice, _: Option<Label>, _: &CostModel) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FullOffload;

impl Policy for FullOffload {
    fn name(&self) -> String {
        "full-offload".into()
    }

    fn decide(&mut self, _: &RoundInput, _: &mut SimRng) -> Choice {
        Choice {
            decision: Decision::Offload,
            explored: false,
            local_prediction: None,
        }
    }

    fn learn(&mut self, _: &RoundInput, _: &Choice, _: Option<Label>, _: &CostModel) -> Result<()> {
        Ok(())
    }
}

/// A fixed two-threshold rule, used to replay offline optima.
#[derive(Debug, Clone)]
pub struct FixedPairPolicy {
    name: String,
    pair: ThresholdPair,
}

impl FixedPairPolicy {
    pub fn new(name: impl Into<String>, pair: ThresholdPair) -> Self {
        Self {
            name: name.into(),
            pair,
        }
    }

    pub fn pair(&self) -> ThresholdPair {
        self.pair
    }
}

impl Policy for FixedPairPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn decide(&mut self, input: &RoundInput, _: &mut SimRng) -> Choice {
        match self.pair.region(input.score).prediction() {
            Some(pred) => local_choice(pred),
            None => Choice {
                decision: Decision::Offload,
                explored: false,
                local_prediction: None,
            },
        }
    }

    fn learn(&mut self, _: &RoundInput, _: &Choice, _: Option<Label>, _: &CostModel) -> Result<()> {
        Ok(())
    }
}

/// Online exponential weights over confidence thresholds, with the same
/// exploration coin and pseudo-loss estimator as the two-threshold learner.
#[derive(Debug, Clone)]
pub struct SingleThresholdHi {
    bits: u8,
    /// Threshold indices `N/2..=N`, ascending.
    thresholds: Vec<u32>,
    log_weights: Vec<f64>,
    eta: f64,
    epsilon: f64,
    variant: PseudoLossVariant,
    pending_zeta: bool,
}

impl SingleThresholdHi {
    pub fn new(bits: u8, eta: f64, epsilon: f64, variant: PseudoLossVariant) -> Result<Self> {
        if bits == 0 || bits > MAX_BITS {
            return Err(Error::invalid(format!(
                "bits must be in 1..={MAX_BITS}, got {bits}"
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
        let n = grid_cells(bits);
        let thresholds: Vec<u32> = (n / 2..=n).collect();
        Ok(Self {
            bits,
            log_weights: vec![0.0; thresholds.len()],
            thresholds,
            eta,
            epsilon,
            variant,
            pending_zeta: false,
        })
    }

    /// Threshold values `k / N`.
    pub fn thresholds(&self) -> Vec<f64> {
        let n = grid_cells(self.bits) as f64;
        self.thresholds.iter().map(|&k| k as f64 / n).collect()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Puts all but a negligible share of the weight on threshold index `k`.
    pub fn concentrate(&mut self, k: u32) -> Result<()> {
        let pos = self
            .thresholds
            .iter()
            .position(|&x| x == k)
            .ok_or_else(|| Error::invalid(format!("threshold index {k} not on the grid")))?;
        for (j, lw) in self.log_weights.iter_mut().enumerate() {
            *lw = if j == pos { 0.0 } else { -1e6 };
        }
        Ok(())
    }

    /// Mass of thresholds above the confidence of `score`.
    fn offload_mass(&self, score: Score) -> f64 {
        let c = score.confidence_index();
        let max = self
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut above, mut total) = (0.0, 0.0);
        for (&k, &lw) in self.thresholds.iter().zip(&self.log_weights) {
            let w = (lw - max).exp();
            total += w;
            if c < k {
                above += w;
            }
        }
        above / total
    }
}

impl Policy for SingleThresholdHi {
    fn name(&self) -> String {
        "single-hi".into()
    }

    fn decide(&mut self, input: &RoundInput, rng: &mut SimRng) -> Choice {
        let q = self.offload_mass(input.score);
        // Every non-offloading threshold predicts the argmax. The unused mass
        // is set so that rounding in q + p can never flip the prediction.
        let masses = match input.score.argmax() {
            Label::One => RegionMasses { q, p: 1.0, r: 0.0 },
            Label::Zero => RegionMasses { q, p: 0.0, r: 1.0 },
        };
        let psi = 1.0 - rng.random::<f64>();
        let zeta = rng.random::<f64>() < self.epsilon;
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
        let offloaded = choice.decision.is_offload();
        if self.variant == PseudoLossVariant::Literal && !offloaded {
            return Ok(());
        }
        let fb = Feedback {
            score: input.score,
            beta: input.beta,
            offloaded,
            explored: choice.explored,
            exploration_draw: self.pending_zeta,
            rdl_label,
        };
        let local = match input.score.argmax() {
            Label::One => Region::Predict1,
            Label::Zero => Region::Predict0,
        };
        let charge = |region| {
            region_pseudo_loss(region, &fb, costs, self.epsilon, self.variant).map_err(
                |e| match e {
                    Error::MissingFeedback { .. } => Error::MissingFeedback { round: input.t },
                    other => other,
                },
            )
        };
        let amb = self.eta * charge(Region::Ambiguous)?;
        let loc = self.eta * charge(local)?;
        let c = input.score.confidence_index();
        for (&k, lw) in self.thresholds.iter().zip(self.log_weights.iter_mut()) {
            *lw -= if c < k { amb } else { loc };
        }
        let max = self
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        self.log_weights.iter_mut().for_each(|lw| *lw -= max);
        Ok(())
    }
}

/// Which threshold pairs a search ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairDomain {
    /// The online expert set: indices `0..2^b`.
    Experts,
    /// Adds `theta_u = 1`, so full offloading and every confidence rule are members.
    Closed,
}

pub fn enumerate_pairs(bits: u8, domain: PairDomain) -> Result<Vec<ThresholdPair>> {
    let n = grid_cells(bits);
    let top = match domain {
        PairDomain::Experts => n - 1,
        PairDomain::Closed => n,
    };
    let mut pairs = Vec::new();
    for l in 0..=top {
        for u in l..=top {
            pairs.push(ThresholdPair::new(l, u, bits)?);
        }
    }
    Ok(pairs)
}

/// The two-threshold rule equal, round by round, to the confidence rule with
/// threshold index `k`.
pub fn single_threshold_embedding(k: u32, bits: u8) -> Result<ThresholdPair> {
    let n = grid_cells(bits);
    if k < n / 2 || k > n {
        return Err(Error::invalid(format!(
            "confidence threshold index {k} outside {}..={n}",
            n / 2
        )));
    }
    let upper = k;
    let lower = (n - k + 1).min(upper);
    ThresholdPair::new(lower, upper, bits)
}

/// Realized loss of a fixed pair over the whole sequence.
pub fn pair_loss(pair: ThresholdPair, dataset: &Dataset, betas: &[f64], costs: &CostModel) -> f64 {
    dataset
        .samples()
        .iter()
        .zip(betas)
        .map(|(s, &b)| fixed_threshold_loss(pair, s, b, costs))
        .collect::<ExactSum>()
        .value()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflinePair {
    pub pair: ThresholdPair,
    pub loss: f64,
    pub fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSingle {
    /// Confidence threshold index `k`; the threshold value is `k / 2^b`.
    pub index: u32,
    pub theta: f64,
    /// Equivalent two-threshold rule.
    pub pair: ThresholdPair,
    pub loss: f64,
    pub fingerprint: u64,
}

fn check_inputs(dataset: &Dataset, betas: &[f64]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if betas.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            actual: betas.len(),
        });
    }
    Ok(())
}

/// Tie order: lower loss, then narrower band, then lexicographic.
fn better(candidate: (f64, ThresholdPair), incumbent: &Option<(f64, ThresholdPair)>) -> bool {
    match incumbent {
        None => true,
        Some((loss, pair)) => {
            let key = |l: f64, p: &ThresholdPair| (l, p.width(), p.lower(), p.upper());
            key(candidate.0, &candidate.1).partial_cmp(&key(*loss, pair))
                == Some(std::cmp::Ordering::Less)
        }
    }
}

/// Per-cell label counts and cost sums; any pair's loss is read off in
/// `O(1)` expansion merges.
struct Histogram {
    bits: u8,
    delta_fp: f64,
    delta_fn: f64,
    // ones_below[i] = #{rdl = 1, index < i}, zeros_from[i] = #{rdl = 0, index >= i}
    ones_below: Vec<u64>,
    zeros_from: Vec<u64>,
    // beta_below[i] = exact sum of beta over rounds with index < i
    beta_below: Vec<ExactSum>,
}

impl Histogram {
    fn new(dataset: &Dataset, betas: &[f64], costs: &CostModel) -> Self {
        let n = grid_cells(dataset.bits()) as usize;
        let mut ones = vec![0u64; n];
        let mut zeros = vec![0u64; n];
        let mut beta = vec![ExactSum::new(); n];
        for (s, &b) in dataset.samples().iter().zip(betas) {
            let i = s.score.index() as usize;
            match s.rdl_label {
                Label::One => ones[i] += 1,
                Label::Zero => zeros[i] += 1,
            }
            beta[i].add(b);
        }
        let mut ones_below = vec![0u64; n + 1];
        let mut beta_below = vec![ExactSum::new(); n + 1];
        for i in 0..n {
            ones_below[i + 1] = ones_below[i] + ones[i];
            let mut acc = beta_below[i].clone();
            acc.merge(&beta[i]);
            beta_below[i + 1] = acc;
        }
        let mut zeros_from = vec![0u64; n + 1];
        for i in (0..n).rev() {
            zeros_from[i] = zeros_from[i + 1] + zeros[i];
        }
        Self {
            bits: dataset.bits(),
            delta_fp: costs.delta_fp(),
            delta_fn: costs.delta_fn(),
            ones_below,
            zeros_from,
            beta_below,
        }
    }

    fn loss(&self, pair: ThresholdPair) -> f64 {
        debug_assert_eq!(pair.bits(), self.bits);
        let (l, u) = (pair.lower() as usize, pair.upper() as usize);
        let mut total = ExactSum::new();
        total.add_product(self.delta_fn, self.ones_below[l] as f64);
        total.add_product(self.delta_fp, self.zeros_from[u] as f64);
        total.merge(&self.beta_below[u]);
        total.merge_negated(&self.beta_below[l]);
        total.value()
    }
}

/// Best fixed pair in hindsight, from per-cell prefix sums.
pub fn offline_best_two_threshold(
    dataset: &Dataset,
    costs: &CostModel,
    betas: &[f64],
    domain: PairDomain,
) -> Result<OfflinePair> {
    check_inputs(dataset, betas)?;
    let hist = Histogram::new(dataset, betas, costs);
    let mut best = None;
    for pair in enumerate_pairs(dataset.bits(), domain)? {
        let loss = hist.loss(pair);
        if better((loss, pair), &best) {
            best = Some((loss, pair));
        }
    }
    let (loss, pair) = best.expect("pair set is never empty");
    Ok(OfflinePair {
        pair,
        loss,
        fingerprint: fingerprint(dataset, betas),
    })
}

/// Same optimum by replaying every pair over every round.
pub fn offline_best_two_threshold_naive(
    dataset: &Dataset,
    costs: &CostModel,
    betas: &[f64],
    domain: PairDomain,
) -> Result<OfflinePair> {
    check_inputs(dataset, betas)?;
    let mut best = None;
    for pair in enumerate_pairs(dataset.bits(), domain)? {
        let loss = pair_loss(pair, dataset, betas, costs);
        if better((loss, pair), &best) {
            best = Some((loss, pair));
        }
    }
    let (loss, pair) = best.expect("pair set is never empty");
    Ok(OfflinePair {
        pair,
        loss,
        fingerprint: fingerprint(dataset, betas),
    })
}

/// Best confidence threshold in hindsight; ties go to the smallest threshold.
pub fn offline_best_single_threshold(
    dataset: &Dataset,
    costs: &CostModel,
    betas: &[f64],
) -> Result<OfflineSingle> {
    check_inputs(dataset, betas)?;
    let bits = dataset.bits();
    let n = grid_cells(bits);
    let hist = Histogram::new(dataset, betas, costs);
    let mut best: Option<(f64, u32)> = None;
    for k in n / 2..=n {
        let loss = hist.loss(single_threshold_embedding(k, bits)?);
        if best.is_none_or(|(b, _)| loss < b) {
            best = Some((loss, k));
        }
    }
    let (loss, index) = best.expect("threshold set is never empty");
    Ok(OfflineSingle {
        index,
        theta: index as f64 / n as f64,
        pair: single_threshold_embedding(index, bits)?,
        loss,
        fingerprint: fingerprint(dataset, betas),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_calibrated, Provenance, ScoreLaw};
    use crate::harness::{run, run_with_betas};
    use proptest::prelude::*;

    fn costs() -> CostModel {
        CostModel::fixed(0.7, 1.0, 0.3).unwrap()
    }

    fn sample(i: u32, bits: u8, rdl: u8) -> Sample {
        Sample::new(Score::new(i, bits).unwrap(), Label::from_bit(rdl).unwrap())
    }

    fn dataset(samples: Vec<Sample>, bits: u8) -> Dataset {
        Dataset::new(samples, bits, Provenance::Manual).unwrap()
    }

    // Direct confidence rule, written without the embedding.
    fn confidence_rule_loss(k: u32, d: &Dataset, betas: &[f64], c: &CostModel) -> f64 {
        d.samples()
            .iter()
            .zip(betas)
            .map(|(s, &b)| {
                if s.score.confidence_index() < k {
                    b
                } else {
                    phi(s.score.argmax(), s.rdl_label, c)
                }
            })
            .collect::<ExactSum>()
            .value()
    }

    #[test]
    fn step_examples() {
        let c = costs();
        let s = Sample::new(Score::quantize(0.9, 4).unwrap(), Label::One);
        let r = no_offload_step(0, &s, 0.3, &c);
        assert_eq!((r.decision, r.loss), (Decision::Local1, 0.0));
        let s = Sample::new(Score::quantize(0.9, 4).unwrap(), Label::Zero);
        assert_eq!(no_offload_step(0, &s, 0.3, &c).loss, 0.7);
        let s = Sample::new(Score::quantize(0.5, 4).unwrap(), Label::Zero);
        let r = no_offload_step(0, &s, 0.3, &c);
        assert_eq!((r.decision, r.loss), (Decision::Local1, 0.7));
        assert_eq!(full_offload_step(0, 0.3).loss, 0.3);
        assert_eq!(full_offload_step(0, 0.0).loss, 0.0);
    }

    #[test]
    fn trivial_policies_are_family_members() {
        let d = gen_calibrated(&ScoreLaw::uniform(3).unwrap(), 300, 1).unwrap();
        let c = costs();
        let betas: Vec<f64> = (0..300).map(|t| (t % 7) as f64 / 10.0).collect();
        let no = FixedPairPolicy::new("n", ThresholdPair::new(4, 4, 3).unwrap());
        let full = FixedPairPolicy::new("f", ThresholdPair::new(0, 8, 3).unwrap());
        let a = run_with_betas(&mut NoOffload, &d, &c, &betas, 0).unwrap();
        let b = run_with_betas(&mut no.clone(), &d, &c, &betas, 0).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.loss, y.loss);
        }
        let a = run_with_betas(&mut FullOffload, &d, &c, &betas, 0).unwrap();
        let b = run_with_betas(&mut full.clone(), &d, &c, &betas, 0).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.loss, y.loss);
        }
        let total: f64 = betas.iter().copied().collect::<ExactSum>().value();
        assert_eq!(a.total_loss(), total);
    }

    #[test]
    fn pair_counts() {
        assert_eq!(enumerate_pairs(2, PairDomain::Experts).unwrap().len(), 10);
        assert_eq!(enumerate_pairs(2, PairDomain::Closed).unwrap().len(), 15);
    }

    #[test]
    fn separable_data_prefers_split_at_half() {
        let d = dataset(
            (0..40)
                .map(|t| sample(7 + (t % 2), 4, (t % 2) as u8))
                .collect(),
            4,
        );
        let best =
            offline_best_two_threshold(&d, &costs(), &[0.3; 40], PairDomain::Closed).unwrap();
        assert_eq!(best.loss, 0.0);
        assert_eq!(best.pair, ThresholdPair::new(8, 8, 4).unwrap());
    }

    #[test]
    fn toy_set_by_hand() {
        // f = 1/4 (rdl 1), 1/2 (rdl 1), 3/4 (rdl 0) at two bits
        let d = dataset(vec![sample(1, 2, 1), sample(2, 2, 1), sample(3, 2, 0)], 2);
        let betas = [0.3; 3];
        let c = costs();
        let naive = offline_best_two_threshold_naive(&d, &c, &betas, PairDomain::Experts).unwrap();
        let fast = offline_best_two_threshold(&d, &c, &betas, PairDomain::Experts).unwrap();
        assert_eq!(naive, fast);
        // On the expert grid the top cell can never be offloaded, so it costs
        // 0.7 under every pair; (0, 0) and (1, 1) also predict 1 on both
        // rdl = 1 rounds and tie at 0.7, and the lexicographic rule keeps (0, 0).
        let mut hand = f64::INFINITY;
        for l in 0..4u32 {
            for u in l..4u32 {
                let loss: f64 = d
                    .samples()
                    .iter()
                    .map(|s| {
                        let i = s.score.index();
                        if i < l {
                            if s.rdl_label == Label::One {
                                1.0
                            } else {
                                0.0
                            }
                        } else if i < u {
                            0.3
                        } else if s.rdl_label == Label::Zero {
                            0.7
                        } else {
                            0.0
                        }
                    })
                    .sum();
                hand = hand.min(loss);
            }
        }
        assert!((fast.loss - hand).abs() < 1e-12);
        assert_eq!(fast.pair, ThresholdPair::new(0, 0, 2).unwrap());

        let single = offline_best_single_threshold(&d, &c, &betas).unwrap();
        let brute = (2..=4)
            .map(|k| confidence_rule_loss(k, &d, &betas, &c))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(single.loss, brute);
    }

    #[test]
    fn free_offloading_offloads_everything() {
        let d = gen_calibrated(&ScoreLaw::uniform(3).unwrap(), 200, 2).unwrap();
        let best =
            offline_best_two_threshold(&d, &costs(), &[0.0; 200], PairDomain::Closed).unwrap();
        assert_eq!(best.loss, 0.0);
    }

    #[test]
    fn expensive_offloading_means_single_threshold_at_half() {
        let d = gen_calibrated(&ScoreLaw::uniform(4).unwrap(), 500, 3).unwrap();
        let best = offline_best_single_threshold(&d, &costs(), &[1.0; 500]).unwrap();
        assert_eq!(best.theta, 0.5);
    }

    #[test]
    fn symmetric_data_single_matches_two() {
        // mirror-symmetric dataset with equal costs
        let c = CostModel::fixed(1.0, 1.0, 0.3).unwrap();
        let base = gen_calibrated(&ScoreLaw::uniform(4).unwrap(), 400, 8).unwrap();
        let mut samples = Vec::new();
        for s in base.samples() {
            samples.push(*s);
            let mirror = (16 - s.score.index()) % 16;
            if s.score.index() != 0 {
                let flipped = if s.rdl_label == Label::One {
                    Label::Zero
                } else {
                    Label::One
                };
                samples.push(Sample::new(Score::new(mirror, 4).unwrap(), flipped));
            }
        }
        let d = dataset(samples, 4);
        let betas = vec![0.3; d.len()];
        let two = offline_best_two_threshold(&d, &c, &betas, PairDomain::Closed).unwrap();
        let one = offline_best_single_threshold(&d, &c, &betas).unwrap();
        // f = 0 has no mirror partner, so allow one grid cell's worth of rounds
        let cell0 = d.samples().iter().filter(|s| s.score.index() == 0).count() as f64;
        assert!(one.loss - two.loss <= cell0 + 1e-9);
    }

    #[test]
    fn single_online_extremes() {
        let c = costs();
        let d = gen_calibrated(&ScoreLaw::uniform(4).unwrap(), 300, 4).unwrap();
        let mut low = SingleThresholdHi::new(4, 1e-9, 1e-9, PseudoLossVariant::Unbiased).unwrap();
        low.concentrate(8).unwrap();
        let t = run(&mut low, &d, &c, 1).unwrap();
        assert!(t.records.iter().all(|r| !r.offloaded || r.explored));

        let mut high = SingleThresholdHi::new(4, 1e-9, 1e-9, PseudoLossVariant::Unbiased).unwrap();
        high.concentrate(16).unwrap();
        let t = run(&mut high, &d, &c, 1).unwrap();
        for (r, s) in t.records.iter().zip(d.samples()) {
            // only f = 0 reaches confidence 1
            assert_eq!(r.offloaded, s.score.index() != 0 || r.explored);
        }
    }

    #[test]
    fn embedding_matches_confidence_rule() {
        for bits in 1..=5u8 {
            let n = grid_cells(bits);
            for k in n / 2..=n {
                let pair = single_threshold_embedding(k, bits).unwrap();
                for i in 0..n {
                    let s = Score::new(i, bits).unwrap();
                    let expected = if s.confidence_index() < k {
                        Decision::Offload
                    } else {
                        Decision::local(s.argmax())
                    };
                    assert_eq!(pair.decision(s), expected, "b={bits} k={k} i={i}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn naive_equals_prefix_sums(
            bits in 1u8..=3,
            rows in proptest::collection::vec((0u32..8, 0u8..2, 0u32..=10), 1..50),
            dfp in 0u32..=10, dfn in 0u32..=10,
        ) {
            let n = grid_cells(bits);
            let samples: Vec<Sample> = rows.iter().map(|&(i, r, _)| sample(i % n, bits, r)).collect();
            let betas: Vec<f64> = rows.iter().map(|&(_, _, b)| b as f64 / 10.0).collect();
            let d = dataset(samples, bits);
            let c = CostModel::fixed(dfp as f64 / 10.0, dfn as f64 / 10.0, 0.3).unwrap();
            for domain in [PairDomain::Experts, PairDomain::Closed] {
                let a = offline_best_two_threshold(&d, &c, &betas, domain).unwrap();
                let b = offline_best_two_threshold_naive(&d, &c, &betas, domain).unwrap();
                prop_assert_eq!(a, b);
            }
            let single = offline_best_single_threshold(&d, &c, &betas).unwrap();
            let brute = (n / 2..=n).map(|k| confidence_rule_loss(k, &d, &betas, &c)).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(single.loss, brute);
        }
    }
}
