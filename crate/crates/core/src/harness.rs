//! Replay loop, loss accounting and regret bookkeeping.
//!
//! A policy sees the score and the announced offloading cost, commits to a
//! decision, and only then (and only on offload) gets the remote label. The
//! [`Policy`] trait has no other channel to the sample, so label hygiene is
//! enforced by the API shape.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{OfflinePair, OfflineSingle};
use crate::datagen::Dataset;
use crate::domain::{phi, round_loss, CostModel, Decision, Label, RoundRecord, Score};
use crate::error::{Error, Result};
use crate::exact::ExactSum;

pub type SimRng = ChaCha8Rng;

/// Salt for the offloading-cost stream, so it never aliases the policy stream.
const BETA_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Everything a policy may look at before deciding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundInput {
    pub t: usize,
    pub score: Score,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Choice {
    pub decision: Decision,
    /// `E_t`.
    pub explored: bool,
    /// Local prediction formed this round, if any. Must match the decision on
    /// local rounds; may be present on exploration offloads.
    pub local_prediction: Option<Label>,
}

pub trait Policy {
    fn name(&self) -> String;

    fn decide(&mut self, input: &RoundInput, rng: &mut SimRng) -> Choice;

    /// Called once per round after the decision. `rdl_label` is `Some` exactly
    /// when the round was offloaded.
    fn learn(
        &mut self,
        input: &RoundInput,
        choice: &Choice,
        rdl_label: Option<Label>,
        costs: &CostModel,
    ) -> Result<()>;
}

/// SplitMix64 finalizer; derives independent stream seeds from one seed.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-round offloading costs: the schedule, with per-sample overrides on top.
pub fn realize_betas(dataset: &Dataset, costs: &CostModel, seed: u64) -> Result<Vec<f64>> {
    let mut rng = SimRng::seed_from_u64(seed ^ BETA_STREAM);
    let mut betas = costs.beta().realize(dataset.len(), &mut rng)?;
    for (t, (beta, sample)) in betas.iter_mut().zip(dataset.samples()).enumerate() {
        if let Some(b) = sample.beta_override {
            if !(0.0..=costs.beta_cap()).contains(&b) {
                return Err(Error::invalid(format!(
                    "round {t}: offloading cost {b} exceeds cap {}",
                    costs.beta_cap()
                )));
            }
            *beta = b;
        }
    }
    Ok(betas)
}

/// FNV-1a over the scores, labels and costs of a realized sequence.
pub fn fingerprint(dataset: &Dataset, betas: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(&[dataset.bits()]);
    feed(&(dataset.len() as u64).to_le_bytes());
    for s in dataset.samples() {
        feed(&s.score.index().to_le_bytes());
        feed(&[s.rdl_label.bit()]);
    }
    for b in betas {
        feed(&b.to_bits().to_le_bytes());
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub policy: String,
    pub seed: u64,
    pub fingerprint: u64,
    pub records: Vec<RoundRecord>,
    /// Running totals `L_t`, exactly summed then rounded.
    pub cumulative: Vec<f64>,
}

impl Trace {
    pub fn total_loss(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn horizon(&self) -> usize {
        self.records.len()
    }

    /// `L_t` after the first `t` rounds.
    pub fn loss_at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.cumulative[t - 1]
        }
    }

    pub fn betas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.beta).collect()
    }
}

/// Runs `policy` over the dataset with costs drawn from the schedule.
pub fn run(
    policy: &mut dyn Policy,
    dataset: &Dataset,
    costs: &CostModel,
    seed: u64,
) -> Result<Trace> {
    let betas = realize_betas(dataset, costs, seed)?;
    run_with_betas(policy, dataset, costs, &betas, seed)
}

pub fn run_with_betas(
    policy: &mut dyn Policy,
    dataset: &Dataset,
    costs: &CostModel,
    betas: &[f64],
    seed: u64,
) -> Result<Trace> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if betas.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            actual: betas.len(),
        });
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(dataset.len());
    let mut cumulative = Vec::with_capacity(dataset.len());
    let mut total = ExactSum::new();
    for (t, (sample, &beta)) in dataset.samples().iter().zip(betas).enumerate() {
        let input = RoundInput {
            t,
            score: sample.score,
            beta,
        };
        let choice = policy.decide(&input, &mut rng);
        check_choice(t, &choice)?;
        let offloaded = choice.decision.is_offload();
        let local_phi = match choice.decision.prediction() {
            Some(pred) => Some(phi(pred, sample.rdl_label, costs)),
            None => choice
                .local_prediction
                .map(|p| phi(p, sample.rdl_label, costs)),
        };
        let loss = round_loss(choice.decision, local_phi.unwrap_or(0.0), beta);
        policy.learn(
            &input,
            &choice,
            offloaded.then_some(sample.rdl_label),
            costs,
        )?;
        total.add(loss);
        records.push(RoundRecord {
            t,
            decision: choice.decision,
            explored: choice.explored,
            offloaded,
            phi: local_phi,
            beta,
            loss,
        });
        cumulative.push(total.value());
    }
    Ok(Trace {
        policy: policy.name(),
        seed,
        fingerprint: fingerprint(dataset, betas),
        records,
        cumulative,
    })
}

fn check_choice(round: usize, choice: &Choice) -> Result<()> {
    let violation = |message: &str| {
        Err(Error::ContractViolation {
            round,
            message: message.to_string(),
        })
    };
    match choice.decision.prediction() {
        Some(_) if choice.explored => violation("exploration flag set on a local round"),
        Some(pred) if choice.local_prediction != Some(pred) => {
            violation("local decision disagrees with the reported prediction")
        }
        _ => Ok(()),
    }
}

/// Per-run metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// Sweep coordinate this run belongs to (for example the fixed cost).
    pub point: String,
    pub policy: String,
    pub seed: u64,
    pub horizon: usize,
    pub avg_cost: f64,
    pub regret_vs_two: f64,
    pub regret_vs_single: f64,
    /// False positives over locally decided rounds.
    pub fpr: f64,
    /// False negatives over locally decided rounds.
    pub fnr: f64,
    pub no_local_rounds: bool,
    pub offload_rate: f64,
    pub explore_rate: f64,
}

pub fn summarize(
    point: &str,
    trace: &Trace,
    dataset: &Dataset,
    two: &OfflinePair,
    single: &OfflineSingle,
) -> Result<Summary> {
    let own = fingerprint(dataset, &trace.betas());
    for other in [own, two.fingerprint, single.fingerprint] {
        if other != trace.fingerprint {
            return Err(Error::MismatchedDataset {
                trace: trace.fingerprint,
                optimum: other,
            });
        }
    }
    let n = trace.horizon();
    let (mut local, mut fp, mut fn_, mut off, mut expl) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (r, s) in trace.records.iter().zip(dataset.samples()) {
        off += r.offloaded as usize;
        expl += r.explored as usize;
        match (r.decision, s.rdl_label) {
            (Decision::Local1, Label::Zero) => fp += 1,
            (Decision::Local0, Label::One) => fn_ += 1,
            _ => {}
        }
        local += !r.offloaded as usize;
    }
    let rate = |k: usize, d: usize| if d == 0 { 0.0 } else { k as f64 / d as f64 };
    let total = trace.total_loss();
    Ok(Summary {
        point: point.to_string(),
        policy: trace.policy.clone(),
        seed: trace.seed,
        horizon: n,
        avg_cost: total / n as f64,
        regret_vs_two: total - two.loss,
        regret_vs_single: total - single.loss,
        fpr: rate(fp, local),
        fnr: rate(fn_, local),
        no_local_rounds: local == 0,
        offload_rate: rate(off, n),
        explore_rate: rate(expl, n),
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> MeanSd {
        let n = values.len();
        if n == 0 {
            return MeanSd {
                mean: f64::NAN,
                sd: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanSd { mean, sd, n }
    }
}

/// Seed-aggregated metrics for one `(point, policy)` group.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub point: String,
    pub policy: String,
    pub avg_cost: MeanSd,
    pub regret_vs_two: MeanSd,
    pub regret_vs_single: MeanSd,
    pub fpr: MeanSd,
    pub fnr: MeanSd,
    pub offload_rate: MeanSd,
    pub explore_rate: MeanSd,
}

/// Groups by `(point, policy)` in order of first appearance.
pub fn aggregate(summaries: &[Summary]) -> Vec<Aggregate> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&Summary>> = BTreeMap::new();
    for s in summaries {
        let key = (s.point.clone(), s.policy.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(s);
    }
    order
        .into_iter()
        .map(|key| {
            let rows = &groups[&key];
            let stat =
                |f: fn(&Summary) -> f64| MeanSd::of(&rows.iter().map(|s| f(s)).collect::<Vec<_>>());
            Aggregate {
                avg_cost: stat(|s| s.avg_cost),
                regret_vs_two: stat(|s| s.regret_vs_two),
                regret_vs_single: stat(|s| s.regret_vs_single),
                fpr: stat(|s| s.fpr),
                fnr: stat(|s| s.fnr),
                offload_rate: stat(|s| s.offload_rate),
                explore_rate: stat(|s| s.explore_rate),
                point: key.0,
                policy: key.1,
            }
        })
        .collect()
}

/// One realized regret value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretSample {
    pub horizon: usize,
    pub regret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretPoint {
    pub horizon: usize,
    pub regret: MeanSd,
    pub bound: Option<f64>,
}

/// Regret of `trace` on each prefix, against the optimum recomputed on that
/// prefix by `optimum(prefix_dataset, prefix_betas)`.
pub fn prefix_regret(
    trace: &Trace,
    dataset: &Dataset,
    horizons: &[usize],
    mut optimum: impl FnMut(&Dataset, &[f64]) -> Result<f64>,
) -> Result<Vec<RegretSample>> {
    let betas = trace.betas();
    horizons
        .iter()
        .map(|&h| {
            if h == 0 || h > trace.horizon() {
                return Err(Error::invalid(format!(
                    "prefix {h} outside 1..={}",
                    trace.horizon()
                )));
            }
            let best = optimum(&dataset.prefix(h), &betas[..h])?;
            Ok(RegretSample {
                horizon: h,
                regret: trace.loss_at(h) - best,
            })
        })
        .collect()
}

/// Mean regret per horizon, ascending, with the bound alongside.
pub fn regret_curve(
    samples: &[RegretSample],
    bound: impl Fn(usize) -> Option<f64>,
) -> Result<Vec<RegretPoint>> {
    let mut by_h: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in samples {
        by_h.entry(s.horizon).or_default().push(s.regret);
    }
    if by_h.len() < 2 {
        return Err(Error::invalid("a regret curve needs at least two horizons"));
    }
    Ok(by_h
        .into_iter()
        .map(|(horizon, values)| RegretPoint {
            horizon,
            regret: MeanSd::of(&values),
            bound: bound(horizon),
        })
        .collect())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("slope fit needs at least two points"));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::invalid("log-log fit needs positive coordinates"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope fit needs distinct x values"));
    }
    Ok(sxy / sxx)
}

pub const TRACE_HEADER: &str = "t,decision,explored,offloaded,beta,phi,loss,cum_loss";

pub fn write_trace_csv<W: Write>(trace: &Trace, mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for (r, cum) in trace.records.iter().zip(&trace.cumulative) {
        let phi = r.phi.map(|p| p.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t,
            r.decision.as_str(),
            r.explored as u8,
            r.offloaded as u8,
            r.beta,
            phi,
            r.loss,
            cum
        )?;
    }
    Ok(())
}

pub const SUMMARY_HEADER: &str =
    "point,policy,seed,T,avg_cost,regret_vs_two,regret_vs_single,fpr,fnr,no_local_rounds,offload_rate,explore_rate";

/// Per-run rows, then a `mean` and an `sd` row per group.
pub fn write_summary_csv<W: Write>(summaries: &[Summary], mut out: W) -> io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for s in summaries {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            s.point,
            s.policy,
            s.seed,
            s.horizon,
            s.avg_cost,
            s.regret_vs_two,
            s.regret_vs_single,
            s.fpr,
            s.fnr,
            s.no_local_rounds as u8,
            s.offload_rate,
            s.explore_rate
        )?;
    }
    for a in aggregate(summaries) {
        let horizon = summaries
            .iter()
            .find(|s| s.point == a.point && s.policy == a.policy)
            .map_or(0, |s| s.horizon);
        for (tag, pick) in [("mean", 0), ("sd", 1)] {
            let v = |m: MeanSd| if pick == 0 { m.mean } else { m.sd };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},,{},{}",
                a.point,
                a.policy,
                tag,
                horizon,
                v(a.avg_cost),
                v(a.regret_vs_two),
                v(a.regret_vs_single),
                v(a.fpr),
                v(a.fnr),
                v(a.offload_rate),
                v(a.explore_rate)
            )?;
        }
    }
    Ok(())
}
