//! Subcommand bodies. Every command is a function of the resolved config:
//! runs fan out over a thread pool and are merged back in key order.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::config::{DataConfig, ExperimentConfig, PolicyKind};
use crate::baselines::{
    offline_best_single_threshold, offline_best_two_threshold, FixedPairPolicy, FullOffload,
    NoOffload, OfflinePair, OfflineSingle, PairDomain, SingleThresholdHi,
};
use crate::datagen::{gen_calibrated, gen_mixture, load_csv, write_csv, Dataset, ScoreLaw};
use crate::domain::{BetaSchedule, CostModel};
use crate::error::{Error, Result};
use crate::h2t2::{expert_count, H2t2Policy};
use crate::harness::{
    aggregate, realize_betas, run_with_betas, stream_seed, summarize, write_summary_csv,
    write_trace_csv, Aggregate, Policy, Summary, Trace,
};

const DATA_STREAM: u64 = 0xd1b5_4a32_d192_ed03;

/// Loaded CSV input, quantized to the requested grid.
fn base_dataset(cfg: &ExperimentConfig, bits: u8) -> Result<Option<Dataset>> {
    match &cfg.data {
        DataConfig::Csv(c) => {
            let d = load_csv(&c.path, bits)?;
            if d.is_empty() {
                return Err(Error::EmptyDataset);
            }
            Ok(Some(d))
        }
        _ => Ok(None),
    }
}

fn dataset_for(
    cfg: &ExperimentConfig,
    base: Option<&Dataset>,
    bits: u8,
    seed: u64,
) -> Result<Dataset> {
    let data_seed = stream_seed(seed, DATA_STREAM);
    match (&cfg.data, base) {
        (DataConfig::Mixture(spec), _) => gen_mixture(spec, cfg.horizon, bits, data_seed),
        (DataConfig::Calibrated(c), _) => {
            let law = match &c.weights {
                Some(w) => ScoreLaw::from_weights(bits, w.clone())?,
                None => ScoreLaw::uniform(bits)?,
            };
            gen_calibrated(&law, cfg.horizon, data_seed)
        }
        (DataConfig::Csv(c), Some(d)) if c.resample => d.resample(cfg.horizon, data_seed),
        (DataConfig::Csv(_), Some(d)) => Ok(d.prefix(cfg.horizon)),
        (DataConfig::Csv(c), None) => Err(Error::Config(format!(
            "{} was not loaded",
            c.path.display()
        ))),
    }
}

struct Job<'a> {
    point: String,
    seed: u64,
    bits: u8,
    costs: CostModel,
    /// Learner overrides; the config's values when `None`.
    eta: Option<f64>,
    base: Option<&'a Dataset>,
}

struct JobOutput {
    summaries: Vec<Summary>,
    traces: Vec<Trace>,
    timings: Vec<(String, Duration)>,
    two: OfflinePair,
    single: OfflineSingle,
}

fn build_policy(
    kind: PolicyKind,
    cfg: &ExperimentConfig,
    job: &Job,
    horizon: usize,
    two: &OfflinePair,
    single: &OfflineSingle,
) -> Result<Box<dyn Policy + Send>> {
    let (eta, epsilon) = cfg.learner_params(job.bits, horizon)?;
    let eta = job.eta.unwrap_or(eta);
    let variant = cfg.learner.pseudo_loss;
    Ok(match kind {
        PolicyKind::H2t2 => Box::new(H2t2Policy::new(job.bits, eta, epsilon, variant)?),
        PolicyKind::SingleHi => Box::new(SingleThresholdHi::new(job.bits, eta, epsilon, variant)?),
        PolicyKind::NoOffload => Box::new(NoOffload),
        PolicyKind::FullOffload => Box::new(FullOffload),
        PolicyKind::OfflineSingle => Box::new(FixedPairPolicy::new(kind.as_str(), single.pair)),
        PolicyKind::OfflineTwo => Box::new(FixedPairPolicy::new(kind.as_str(), two.pair)),
    })
}

fn evaluate(cfg: &ExperimentConfig, job: &Job, keep_traces: bool) -> Result<JobOutput> {
    let dataset = dataset_for(cfg, job.base, job.bits, job.seed)?;
    let betas = realize_betas(&dataset, &job.costs, job.seed)?;
    let two = offline_best_two_threshold(&dataset, &job.costs, &betas, PairDomain::Closed)?;
    let single = offline_best_single_threshold(&dataset, &job.costs, &betas)?;
    let mut out = JobOutput {
        summaries: Vec::new(),
        traces: Vec::new(),
        timings: Vec::new(),
        two,
        single,
    };
    for &kind in &cfg.policies {
        let mut policy = build_policy(kind, cfg, job, dataset.len(), &out.two, &out.single)?;
        let start = Instant::now();
        let trace = run_with_betas(policy.as_mut(), &dataset, &job.costs, &betas, job.seed)?;
        out.timings
            .push((kind.as_str().to_string(), start.elapsed()));
        out.summaries.push(summarize(
            &job.point,
            &trace,
            &dataset,
            &out.two,
            &out.single,
        )?);
        if keep_traces {
            out.traces.push(trace);
        }
    }
    Ok(out)
}

fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.seeds as u64)
        .map(|k| cfg.seed.wrapping_add(k))
        .collect()
}

fn run_jobs(cfg: &ExperimentConfig, jobs: &[Job], keep_traces: bool) -> Result<Vec<JobOutput>> {
    jobs.par_iter()
        .map(|job| evaluate(cfg, job, keep_traces))
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let path = cfg.out.join("config.toml");
    write_file(&path, |w| w.write_all(cfg.to_toml().as_bytes()))
}

fn report(aggregates: &[Aggregate]) {
    for a in aggregates {
        println!(
            "{:>10}  {:<15} avg_cost {:.5} ± {:.5}  offload {:.3}  regret_vs_two {:.2}",
            a.point,
            a.policy,
            a.avg_cost.mean,
            a.avg_cost.sd,
            a.offload_rate.mean,
            a.regret_vs_two.mean
        );
    }
}

const TABLE_HEADER: &str = "value,policy,seeds,avg_cost_mean,avg_cost_sd,regret_vs_two_mean,regret_vs_two_sd,regret_vs_single_mean,offload_rate_mean,explore_rate_mean,fpr_mean,fnr_mean";

/// One row per `(sweep value, policy)`, optionally with an extra column.
fn write_table(
    path: &Path,
    param: &str,
    aggregates: &[Aggregate],
    extra: Option<(&str, &dyn Fn(&str) -> String)>,
) -> Result<()> {
    write_file(path, |w| {
        write!(w, "{param}_{TABLE_HEADER}")?;
        if let Some((name, _)) = extra {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for a in aggregates {
            write!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                a.point,
                a.policy,
                a.avg_cost.n,
                a.avg_cost.mean,
                a.avg_cost.sd,
                a.regret_vs_two.mean,
                a.regret_vs_two.sd,
                a.regret_vs_single.mean,
                a.offload_rate.mean,
                a.explore_rate.mean,
                a.fpr.mean,
                a.fnr.mean
            )?;
            if let Some((_, f)) = extra {
                write!(w, ",{}", f(&a.point))?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

fn collect_summaries(outputs: &[JobOutput]) -> Vec<Summary> {
    outputs
        .iter()
        .flat_map(|o| o.summaries.iter().cloned())
        .collect()
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    let costs = cfg.cost_model()?;
    let base = base_dataset(cfg, cfg.bits)?;
    let point = costs.beta().label();
    let jobs: Vec<Job> = seeds(cfg)
        .into_iter()
        .map(|seed| Job {
            point: point.clone(),
            seed,
            bits: cfg.bits,
            costs: costs.clone(),
            eta: None,
            base: base.as_ref(),
        })
        .collect();
    let outputs = run_jobs(cfg, &jobs, true)?;
    prepare_out(cfg)?;
    let trace_dir = cfg.out.join("traces");
    fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    for trace in outputs.iter().flat_map(|o| &o.traces) {
        let path = trace_dir.join(format!("{}_seed{}.csv", trace.policy, trace.seed));
        write_file(&path, |w| write_trace_csv(trace, w))?;
    }
    let summaries = collect_summaries(&outputs);
    write_file(&cfg.out.join("summary.csv"), |w| {
        write_summary_csv(&summaries, w)
    })?;
    report(&aggregate(&summaries));
    Ok(())
}

fn sweep(
    cfg: &ExperimentConfig,
    name: &str,
    points: Vec<(String, u8, CostModel, Option<f64>)>,
) -> Result<(Vec<JobOutput>, Vec<Summary>)> {
    let mut bases = Vec::new();
    for (_, bits, _, _) in &points {
        if !bases.iter().any(|(b, _)| b == bits) {
            bases.push((*bits, base_dataset(cfg, *bits)?));
        }
    }
    let base_for = |bits: u8| {
        bases
            .iter()
            .find(|(b, _)| *b == bits)
            .and_then(|(_, d)| d.as_ref())
    };
    let mut jobs = Vec::new();
    for (point, bits, costs, eta) in &points {
        for seed in seeds(cfg) {
            jobs.push(Job {
                point: point.clone(),
                seed,
                bits: *bits,
                costs: costs.clone(),
                eta: *eta,
                base: base_for(*bits),
            });
        }
    }
    let outputs = run_jobs(cfg, &jobs, false)?;
    prepare_out(cfg)?;
    let summaries = collect_summaries(&outputs);
    write_file(&cfg.out.join("summary.csv"), |w| {
        write_summary_csv(&summaries, w)
    })?;
    let aggregates = aggregate(&summaries);
    report(&aggregates);
    eprintln!("{name}: {} runs", summaries.len());
    Ok((outputs, summaries))
}

pub fn cmd_sweep_beta(cfg: &ExperimentConfig) -> Result<()> {
    let costs = cfg.cost_model()?;
    if cfg.sweep.betas.is_empty() {
        return Err(Error::Config("sweep.betas is empty".into()));
    }
    let points = cfg
        .sweep
        .betas
        .iter()
        .map(|&b| {
            let c = costs
                .with_beta(BetaSchedule::Fixed(b))
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok((b.to_string(), cfg.bits, c, None))
        })
        .collect::<Result<Vec<_>>>()?;
    let (_, summaries) = sweep(cfg, "sweep-beta", points)?;
    write_table(
        &cfg.out.join("sweep_beta.csv"),
        "beta",
        &aggregate(&summaries),
        None,
    )
}

/// `(delta_fp, delta_fn)` for a ratio, scaled so the larger cost is 1.
pub fn asymmetry_costs(ratio: f64) -> Result<(f64, f64)> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::Config(format!(
            "asymmetry ratio must be finite and positive, got {ratio}"
        )));
    }
    let scale = ratio.max(1.0);
    Ok((ratio / scale, 1.0 / scale))
}

pub fn cmd_sweep_asymmetry(cfg: &ExperimentConfig) -> Result<()> {
    let costs = cfg.cost_model()?;
    if costs.delta_fn() == 0.0 {
        return Err(Error::Config(
            "false-negative cost is 0, so the cost ratio is undefined".into(),
        ));
    }
    if cfg.sweep.ratios.is_empty() {
        return Err(Error::Config("sweep.ratios is empty".into()));
    }
    let points = cfg
        .sweep
        .ratios
        .iter()
        .map(|&r| {
            let (fp, fn_) = asymmetry_costs(r)?;
            let c = costs
                .with_deltas(fp, fn_)
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok((r.to_string(), cfg.bits, c, None))
        })
        .collect::<Result<Vec<_>>>()?;
    let (_, summaries) = sweep(cfg, "sweep-asymmetry", points)?;
    write_table(
        &cfg.out.join("sweep_asymmetry.csv"),
        "ratio",
        &aggregate(&summaries),
        None,
    )
}

/// Configured learning rates plus the tuned rate and 1, ascending.
pub fn eta_grid(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let (_, eta_star) = crate::h2t2::tuned_params(cfg.bits, cfg.horizon, cfg.beta_bar())?;
    let mut etas = cfg.sweep.etas.clone();
    etas.extend([eta_star, 1.0]);
    if let Some(bad) = etas.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(Error::Config(format!(
            "learning rate {bad} must be positive"
        )));
    }
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    Ok(etas)
}

pub fn cmd_sweep_eta(cfg: &ExperimentConfig) -> Result<()> {
    let costs = cfg.cost_model()?;
    let etas = eta_grid(cfg)?;
    let (_, eta_star) = crate::h2t2::tuned_params(cfg.bits, cfg.horizon, cfg.beta_bar())?;
    let points = etas
        .iter()
        .map(|&e| (e.to_string(), cfg.bits, costs.clone(), Some(e)))
        .collect();
    let (_, summaries) = sweep(cfg, "sweep-eta", points)?;
    let anchor = move |v: &str| {
        let v: f64 = v.parse().unwrap_or(f64::NAN);
        if v == eta_star {
            "tuned".to_string()
        } else if v == 1.0 {
            "unit".to_string()
        } else {
            String::new()
        }
    };
    write_table(
        &cfg.out.join("sweep_eta.csv"),
        "eta",
        &aggregate(&summaries),
        Some(("anchor", &anchor)),
    )
}

pub fn cmd_sweep_bits(cfg: &ExperimentConfig) -> Result<()> {
    let costs = cfg.cost_model()?;
    if cfg.sweep.bits.is_empty() {
        return Err(Error::Config("sweep.bits is empty".into()));
    }
    for &b in &cfg.sweep.bits {
        crate::domain::Score::new(0, b).map_err(|e| Error::Config(e.to_string()))?;
    }
    let points = cfg
        .sweep
        .bits
        .iter()
        .map(|&b| (b.to_string(), b, costs.clone(), None))
        .collect();
    let (outputs, summaries) = sweep(cfg, "sweep-bits", points)?;
    let experts = |v: &str| {
        v.parse::<u8>()
            .map(|b| expert_count(b).to_string())
            .unwrap_or_default()
    };
    write_table(
        &cfg.out.join("sweep_bits.csv"),
        "bits",
        &aggregate(&summaries),
        Some(("experts", &experts)),
    )?;
    // wall-clock is machine dependent, so it lives apart from the cost table
    write_file(&cfg.out.join("timing.csv"), |w| {
        writeln!(w, "bits,policy,runs,seconds_total,seconds_per_run")?;
        let mut rows: Vec<(String, String, u32, Duration)> = Vec::new();
        for (o, s) in outputs.iter().zip(summaries.chunks(cfg.policies.len())) {
            for (name, d) in &o.timings {
                let point = &s[0].point;
                match rows.iter_mut().find(|r| &r.0 == point && &r.1 == name) {
                    Some(r) => {
                        r.2 += 1;
                        r.3 += *d;
                    }
                    None => rows.push((point.clone(), name.clone(), 1, *d)),
                }
            }
        }
        for (b, name, n, d) in rows {
            let secs = d.as_secs_f64();
            writeln!(w, "{b},{name},{n},{secs},{}", secs / n as f64)?;
        }
        Ok(())
    })
}

pub fn cmd_offline_opt(cfg: &ExperimentConfig) -> Result<()> {
    let costs = cfg.cost_model()?;
    let base = base_dataset(cfg, cfg.bits)?;
    let rows = seeds(cfg)
        .into_par_iter()
        .map(|seed| {
            let d = dataset_for(cfg, base.as_ref(), cfg.bits, seed)?;
            let betas = realize_betas(&d, &costs, seed)?;
            let two = offline_best_two_threshold(&d, &costs, &betas, PairDomain::Closed)?;
            let single = offline_best_single_threshold(&d, &costs, &betas)?;
            Ok((seed, d.len(), single, two))
        })
        .collect::<Result<Vec<_>>>()?;
    prepare_out(cfg)?;
    write_file(&cfg.out.join("offline.csv"), |w| {
        writeln!(
            w,
            "seed,T,theta_single,loss_single,theta_l,theta_u,loss_two"
        )?;
        for (seed, n, single, two) in &rows {
            writeln!(
                w,
                "{seed},{n},{},{},{},{},{}",
                single.theta,
                single.loss,
                two.pair.theta_l(),
                two.pair.theta_u(),
                two.loss
            )?;
        }
        Ok(())
    })?;
    for (seed, n, single, two) in &rows {
        println!(
            "seed {seed} (T = {n}): single threshold {} loss {}; two thresholds {} loss {}",
            single.theta, single.loss, two.pair, two.loss
        );
    }
    Ok(())
}

pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let base = base_dataset(cfg, cfg.bits)?;
    let datasets = seeds(cfg)
        .into_par_iter()
        .map(|seed| dataset_for(cfg, base.as_ref(), cfg.bits, seed).map(|d| (seed, d)))
        .collect::<Result<Vec<_>>>()?;
    prepare_out(cfg)?;
    for (seed, d) in &datasets {
        let path = cfg.out.join(format!("data_seed{seed}.csv"));
        write_file(&path, |w| write_csv(d, w))?;
        println!("{} ({} rows)", path.display(), d.len());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asymmetry_normalization() {
        assert_eq!(asymmetry_costs(1.0).unwrap(), (1.0, 1.0));
        assert_eq!(asymmetry_costs(10.0).unwrap(), (1.0, 0.1));
        assert_eq!(asymmetry_costs(0.1).unwrap(), (0.1, 1.0));
        assert!(asymmetry_costs(0.0).is_err());
        assert!(asymmetry_costs(f64::INFINITY).is_err());
    }

    #[test]
    fn eta_grid_holds_both_anchors() {
        let mut cfg = ExperimentConfig::preset();
        cfg.sweep.etas = vec![0.5];
        let grid = eta_grid(&cfg).unwrap();
        let (_, star) = crate::h2t2::tuned_params(4, 10_000, 1.0).unwrap();
        assert!(grid.contains(&star) && grid.contains(&1.0) && grid.contains(&0.5));
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }
}
