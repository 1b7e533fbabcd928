//! Monte Carlo evaluation of deployment decisions and exhaustive searches
//! over partitions, verification periods and edge capacity shares.
//!
//! Every candidate is simulated under the same seed list, so two decisions
//! differ only through the decision itself.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::age::{aogi_series, generation_records, AgeError};
use crate::profile::{ModelProfile, Partition, Tiers};
use crate::risk::{evar, RiskError, RiskSpec};
use crate::sim::{run, EventLog, RandomProcessSpec, Record, Scenario, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Age(#[from] AgeError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("{0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, OptimizeError> {
    Err(OptimizeError::Invalid(msg.into()))
}

/// What is being chosen for a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Partition { cut1: usize, cut2: usize },
    SamplingPeriod { period_s: f64 },
}

impl Decision {
    pub fn partition(p: Partition) -> Self {
        Self::Partition {
            cut1: p.cut1,
            cut2: p.cut2,
        }
    }

    pub fn apply(&self, scenario: &Scenario) -> Scenario {
        let mut s = scenario.clone();
        match *self {
            Self::Partition { cut1, cut2 } => s.partition = Partition::new(cut1, cut2),
            Self::SamplingPeriod { period_s } => s.sampling = crate::sim::SamplingPolicy::periodic(period_s),
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Mean inference delay of the completed jobs: time in service, queueing
    /// excluded.
    MeanDelay,
    AvgPeakAogi,
    TimeAvgAogi,
    /// Entropic value at risk of the peak ages at failure probability `epsilon`.
    StatisticalAogi { epsilon: f64 },
    /// Weighted time-average age over several services; only meaningful for
    /// capacity allocation.
    WeightedSum { weights: Vec<f64> },
}

impl Objective {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        match self {
            Self::StatisticalAogi { epsilon } if !(*epsilon > 0.0 && *epsilon <= 1.0) => {
                invalid(format!("statistical_aogi epsilon {epsilon} not in (0, 1]"))
            }
            Self::WeightedSum { weights } if weights.iter().any(|w| !(*w > 0.0)) => {
                invalid("weighted_sum weights must be > 0")
            }
            _ => Ok(()),
        }
    }

    fn pick(&self, m: &SeedMetrics) -> Result<f64, OptimizeError> {
        Ok(match self {
            Self::MeanDelay => m.mean_delay_s,
            Self::AvgPeakAogi => m.avg_peak_aogi_s,
            Self::TimeAvgAogi => m.time_avg_aogi_s,
            Self::StatisticalAogi { .. } => m.statistical_aogi_s,
            Self::WeightedSum { .. } => {
                return invalid("weighted_sum needs several services; use optimize_capacity_shares")
            }
        })
    }
}

/// Seeds and windowing shared by all evaluations of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub seeds: Vec<u64>,
    /// Leading fraction of the horizon excluded from every statistic.
    pub warmup_fraction: f64,
    /// Failure probability for the statistical AoGI side metric.
    pub epsilon: f64,
}

impl Default for Evaluation {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            warmup_fraction: 0.1,
            epsilon: 0.05,
        }
    }
}

impl Evaluation {
    pub fn with_seeds(seeds: Vec<u64>) -> Self {
        Self {
            seeds,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        if self.seeds.is_empty() {
            return invalid("at least one seed is needed");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return invalid(format!("warmup_fraction {} not in [0, 1)", self.warmup_fraction));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return invalid(format!("epsilon {} not in (0, 1]", self.epsilon));
        }
        Ok(())
    }
}

/// Post-warmup statistics of one simulated run. Quantities that need at
/// least one generation (or one peak) are `+inf` without it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub mean_delay_s: f64,
    pub avg_peak_aogi_s: f64,
    pub time_avg_aogi_s: f64,
    pub statistical_aogi_s: f64,
}

/// Peaks of the post-warmup AoGI trajectory of `log`.
pub fn window_peaks(log: &EventLog, warmup_fraction: f64) -> Result<crate::age::AgeSeries<f64>, OptimizeError> {
    let end = log.end_time;
    let records = generation_records(log)?;
    let series = aogi_series(&records, 0.0, end)?;
    Ok(series.window(warmup_fraction * end, end)?)
}

pub fn seed_metrics(log: &EventLog, warmup_fraction: f64, epsilon: f64) -> Result<SeedMetrics, OptimizeError> {
    let window = window_peaks(log, warmup_fraction)?;
    let peaks = window.peaks();
    let (avg_peak, stat) = if peaks.is_empty() {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (
            window.average_peak().unwrap(),
            evar(&peaks, &RiskSpec::new(epsilon)?)?,
        )
    };
    let from = window.start();
    let delays: Vec<f64> = log
        .records
        .iter()
        .filter_map(|r| match *r {
            Record::Generated { t, inference_s, .. } if t >= from => Some(inference_s),
            _ => None,
        })
        .collect();
    let mean_delay = if delays.is_empty() {
        f64::INFINITY
    } else {
        crate::risk::mean(&delays)?
    };
    Ok(SeedMetrics {
        mean_delay_s: mean_delay,
        avg_peak_aogi_s: avg_peak,
        time_avg_aogi_s: window.time_average(),
        statistical_aogi_s: stat,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub decision: Decision,
    pub objective_value: f64,
    pub per_seed: Vec<f64>,
    pub seeds: usize,
    /// Sample standard deviation of `per_seed`; zero for a single seed.
    pub std_dev: f64,
    /// Seed-averaged side metrics.
    pub aux: SeedMetrics,
}

fn mean_of(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    v.sum::<f64>() / n
}

fn report(decision: Decision, objective: &Objective, metrics: &[SeedMetrics]) -> Result<EvalReport, OptimizeError> {
    let per_seed = metrics.iter().map(|m| objective.pick(m)).collect::<Result<Vec<_>, _>>()?;
    let value = mean_of(per_seed.iter().copied());
    let n = per_seed.len();
    let std_dev = if n > 1 && value.is_finite() {
        (per_seed.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let aux = SeedMetrics {
        mean_delay_s: mean_of(metrics.iter().map(|m| m.mean_delay_s)),
        avg_peak_aogi_s: mean_of(metrics.iter().map(|m| m.avg_peak_aogi_s)),
        time_avg_aogi_s: mean_of(metrics.iter().map(|m| m.time_avg_aogi_s)),
        statistical_aogi_s: mean_of(metrics.iter().map(|m| m.statistical_aogi_s)),
    };
    Ok(EvalReport {
        decision,
        objective_value: value,
        per_seed,
        seeds: n,
        std_dev,
        aux,
    })
}

/// Simulates every decision under every seed; results are indexed
/// `[decision][seed]` regardless of execution order.
fn simulate_all(
    scenario: &Scenario,
    decisions: &[Decision],
    eval: &Evaluation,
    epsilon: f64,
) -> Result<Vec<Vec<SeedMetrics>>, OptimizeError> {
    eval.validate()?;
    let jobs: Vec<(usize, u64)> = (0..decisions.len())
        .flat_map(|d| eval.seeds.iter().map(move |&s| (d, s)))
        .collect();
    let flat = jobs
        .par_iter()
        .map(|&(d, seed)| {
            let mut s = decisions[d].apply(scenario);
            s.seed = seed;
            let log = run(&s)?;
            seed_metrics(&log, eval.warmup_fraction, epsilon)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(flat.chunks(eval.seeds.len()).map(<[_]>::to_vec).collect())
}

fn epsilon_for(objective: &Objective, eval: &Evaluation) -> f64 {
    match objective {
        Objective::StatisticalAogi { epsilon } => *epsilon,
        _ => eval.epsilon,
    }
}

/// Runs `scenario` with `decision` applied once per seed and averages the
/// objective over seeds.
pub fn evaluate(
    scenario: &Scenario,
    decision: Decision,
    objective: &Objective,
    eval: &Evaluation,
) -> Result<EvalReport, OptimizeError> {
    evaluate_many(scenario, &[decision], objective, eval).map(|mut v| v.remove(0))
}

/// [`evaluate`] for several decisions, simulated concurrently; reports come
/// back in input order.
pub fn evaluate_many(
    scenario: &Scenario,
    decisions: &[Decision],
    objective: &Objective,
    eval: &Evaluation,
) -> Result<Vec<EvalReport>, OptimizeError> {
    objective.validate()?;
    objective.pick(&SeedMetrics {
        mean_delay_s: 0.0,
        avg_peak_aogi_s: 0.0,
        time_avg_aogi_s: 0.0,
        statistical_aogi_s: 0.0,
    })?;
    let all = simulate_all(scenario, decisions, eval, epsilon_for(objective, eval))?;
    decisions
        .iter()
        .zip(&all)
        .map(|(d, m)| report(*d, objective, m))
        .collect()
}

/// Index of the smallest value; values within a relative 1e-9 of the minimum
/// count as ties and the earliest one wins.
pub fn argmin_with_ties(values: &[f64]) -> Option<usize> {
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        return None;
    }
    if best == f64::INFINITY {
        return Some(0);
    }
    let limit = best + 1e-9 * best.abs() + 1e-12;
    values.iter().position(|&v| v <= limit)
}

/// Outcome of an exhaustive search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: EvalReport,
    /// Every candidate, in enumeration order.
    pub candidates: Vec<EvalReport>,
}

/// Partitions a scenario can use: three tiers when cloud capacity is
/// configured, otherwise mobile and edge only.
pub fn candidate_partitions(scenario: &Scenario) -> Vec<Partition> {
    let tiers = if scenario.cap_cloud.is_some() {
        Tiers::Three
    } else {
        Tiers::Two
    };
    scenario.profile.enumerate_partitions(tiers)
}

/// Exhaustive search over [`candidate_partitions`]. Ties go to the smaller
/// `cut1`, then the smaller `cut2`.
pub fn optimize_partition(
    scenario: &Scenario,
    objective: &Objective,
    eval: &Evaluation,
) -> Result<SearchResult, OptimizeError> {
    let decisions: Vec<Decision> = candidate_partitions(scenario)
        .into_iter()
        .map(Decision::partition)
        .collect();
    search(scenario, &decisions, objective, eval)
}

/// Exhaustive search over arbitrary decisions; ties go to the earliest.
pub fn search(
    scenario: &Scenario,
    decisions: &[Decision],
    objective: &Objective,
    eval: &Evaluation,
) -> Result<SearchResult, OptimizeError> {
    if decisions.is_empty() {
        return invalid("no candidate decisions");
    }
    let candidates = evaluate_many(scenario, decisions, objective, eval)?;
    let values: Vec<f64> = candidates.iter().map(|r| r.objective_value).collect();
    let best = candidates[argmin_with_ties(&values).unwrap()].clone();
    Ok(SearchResult { best, candidates })
}

/// Settings of the delay-oriented versus AoGI-oriented partition comparison
/// on a mobile-edge deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig5Settings {
    pub profile: ModelProfile<f64>,
    pub edge_caps: Vec<f64>,
    pub device_cap: f64,
    pub link_rate: f64,
    pub horizon_s: f64,
}

impl Default for Fig5Settings {
    fn default() -> Self {
        Self {
            profile: ModelProfile::reference(),
            edge_caps: (0..9).map(|i| 300.0 + 50.0 * i as f64).collect(),
            device_cap: 500.0,
            link_rate: 1000.0,
            horizon_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fig5Row {
    pub edge_gflops: f64,
    pub cut_delay_oriented: usize,
    pub cut_aogi_oriented: usize,
    pub avg_peak_delay_oriented_s: f64,
    pub avg_peak_aogi_oriented_s: f64,
    /// `100 · (1 − aogi / delay)` on average peak AoGI.
    pub reduction_pct: f64,
    pub mean_delay_delay_oriented_s: f64,
    pub mean_delay_aogi_oriented_s: f64,
}

pub const FIG5_CSV_HEADER: &str = "edge_gflops,cut_delay_oriented,cut_aogi_oriented,avg_peak_delay_oriented_s,avg_peak_aogi_oriented_s,reduction_pct";

/// For each edge capacity, picks the partition minimising mean delay and the
/// one minimising average peak AoGI, and compares their peak ages. Every
/// partition is simulated once per capacity and scored under both objectives.
pub fn fig5_experiment(settings: &Fig5Settings, eval: &Evaluation) -> Result<Vec<Fig5Row>, OptimizeError> {
    if settings.edge_caps.is_empty() {
        return invalid("edge capacity sweep is empty");
    }
    let layers = settings.profile.len();
    let mut rows = Vec::with_capacity(settings.edge_caps.len());
    for &edge in &settings.edge_caps {
        let mut scenario = Scenario::mobile_edge(
            settings.profile.clone(),
            layers,
            settings.device_cap,
            edge,
            settings.link_rate,
        );
        scenario.horizon_s = settings.horizon_s;
        let decisions: Vec<Decision> = candidate_partitions(&scenario)
            .into_iter()
            .map(Decision::partition)
            .collect();
        let metrics = simulate_all(&scenario, &decisions, eval, eval.epsilon)?;
        let by = |obj: Objective| -> Result<Vec<EvalReport>, OptimizeError> {
            decisions.iter().zip(&metrics).map(|(d, m)| report(*d, &obj, m)).collect()
        };
        let delay = by(Objective::MeanDelay)?;
        let peak = by(Objective::AvgPeakAogi)?;
        let pick = |r: &[EvalReport]| {
            let v: Vec<f64> = r.iter().map(|x| x.objective_value).collect();
            argmin_with_ties(&v).unwrap()
        };
        let (d, a) = (pick(&delay), pick(&peak));
        let cut = |i: usize| match decisions[i] {
            Decision::Partition { cut1, .. } => cut1,
            Decision::SamplingPeriod { .. } => unreachable!(),
        };
        let peak_d = peak[d].objective_value;
        let peak_a = peak[a].objective_value;
        rows.push(Fig5Row {
            edge_gflops: edge,
            cut_delay_oriented: cut(d),
            cut_aogi_oriented: cut(a),
            avg_peak_delay_oriented_s: peak_d,
            avg_peak_aogi_oriented_s: peak_a,
            reduction_pct: 100.0 * (1.0 - peak_a / peak_d),
            mean_delay_delay_oriented_s: delay[d].objective_value,
            mean_delay_aogi_oriented_s: delay[a].objective_value,
        });
    }
    Ok(rows)
}

pub fn fig5_csv(rows: &[Fig5Row]) -> String {
    let mut out = String::from(FIG5_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.9},{:.9},{:.6}",
            r.edge_gflops,
            r.cut_delay_oriented,
            r.cut_aogi_oriented,
            r.avg_peak_delay_oriented_s,
            r.avg_peak_aogi_oriented_s,
            r.reduction_pct
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationPlan {
    pub period_s: f64,
    pub avg_aot_s: f64,
}

/// Periodic verification every `T` costs `cost / T` per second and gives an
/// average age of trust of `δ̄ + T/2`, so the best period is the shortest
/// one the budget affords, kept within `bounds`.
pub fn optimize_verification_period(
    cost: f64,
    budget_rate: f64,
    mean_initial_age: f64,
    bounds: (f64, f64),
) -> Result<VerificationPlan, OptimizeError> {
    let (lo, hi) = bounds;
    if !(cost > 0.0 && budget_rate > 0.0) {
        return invalid("cost and budget rate must be > 0");
    }
    if !(mean_initial_age >= 0.0) {
        return invalid("expected initial age must be >= 0");
    }
    if !(lo > 0.0 && lo <= hi) {
        return invalid(format!("period bounds [{lo}, {hi}] are empty or not positive"));
    }
    let period = (cost / budget_rate).max(lo);
    if period > hi {
        return invalid(format!(
            "the budget needs a period of at least {period} s, above the upper bound {hi} s"
        ));
    }
    Ok(VerificationPlan {
        period_s: period,
        avg_aot_s: mean_initial_age + period / 2.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Fractions of the total edge capacity, one per service, summing to one.
    pub shares: Vec<f64>,
    pub partitions: Vec<Partition>,
    /// Time-average AoGI of each service under its share.
    pub ages_s: Vec<f64>,
    pub weighted_sum: f64,
}

/// Grid search over splits of `edge_cap_total` between services on the
/// simplex with step `grid_step`. Each service is re-optimised over its
/// partitions for every share it could get; a zero share leaves it only the
/// partitions without edge work. The weighted sum of time-average AoGI is
/// minimised, ties going to the lexicographically smallest share vector.
pub fn optimize_capacity_shares(
    services: &[(Scenario, f64)],
    edge_cap_total: f64,
    grid_step: f64,
    eval: &Evaluation,
) -> Result<Allocation, OptimizeError> {
    if services.is_empty() {
        return invalid("no services");
    }
    if services.iter().any(|(_, w)| !(*w > 0.0)) {
        return invalid("service weights must be > 0");
    }
    if !(edge_cap_total > 0.0 && edge_cap_total.is_finite()) {
        return invalid("total edge capacity must be > 0");
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return invalid(format!(
            "grid step {grid_step} gives fewer than two share values per service"
        ));
    }
    let m = (1.0 / grid_step).round() as usize;
    if ((m as f64) * grid_step - 1.0).abs() > 1e-9 {
        return invalid(format!("grid step {grid_step} does not divide one"));
    }
    if services.len() == 1 {
        let (s, _) = &services[0];
        let (p, age) = best_partition_for_share(s, edge_cap_total, eval)?;
        return Ok(Allocation {
            shares: vec![1.0],
            partitions: vec![p],
            ages_s: vec![age],
            weighted_sum: services[0].1 * age,
        });
    }

    // best partition and age for every (service, share index)
    let table: Vec<Vec<(Partition, f64)>> = services
        .iter()
        .map(|(s, _)| {
            (0..=m)
                .map(|j| best_partition_for_share(s, edge_cap_total * j as f64 / m as f64, eval))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;

    let mut best: Option<(Vec<usize>, f64)> = None;
    for comp in compositions(m, services.len()) {
        let total: f64 = comp
            .iter()
            .enumerate()
            .map(|(i, &j)| services[i].1 * table[i][j].1)
            .sum();
        let better = match &best {
            None => true,
            Some((_, b)) => total < *b - 1e-9 * b.abs() - 1e-12,
        };
        if better {
            best = Some((comp, total));
        }
    }
    let (comp, total) = best.unwrap();
    Ok(Allocation {
        shares: comp.iter().map(|&j| j as f64 / m as f64).collect(),
        partitions: comp.iter().enumerate().map(|(i, &j)| table[i][j].0).collect(),
        ages_s: comp.iter().enumerate().map(|(i, &j)| table[i][j].1).collect(),
        weighted_sum: total,
    })
}

fn best_partition_for_share(
    scenario: &Scenario,
    edge_cap: f64,
    eval: &Evaluation,
) -> Result<(Partition, f64), OptimizeError> {
    let mut s = scenario.clone();
    let mut candidates = candidate_partitions(scenario);
    if edge_cap > 0.0 {
        s.cap_edge = RandomProcessSpec::constant(edge_cap);
    } else {
        // the edge never runs, any positive placeholder will do
        s.cap_edge = RandomProcessSpec::constant(1.0);
        candidates.retain(|p| p.cut1 == p.cut2);
    }
    let decisions: Vec<Decision> = candidates.into_iter().map(Decision::partition).collect();
    let r = search(&s, &decisions, &Objective::TimeAvgAogi, eval)?;
    let Decision::Partition { cut1, cut2 } = r.best.decision else {
        unreachable!()
    };
    Ok((Partition::new(cut1, cut2), r.best.objective_value))
}

/// All ways to write `m` as an ordered sum of `k` non-negative parts, in
/// lexicographic order.
fn compositions(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(left: usize, k: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for j in 0..=left {
            prefix.push(j);
            go(left - j, k - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(m, k, &mut Vec::new(), &mut out);
    out
}
