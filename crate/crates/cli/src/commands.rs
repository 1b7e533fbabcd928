use std::fmt::Write as _;
use std::path::Path;

use agesim::age::{
    aogi_series, aoii_series, aoli_series, aot_series, generation_records, semantic_changes,
    verifications, AgeSeries,
};
use agesim::optimize::{
    evaluate, fig5_csv, fig5_experiment, optimize_capacity_shares, optimize_partition,
    optimize_verification_period, search, seed_metrics, Decision, EvalReport, Fig5Settings,
    Objective, SearchResult,
};
use agesim::profile::Partition;
use agesim::risk::{cvar, evar, mean, var, RiskSpec};
use agesim::sim::{export_log, run as simulate, RandomProcessSpec, SamplingPolicy, Scenario};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{parse_config, Config, OptimizeSpec, SweepVariable};
use crate::output::Output;
use crate::CliError;

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn load(path: &Path, output_dir: Option<String>) -> Result<Config, CliError> {
    let mut config = parse_config(path)?;
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    Ok(config)
}

fn write_effective(out: &Output, config: &Config) -> Result<(), CliError> {
    out.json("effective_config.json", config).map(|_| ())
}

fn windowed(series: &AgeSeries<f64>, warmup_fraction: f64) -> Result<AgeSeries<f64>, CliError> {
    let from = series.start() + warmup_fraction * (series.end() - series.start());
    series.window(from, series.end()).map_err(runtime)
}

#[derive(Serialize)]
struct RunSummary {
    horizon_s: f64,
    warmup_s: f64,
    generated: usize,
    mean_delay_s: f64,
    time_avg_aogi_s: f64,
    time_avg_aoii_s: f64,
    time_avg_aoli_s: f64,
    time_avg_aot_s: Option<f64>,
    avg_peak_aogi_s: f64,
    statistical_aogi_s: f64,
    epsilon: f64,
    warnings: Vec<String>,
}

pub fn run(path: &Path, output_dir: Option<String>) -> Result<(), CliError> {
    let config = load(path, output_dir)?;
    let log = simulate(&config.scenario()).map_err(runtime)?;
    for w in &log.warnings {
        eprintln!("warning: {w}");
    }
    let end = log.end_time;
    let records = generation_records(&log).map_err(runtime)?;
    let aogi = aogi_series(&records, 0.0, end).map_err(runtime)?;
    let aoii = aoii_series(&records, &semantic_changes(&log), 0.0, end).map_err(runtime)?;
    let aoli = aoli_series(&records, 0.0, end).map_err(runtime)?;
    let aot = match &config.verification {
        Some(v) => Some(aot_series(&verifications(&log), 0.0, end, v.mean_initial_age()).map_err(runtime)?),
        None => None,
    };

    let w = config.warmup_fraction;
    let metrics = seed_metrics(&log, w, config.epsilon).map_err(runtime)?;
    let peaks = windowed(&aogi, w)?.peaks();
    let summary = RunSummary {
        horizon_s: end,
        warmup_s: w * end,
        generated: log.generated_count(),
        mean_delay_s: metrics.mean_delay_s,
        time_avg_aogi_s: metrics.time_avg_aogi_s,
        time_avg_aoii_s: windowed(&aoii, w)?.time_average(),
        time_avg_aoli_s: windowed(&aoli, w)?.time_average(),
        time_avg_aot_s: match &aot {
            Some(s) => Some(windowed(s, w)?.time_average()),
            None => None,
        },
        avg_peak_aogi_s: metrics.avg_peak_aogi_s,
        statistical_aogi_s: metrics.statistical_aogi_s,
        epsilon: config.epsilon,
        warnings: log.warnings.clone(),
    };

    let out = Output::create(&config)?;
    let body = export_log(&log);
    out.csv("events.csv", &body)?;
    out.csv("aogi.csv", &aogi.to_csv())?;
    out.csv("aoii.csv", &aoii.to_csv())?;
    out.csv("aoli.csv", &aoli.to_csv())?;
    if let Some(s) = &aot {
        out.csv("aot.csv", &s.to_csv())?;
    }
    let mut peak_csv = String::from("peak_aogi_s\n");
    for p in &peaks {
        let _ = writeln!(peak_csv, "{p:.9}");
    }
    out.csv("peaks.csv", &peak_csv)?;
    out.json("summary.json", &summary)?;
    write_effective(&out, &config)?;

    println!("generated          {}", summary.generated);
    println!("mean delay         {:.6} s", summary.mean_delay_s);
    println!("avg peak AoGI      {:.6} s", summary.avg_peak_aogi_s);
    println!("time-avg AoGI      {:.6} s", summary.time_avg_aogi_s);
    println!("statistical AoGI   {:.6} s (eps {})", summary.statistical_aogi_s, config.epsilon);
    println!("outputs in {}", out.dir().display());
    Ok(())
}

fn constant(v: f64) -> RandomProcessSpec {
    RandomProcessSpec::constant(v)
}

fn apply_sweep(base: &Scenario, variable: SweepVariable, v: f64) -> Result<Scenario, CliError> {
    let mut s = base.clone();
    match variable {
        SweepVariable::EdgeCapacity => s.cap_edge = constant(v),
        SweepVariable::DeviceCapacity => s.cap_mobile = constant(v),
        SweepVariable::LinkRate => {
            s.rate1 = constant(v);
            s.rate2 = constant(v);
        }
        SweepVariable::SamplingPeriod => s.sampling = SamplingPolicy::periodic(v),
        SweepVariable::Cut1 => {
            if v.fract() != 0.0 || v < 0.0 {
                return Err(CliError::Config(format!("sweep.values: cut1 {v} is not a layer index")));
            }
            s.partition = Partition::new(v as usize, s.partition.cut2);
        }
        SweepVariable::PIntercept => s.p_intercept = v,
        SweepVariable::PSemanticChange => s.p_semantic_change = v,
    }
    s.validate()
        .map_err(|e| CliError::Config(format!("sweep {} = {v}: {e}", variable.name())))?;
    Ok(s)
}

pub fn sweep(path: &Path, output_dir: Option<String>) -> Result<(), CliError> {
    let config = load(path, output_dir)?;
    let spec = config
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("the sweep command needs a `sweep` section".into()))?;
    let points = spec.points()?;
    let base = config.scenario();
    let scenarios = points
        .iter()
        .map(|&v| apply_sweep(&base, spec.variable, v))
        .collect::<Result<Vec<_>, _>>()?;
    let eval = config.evaluation();
    let out = Output::create(&config)?;

    let reports = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let r = evaluate(s, Decision::partition(s.partition), &Objective::AvgPeakAogi, &eval)
                .map_err(runtime)?;
            out.json(
                &format!("sweep/point_{i:03}.json"),
                &json!({ "variable": spec.variable.name(), "value": points[i], "report": r }),
            )?;
            Ok(r)
        })
        .collect::<Result<Vec<EvalReport>, CliError>>()?;

    let mut csv = format!(
        "{},mean_delay_s,avg_peak_aogi_s,time_avg_aogi_s,statistical_aogi_s,avg_peak_aogi_std_s\n",
        spec.variable.name()
    );
    for (v, r) in points.iter().zip(&reports) {
        let _ = writeln!(
            csv,
            "{v},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.aux.mean_delay_s, r.aux.avg_peak_aogi_s, r.aux.time_avg_aogi_s, r.aux.statistical_aogi_s, r.std_dev
        );
    }
    out.csv("sweep.csv", &csv)?;
    write_effective(&out, &config)?;
    print!("{csv}");
    Ok(())
}

fn candidates_csv(first: &str, result: &SearchResult) -> String {
    let mut csv = format!("{first},objective,mean_delay_s,avg_peak_aogi_s,time_avg_aogi_s,statistical_aogi_s\n");
    for r in &result.candidates {
        let label = match r.decision {
            Decision::Partition { cut1, cut2 } => format!("{cut1},{cut2}"),
            Decision::SamplingPeriod { period_s } => format!("{period_s}"),
        };
        let _ = writeln!(
            csv,
            "{label},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.objective_value, r.aux.mean_delay_s, r.aux.avg_peak_aogi_s, r.aux.time_avg_aogi_s, r.aux.statistical_aogi_s
        );
    }
    csv
}

pub fn optimize(path: &Path, output_dir: Option<String>) -> Result<(), CliError> {
    let config = load(path, output_dir)?;
    let spec = config
        .optimize
        .clone()
        .ok_or_else(|| CliError::Config("the optimize command needs an `optimize` section".into()))?;
    let scenario = config.scenario();
    let eval = config.evaluation();
    let out = Output::create(&config)?;
    match &spec {
        OptimizeSpec::Partition { objective } => {
            let r = optimize_partition(&scenario, objective, &eval).map_err(runtime)?;
            out.csv("optimize.csv", &candidates_csv("cut1,cut2", &r))?;
            out.json("optimize.json", &json!({ "target": "partition", "objective": objective, "best": r.best }))?;
            println!("best {:?}: objective {:.6}", r.best.decision, r.best.objective_value);
        }
        OptimizeSpec::SamplingPeriod { objective, periods } => {
            let decisions: Vec<Decision> = periods.iter().map(|&p| Decision::SamplingPeriod { period_s: p }).collect();
            let r = search(&scenario, &decisions, objective, &eval).map_err(runtime)?;
            out.csv("optimize.csv", &candidates_csv("period_s", &r))?;
            out.json("optimize.json", &json!({ "target": "sampling_period", "objective": objective, "best": r.best }))?;
            println!("best {:?}: objective {:.6}", r.best.decision, r.best.objective_value);
        }
        OptimizeSpec::VerificationPeriod {
            cost,
            budget_rate,
            expected_initial_age_s,
            period_bounds,
        } => {
            let delta = expected_initial_age_s
                .or_else(|| config.verification.as_ref().map(|v| v.mean_initial_age()))
                .ok_or_else(|| {
                    CliError::Config(
                        "optimize.expected_initial_age_s: required without a `verification` section".into(),
                    )
                })?;
            let plan = optimize_verification_period(*cost, *budget_rate, delta, *period_bounds)
                .map_err(|e| CliError::Config(format!("optimize: {e}")))?;
            out.json("optimize.json", &json!({ "target": "verification_period", "plan": plan }))?;
            println!("period {} s, average age of trust {} s", plan.period_s, plan.avg_aot_s);
        }
        OptimizeSpec::CapacityShares {
            weights,
            edge_cap_total,
            grid_step,
        } => {
            let services: Vec<(Scenario, f64)> = weights.iter().map(|&w| (scenario.clone(), w)).collect();
            let a = optimize_capacity_shares(&services, *edge_cap_total, *grid_step, &eval)
                .map_err(|e| CliError::Config(format!("optimize: {e}")))?;
            let mut csv = String::from("service,weight,share,cut1,cut2,time_avg_aogi_s\n");
            for (i, w) in weights.iter().enumerate() {
                let p = a.partitions[i];
                let _ = writeln!(csv, "{i},{w},{},{},{},{:.9}", a.shares[i], p.cut1, p.cut2, a.ages_s[i]);
            }
            out.csv("optimize.csv", &csv)?;
            out.json("optimize.json", &json!({ "target": "capacity_shares", "allocation": a }))?;
            print!("{csv}");
        }
    }
    write_effective(&out, &config)
}

fn constant_value(p: &RandomProcessSpec, key: &str) -> Result<f64, CliError> {
    match *p {
        RandomProcessSpec::Constant { value } => Ok(value),
        _ => Err(CliError::Config(format!("{key}: the fig5 experiment needs a constant value"))),
    }
}

pub fn fig5(path: &Path, output_dir: Option<String>) -> Result<(), CliError> {
    let config = load(path, output_dir)?;
    let spec = config.fig5.clone().unwrap_or_default();
    if spec.edge_caps.is_empty() || spec.edge_caps.iter().any(|c| !(*c > 0.0)) {
        return Err(CliError::Config("fig5.edge_caps: need positive capacities".into()));
    }
    let settings = Fig5Settings {
        profile: config.model.0.clone(),
        edge_caps: spec.edge_caps,
        device_cap: constant_value(&config.cap_mobile.0, "cap_mobile")?,
        link_rate: constant_value(&config.rate1.0, "rate1")?,
        horizon_s: config.horizon_s,
    };
    let rows = fig5_experiment(&settings, &config.evaluation()).map_err(runtime)?;
    let out = Output::create(&config)?;
    let csv = fig5_csv(&rows);
    out.csv("fig5.csv", &csv)?;
    write_effective(&out, &config)?;
    print!("{csv}");
    Ok(())
}

fn read_peaks(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.split(',').next().unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Err(_) if !header_seen && values.is_empty() => header_seen = true,
            _ => {
                return Err(CliError::Config(format!(
                    "{}:{}: `{field}` is not a finite number",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if values.is_empty() {
        return Err(CliError::Config(format!("{}: no samples", path.display())));
    }
    Ok(values)
}

pub fn metrics(path: &Path, eps: f64) -> Result<(), CliError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(CliError::Usage(format!("--eps must lie in (0, 1], got {eps}")));
    }
    let x = read_peaks(path)?;
    let spec = RiskSpec::new(eps).map_err(runtime)?;
    println!("n = {}", x.len());
    println!("mean = {}", mean(&x).map_err(runtime)?);
    println!("var = {}", var(&x, eps).map_err(runtime)?);
    println!("cvar = {}", cvar(&x, eps).map_err(runtime)?);
    println!("evar = {}", evar(&x, &spec).map_err(runtime)?);
    Ok(())
}
