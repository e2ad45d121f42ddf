//! The five subcommands. Each writes its CSV artifacts into the output
//! directory and returns the list of files it produced.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use trajex::extremes::{compute_envelope, error_metrics, taylor_baseline_envelope, ExtremeEnvelope};
use trajex::models::Scenario;
use trajex::oracle::{sample_envelope, slice_function, write_slice_csv, SampleEnvelope};
use trajex::trust_region::{TrustResult, TrustStatus};
use trajex::ParameterBox;

use crate::config::{Baseline, RunConfig};
use crate::CliError;

/// Largest failed fraction of oracle samples a comparison tolerates.
pub const MAX_ORACLE_FAILURE: f64 = 0.01;

fn create(dir: &Path, name: &str) -> Result<(BufWriter<File>, PathBuf), CliError> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok((BufWriter::new(f), path))
}

pub fn simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let scenario = cfg.scenario()?;
    let p = match &cfg.params {
        Some(p) => p.clone(),
        None => cfg.bounds(&scenario)?.midpoint(),
    };
    if p.len() != scenario.n_param() {
        return Err(CliError::Config(format!(
            "params has {} entries but the scenario has {} parameters",
            p.len(),
            scenario.n_param()
        )));
    }
    let traj = scenario.simulate(&p)?;
    let (out, path) = create(&cfg.out_dir, "trajectory.csv")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(scenario.state_names().iter().cloned());
    w.write_record(&header)?;
    for (r, t) in scenario.grid.times().iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(traj.state(r).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(vec![path])
}

struct Prepared {
    scenario: Scenario,
    bounds: ParameterBox,
    rows: Vec<usize>,
}

fn prepare(cfg: &RunConfig, fault: Option<f64>) -> Result<Prepared, CliError> {
    let scenario = cfg.scenario_with_fault(fault)?;
    let bounds = cfg.bounds(&scenario)?;
    let rows = cfg.rows(&scenario)?;
    Ok(Prepared { scenario, bounds, rows })
}

pub fn extremes(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let prep = prepare(cfg, None)?;
    let state = cfg.state_index(&prep.scenario, &cfg.state)?;
    match cfg.baseline {
        Baseline::Taylor => {
            let env = taylor_baseline_envelope(
                &prep.scenario,
                state,
                &prep.bounds,
                cfg.envelope.start.as_deref(),
                &prep.rows,
            )?;
            let (out, path) = create(&cfg.out_dir, "envelope_taylor.csv")?;
            env.write_csv(out)?;
            Ok(vec![path])
        }
        Baseline::Trust => {
            let run = compute_envelope(&prep.scenario, state, &prep.bounds, &cfg.envelope, &prep.rows)?;
            let (out, env_path) = create(&cfg.out_dir, "envelope.csv")?;
            run.envelope.write_csv(out)?;
            let (out, log_path) = create(&cfg.out_dir, "iterations.csv")?;
            write_iterations(&run.envelope, &run.min_results, &run.max_results, out)?;
            log::info!("{} distinct integrations", run.integrations);
            let stalled = run
                .min_results
                .iter()
                .chain(&run.max_results)
                .filter(|r| r.status != TrustStatus::Converged)
                .count();
            if stalled > 0 {
                return Err(CliError::NotConverged(stalled));
            }
            Ok(vec![env_path, log_path])
        }
    }
}

/// One line per trust-region iteration across all rows and both directions.
fn write_iterations<W: std::io::Write>(
    env: &ExtremeEnvelope,
    min: &[TrustResult],
    max: &[TrustResult],
    out: W,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "direction", "k", "p", "trial", "value", "trial_value", "delta", "delta_next", "rho", "accepted"])?;
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
    for (i, t) in env.times.iter().enumerate() {
        for (dir, res) in [("min", &min[i]), ("max", &max[i])] {
            for l in &res.log {
                w.write_record([
                    t.to_string(),
                    dir.to_string(),
                    l.k.to_string(),
                    join(&l.p),
                    join(&l.trial),
                    l.value.to_string(),
                    l.trial_value.to_string(),
                    l.delta.to_string(),
                    l.delta_next.to_string(),
                    l.rho.to_string(),
                    l.accepted.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn run_oracle(cfg: &RunConfig, prep: &Prepared, state: usize) -> Result<SampleEnvelope, CliError> {
    let plan = cfg.sampling.plan(prep.bounds.dim());
    let s = sample_envelope(
        &prep.scenario,
        state,
        &prep.bounds,
        &plan,
        &prep.rows,
        cfg.sampling.retain,
        cfg.envelope.execution,
    )?;
    let frac = s.failures.len() as f64 / s.points.len() as f64;
    if frac > MAX_ORACLE_FAILURE {
        return Err(CliError::Oracle { failed: s.failures.len(), total: s.points.len() });
    }
    Ok(s)
}

pub fn mc(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let prep = prepare(cfg, None)?;
    let state = cfg.state_index(&prep.scenario, &cfg.state)?;
    let plan = cfg.sampling.plan(prep.bounds.dim());
    let s = sample_envelope(
        &prep.scenario,
        state,
        &prep.bounds,
        &plan,
        &prep.rows,
        cfg.sampling.retain,
        cfg.envelope.execution,
    )?;
    let (out, path) = create(&cfg.out_dir, "envelope_mc.csv")?;
    s.envelope.write_csv(out)?;
    let mut files = vec![path];
    if !s.failures.is_empty() {
        let (out, path) = create(&cfg.out_dir, "failures.csv")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample", "reason"])?;
        for (i, why) in &s.failures {
            w.write_record([i.to_string(), why.clone()])?;
        }
        w.flush()?;
        files.push(path);
    }
    if let Some(samples) = &s.samples {
        let (out, path) = create(&cfg.out_dir, "samples.csv")?;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=prep.bounds.dim()).map(|i| format!("p_{i}")).collect();
        header.extend(s.envelope.times.iter().map(|t| format!("t={t}")));
        w.write_record(&header)?;
        let ok = (0..s.points.len()).filter(|i| !s.failures.iter().any(|(j, _)| j == i));
        for (i, vals) in ok.zip(samples) {
            let mut rec: Vec<String> = s.points[i].iter().map(f64::to_string).collect();
            rec.extend(vals.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        files.push(path);
    }
    let frac = s.failures.len() as f64 / s.points.len() as f64;
    if frac > MAX_ORACLE_FAILURE {
        return Err(CliError::Oracle { failed: s.failures.len(), total: s.points.len() });
    }
    Ok(files)
}

pub fn slice(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let scenario = cfg.scenario()?;
    let bounds = cfg.bounds(&scenario)?;
    let state = cfg.state_index(&scenario, &cfg.state)?;
    let t = cfg.slice_time_s;
    if t < scenario.grid.t0() || t > scenario.grid.t_end() {
        return Err(CliError::Config(format!("slice time {t} s is outside the simulated horizon")));
    }
    let row = scenario.grid.nearest_index(t);
    let plan = cfg.sampling.plan(bounds.dim());
    let table = slice_function(&scenario, state, row, &bounds, &plan, cfg.envelope.execution)?;
    let (out, path) = create(&cfg.out_dir, "slice.csv")?;
    write_slice_csv(&table, out)?;
    Ok(vec![path])
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub fault_pu: Option<f64>,
    pub state: String,
    pub method: &'static str,
    pub eps_upper: f64,
    pub eps_lower: f64,
    pub integrations: usize,
    pub seconds: f64,
}

/// Scores the trust-region and Taylor envelopes against the sampling
/// oracle, for every configured state and every sweep severity.
pub fn compare_rows(cfg: &RunConfig) -> Result<Vec<MetricRow>, CliError> {
    let faults: Vec<Option<f64>> = if cfg.fault_sweep_pu.is_empty() {
        vec![None]
    } else {
        cfg.fault_sweep_pu.iter().copied().map(Some).collect()
    };
    let mut names = vec![cfg.state.clone()];
    names.extend(cfg.compare_states.iter().filter(|s| **s != cfg.state).cloned());
    let mut rows = Vec::new();
    for fault in faults {
        let prep = prepare(cfg, fault)?;
        let fault_pu = fault.or_else(|| prep.scenario.data.faults.first().map(|f| f.r));
        for name in &names {
            let state = cfg.state_index(&prep.scenario, name)?;
            let t0 = Instant::now();
            let oracle = run_oracle(cfg, &prep, state)?;
            let oracle_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let trust = compute_envelope(&prep.scenario, state, &prep.bounds, &cfg.envelope, &prep.rows)?;
            let trust_s = t1.elapsed().as_secs_f64();
            let t2 = Instant::now();
            let taylor = taylor_baseline_envelope(
                &prep.scenario,
                state,
                &prep.bounds,
                cfg.envelope.start.as_deref(),
                &prep.rows,
            )?;
            let taylor_s = t2.elapsed().as_secs_f64();
            let mut push = |method, env: &ExtremeEnvelope, integrations, seconds| -> Result<(), CliError> {
                let (eps_upper, eps_lower) = error_metrics(env, &oracle.envelope)?;
                rows.push(MetricRow {
                    fault_pu,
                    state: name.clone(),
                    method,
                    eps_upper,
                    eps_lower,
                    integrations,
                    seconds,
                });
                Ok(())
            };
            push("oracle", &oracle.envelope, oracle.integrations, oracle_s)?;
            push("trust", &trust.envelope, trust.integrations, trust_s)?;
            push("taylor", &taylor, 1, taylor_s)?;
        }
    }
    Ok(rows)
}

pub fn compare(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let rows = compare_rows(cfg)?;
    let (out, path) = create(&cfg.out_dir, "metrics.csv")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fault_pu", "state", "method", "eps_upper", "eps_lower", "integrations", "seconds"])?;
    for r in &rows {
        w.write_record([
            r.fault_pu.map(|f| f.to_string()).unwrap_or_default(),
            r.state.clone(),
            r.method.to_string(),
            r.eps_upper.to_string(),
            r.eps_lower.to_string(),
            r.integrations.to_string(),
            r.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(vec![path])
}
