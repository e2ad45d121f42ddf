//! Per-time-step extreme trajectories of one state over the parameter box.
//!
//! For every time of interest the state value `z_i(t_j, p)` is minimized and
//! maximized with the trust-region method. Each objective evaluation is a
//! full-horizon integration with second-order sensitivities of the chosen
//! state; results are cached by the exact parameter bits so every time step
//! can reuse every integration.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::ParameterBox;
use crate::error::{Error, Result};
use crate::models::Scenario;
use crate::par::{map_indexed, Execution};
use crate::sensitivity::{Order, SensitivitySeries, Tracking};
use crate::trust_region::{maximize, minimize, solve_subproblem, Evaluation, SurrogateModel, TrustConfig, TrustResult};

/// Lower and upper extreme values of one state at selected mesh rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtremeEnvelope {
    pub times: Vec<f64>,
    pub rows: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Value at the starting point (trust region, Taylor) or `NaN` (sampling).
    pub nominal: Vec<f64>,
    pub arg_lower: Vec<Vec<f64>>,
    pub arg_upper: Vec<Vec<f64>>,
    /// Objective evaluations (or samples) spent per row.
    pub evals: Vec<usize>,
}

impl ExtremeEnvelope {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV columns: `time, lower, upper, nominal, arg_lower_1.., arg_upper_1.., evals`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let np = self.arg_lower.first().map_or(0, Vec::len);
        let mut header: Vec<String> = ["time", "lower", "upper", "nominal"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=np).map(|i| format!("arg_lower_{i}")));
        header.extend((1..=np).map(|i| format!("arg_upper_{i}")));
        header.push("evals".into());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![
                self.times[k].to_string(),
                self.lower[k].to_string(),
                self.upper[k].to_string(),
                self.nominal[k].to_string(),
            ];
            row.extend(self.arg_lower[k].iter().map(|x| x.to_string()));
            row.extend(self.arg_upper[k].iter().map(|x| x.to_string()));
            row.push(self.evals[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Relative Euclidean errors `(eps_upper, eps_lower)` of `envelope` against
/// `reference`: `||M_ref - M|| / ||M_ref||` and the same for the lower curve.
pub fn error_metrics(envelope: &ExtremeEnvelope, reference: &ExtremeEnvelope) -> Result<(f64, f64)> {
    if envelope.times != reference.times {
        return Err(Error::GridMismatch);
    }
    let rel = |a: &[f64], r: &[f64]| {
        let num: f64 = a.iter().zip(r).map(|(x, y)| (y - x).powi(2)).sum::<f64>().sqrt();
        let den: f64 = r.iter().map(|y| y * y).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    };
    Ok((rel(&envelope.upper, &reference.upper), rel(&envelope.lower, &reference.lower)))
}

/// One cached full-horizon integration: the tracked state's trajectory and
/// its sensitivities.
#[derive(Debug)]
pub struct CachedRun {
    pub values: Vec<f64>,
    pub series: SensitivitySeries,
}

/// Integration cache keyed by the exact bits of the parameter vector.
/// Concurrent misses on the same key may integrate twice; results are
/// deterministic so either copy is fine.
pub struct IntegrationCache<'a> {
    scenario: &'a Scenario,
    state: usize,
    enabled: bool,
    map: Mutex<HashMap<Vec<u64>, Arc<CachedRun>>>,
    integrations: AtomicUsize,
}

impl<'a> IntegrationCache<'a> {
    pub fn new(scenario: &'a Scenario, state: usize, enabled: bool) -> Self {
        IntegrationCache { scenario, state, enabled, map: Mutex::new(HashMap::new()), integrations: AtomicUsize::new(0) }
    }

    /// Integrations actually performed.
    pub fn integrations(&self) -> usize {
        self.integrations.load(Ordering::Relaxed)
    }

    pub fn get(&self, p: &[f64]) -> Result<Arc<CachedRun>> {
        let key: Vec<u64> = p.iter().map(|x| x.to_bits()).collect();
        if self.enabled {
            if let Some(r) = self.map.lock().expect("cache lock").get(&key) {
                return Ok(Arc::clone(r));
            }
        }
        self.integrations.fetch_add(1, Ordering::Relaxed);
        let (traj, series) = self
            .scenario
            .simulate_with_sensitivities(p, &Tracking::Rows(vec![self.state]), Order::Second)
            .map_err(|e| Error::ObjectiveFailure { p: p.to_vec(), reason: e.to_string() })?;
        let run = Arc::new(CachedRun { values: traj.column(self.state), series });
        if self.enabled {
            self.map.lock().expect("cache lock").insert(key, Arc::clone(&run));
        }
        Ok(run)
    }

    /// Value, gradient and Hessian of the state at mesh `row`.
    pub fn evaluate(&self, p: &[f64], row: usize) -> Result<Evaluation> {
        let run = self.get(p)?;
        evaluation_at(&run, self.state, row)
    }
}

fn evaluation_at(run: &CachedRun, state: usize, row: usize) -> Result<Evaluation> {
    let u = run.series.gradient(row, state).ok_or_else(|| Error::UnknownState(format!("state {state} not tracked")))?;
    let v: DMatrix<f64> = run.series.hessian(row, state).cloned().unwrap_or_else(|| DMatrix::zeros(u.len(), u.len()));
    Ok(Evaluation { value: run.values[row], gradient: DVector::from_vec(u), hessian: v })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeConfig {
    pub trust: TrustConfig,
    /// Starting point; the box midpoint when `None`.
    pub start: Option<Vec<f64>>,
    /// Start each row from the previous row's optimum (forces sequential rows).
    pub warm_start: bool,
    pub cache: bool,
    pub execution: Execution,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        EnvelopeConfig {
            trust: TrustConfig::default(),
            start: None,
            warm_start: false,
            cache: true,
            execution: Execution::Parallel,
        }
    }
}

/// Envelope plus the per-row optimizer results.
#[derive(Clone, Debug)]
pub struct EnvelopeRun {
    pub envelope: ExtremeEnvelope,
    pub min_results: Vec<TrustResult>,
    pub max_results: Vec<TrustResult>,
    /// Distinct integrations performed (cache misses).
    pub integrations: usize,
}

/// Trust-region envelope of `state` over `bounds` at mesh `rows`.
pub fn compute_envelope(
    scenario: &Scenario,
    state: usize,
    bounds: &ParameterBox,
    cfg: &EnvelopeConfig,
    rows: &[usize],
) -> Result<EnvelopeRun> {
    check_request(scenario, state, bounds, rows)?;
    let p_nom = cfg.start.clone().unwrap_or_else(|| bounds.midpoint());
    let cache = IntegrationCache::new(scenario, state, cfg.cache);
    let nominal_run = cache.get(&p_nom)?;

    let solve = |row: usize, start: &[f64]| -> Result<(TrustResult, TrustResult)> {
        let lo = minimize(|p| cache.evaluate(p, row), start, bounds, &cfg.trust)?;
        let hi = maximize(|p| cache.evaluate(p, row), start, bounds, &cfg.trust)?;
        Ok((lo, hi))
    };
    let results: Vec<Result<(TrustResult, TrustResult)>> = if cfg.warm_start {
        let mut out = Vec::with_capacity(rows.len());
        let (mut s_lo, mut s_hi) = (p_nom.clone(), p_nom.clone());
        for &row in rows {
            let lo = minimize(|p| cache.evaluate(p, row), &s_lo, bounds, &cfg.trust);
            let hi = maximize(|p| cache.evaluate(p, row), &s_hi, bounds, &cfg.trust);
            if let (Ok(l), Ok(h)) = (&lo, &hi) {
                s_lo = l.p_star.clone();
                s_hi = h.p_star.clone();
            }
            out.push(lo.and_then(|l| hi.map(|h| (l, h))));
        }
        out
    } else {
        map_indexed(cfg.execution, rows, |_, &row| solve(row, &p_nom))
    };

    let times = scenario.grid.times();
    let mut env = empty_envelope(rows, times);
    let mut min_results = Vec::with_capacity(rows.len());
    let mut max_results = Vec::with_capacity(rows.len());
    for (k, r) in results.into_iter().enumerate() {
        let (lo, hi) = r?;
        env.lower.push(lo.value);
        env.upper.push(hi.value);
        env.nominal.push(nominal_run.values[rows[k]]);
        env.arg_lower.push(lo.p_star.clone());
        env.arg_upper.push(hi.p_star.clone());
        env.evals.push(lo.evals + hi.evals);
        min_results.push(lo);
        max_results.push(hi);
    }
    Ok(EnvelopeRun { envelope: env, min_results, max_results, integrations: cache.integrations() })
}

fn empty_envelope(rows: &[usize], times: &[f64]) -> ExtremeEnvelope {
    ExtremeEnvelope {
        times: rows.iter().map(|&r| times[r]).collect(),
        rows: rows.to_vec(),
        lower: Vec::with_capacity(rows.len()),
        upper: Vec::with_capacity(rows.len()),
        nominal: Vec::with_capacity(rows.len()),
        arg_lower: Vec::with_capacity(rows.len()),
        arg_upper: Vec::with_capacity(rows.len()),
        evals: Vec::with_capacity(rows.len()),
    }
}

pub(crate) fn check_request(scenario: &Scenario, state: usize, bounds: &ParameterBox, rows: &[usize]) -> Result<()> {
    if state >= scenario.n_state() {
        return Err(Error::UnknownState(format!("state index {state}")));
    }
    if bounds.dim() != scenario.n_param() {
        return Err(Error::InvalidBox(format!(
            "box has {} dimensions, scenario has {} parameters",
            bounds.dim(),
            scenario.n_param()
        )));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= scenario.grid.len()) {
        return Err(Error::InvalidGrid(format!("row {r} is past the end of the mesh")));
    }
    Ok(())
}

/// Nominal-Taylor baseline: one integration at the start point, then each
/// row's fixed quadratic model is minimized and maximized over the whole box.
pub fn taylor_baseline_envelope(
    scenario: &Scenario,
    state: usize,
    bounds: &ParameterBox,
    start: Option<&[f64]>,
    rows: &[usize],
) -> Result<ExtremeEnvelope> {
    check_request(scenario, state, bounds, rows)?;
    let p_nom = start.map_or_else(|| bounds.midpoint(), <[f64]>::to_vec);
    let cache = IntegrationCache::new(scenario, state, false);
    let run = cache.get(&p_nom)?;
    let radius = bounds.width();
    let mut env = empty_envelope(rows, scenario.grid.times());
    for &row in rows {
        let e = evaluation_at(&run, state, row)?;
        let lo_model = SurrogateModel::new(p_nom.clone(), e.clone());
        let hi_model = SurrogateModel::new(p_nom.clone(), e.negated());
        let s_lo = solve_subproblem(&lo_model, radius, bounds);
        let s_hi = solve_subproblem(&hi_model, radius, bounds);
        let shift = |s: &[f64]| bounds.project(&p_nom.iter().zip(s).map(|(a, b)| a + b).collect::<Vec<_>>());
        env.lower.push(lo_model.eval(&s_lo));
        env.upper.push(-hi_model.eval(&s_hi));
        env.nominal.push(run.values[row]);
        env.arg_lower.push(shift(&s_lo));
        env.arg_upper.push(shift(&s_hi));
        env.evals.push(1);
    }
    Ok(env)
}
