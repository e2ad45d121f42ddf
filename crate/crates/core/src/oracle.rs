//! Sampling ground truth: grid scans and Monte Carlo over the parameter box.
//!
//! Random samples come from ChaCha8 seeded with a 64-bit seed
//! (`ChaCha8Rng::seed_from_u64`), each coordinate drawn as
//! `lower + u * (upper - lower)` with `u` uniform on `[0, 1)`, coordinates in
//! order, samples in order. Reductions run in sample-index order.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::ParameterBox;
use crate::error::{Error, Result};
use crate::extremes::{check_request, compute_envelope, EnvelopeConfig, ExtremeEnvelope};
use crate::models::Scenario;
use crate::par::{map_indexed, Execution};

/// Upper bound on the total number of points of a multi-dimensional grid.
pub const GRID_POINT_CAP: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// `count` evenly spaced points per dimension, bounds included.
    Grid,
    UniformRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub mode: SampleMode,
    pub count: usize,
    pub seed: u64,
}

impl SamplePlan {
    pub fn grid(count: usize) -> Self {
        SamplePlan { mode: SampleMode::Grid, count, seed: 0 }
    }

    pub fn uniform(count: usize, seed: u64) -> Self {
        SamplePlan { mode: SampleMode::UniformRandom, count, seed }
    }

    /// Sample points in evaluation order.
    pub fn points(&self, bounds: &ParameterBox) -> Result<Vec<Vec<f64>>> {
        let d = bounds.dim();
        match self.mode {
            SampleMode::Grid => {
                if self.count < 2 {
                    return Err(Error::Config("a grid needs at least two points per dimension".into()));
                }
                let total = (0..d).try_fold(1usize, |acc, _| acc.checked_mul(self.count).filter(|&t| t <= GRID_POINT_CAP));
                let total = total.ok_or_else(|| {
                    Error::Config(format!("grid of {}^{d} points exceeds the cap {GRID_POINT_CAP}", self.count))
                })?;
                let step = 1.0 / (self.count - 1) as f64;
                Ok((0..total)
                    .map(|mut k| {
                        let frac: Vec<f64> = (0..d)
                            .map(|_| {
                                let i = k % self.count;
                                k /= self.count;
                                if i == self.count - 1 {
                                    1.0
                                } else {
                                    i as f64 * step
                                }
                            })
                            .collect();
                        bounds.lerp(&frac)
                    })
                    .collect())
            }
            SampleMode::UniformRandom => {
                if self.count < 1 {
                    return Err(Error::Config("need at least one sample".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                Ok((0..self.count)
                    .map(|_| {
                        let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                        bounds.lerp(&u)
                    })
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SampleEnvelope {
    pub envelope: ExtremeEnvelope,
    /// `(sample index, reason)` of every failed integration.
    pub failures: Vec<(usize, String)>,
    pub points: Vec<Vec<f64>>,
    /// Per-sample values at the requested rows, when retained.
    pub samples: Option<Vec<Vec<f64>>>,
    pub integrations: usize,
}

/// Pointwise min/max of `state` over the plan's samples at mesh `rows`.
pub fn sample_envelope(
    scenario: &Scenario,
    state: usize,
    bounds: &ParameterBox,
    plan: &SamplePlan,
    rows: &[usize],
    retain: bool,
    exec: Execution,
) -> Result<SampleEnvelope> {
    check_request(scenario, state, bounds, rows)?;
    let points = plan.points(bounds)?;
    let values = map_indexed(exec, &points, |_, p| {
        scenario.simulate(p).map(|t| rows.iter().map(|&r| t.value(r, state)).collect::<Vec<f64>>())
    });
    let times = scenario.grid.times();
    let n = rows.len();
    let mut env = ExtremeEnvelope {
        times: rows.iter().map(|&r| times[r]).collect(),
        rows: rows.to_vec(),
        lower: vec![f64::INFINITY; n],
        upper: vec![f64::NEG_INFINITY; n],
        nominal: vec![f64::NAN; n],
        arg_lower: vec![Vec::new(); n],
        arg_upper: vec![Vec::new(); n],
        evals: vec![0; n],
    };
    let mut failures = Vec::new();
    let mut kept = retain.then(Vec::new);
    for (i, v) in values.into_iter().enumerate() {
        match v {
            Ok(v) => {
                for k in 0..n {
                    if v[k] < env.lower[k] {
                        env.lower[k] = v[k];
                        env.arg_lower[k] = points[i].clone();
                    }
                    if v[k] > env.upper[k] {
                        env.upper[k] = v[k];
                        env.arg_upper[k] = points[i].clone();
                    }
                    env.evals[k] += 1;
                }
                if let Some(s) = kept.as_mut() {
                    s.push(v);
                }
            }
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if failures.len() == points.len() {
        return Err(Error::ObjectiveFailure { p: points[0].clone(), reason: "every sample failed".into() });
    }
    if !failures.is_empty() {
        log::warn!("{} of {} samples failed to integrate", failures.len(), points.len());
    }
    Ok(SampleEnvelope { envelope: env, failures, integrations: points.len(), points, samples: kept })
}

/// Empirical `p -> z_state(t_row, p)` over a one-dimensional box.
pub fn slice_function(
    scenario: &Scenario,
    state: usize,
    row: usize,
    bounds: &ParameterBox,
    plan: &SamplePlan,
    exec: Execution,
) -> Result<Vec<(f64, f64)>> {
    if bounds.dim() != 1 {
        return Err(Error::NotOneDimensional(bounds.dim()));
    }
    let s = sample_envelope(scenario, state, bounds, plan, &[row], true, exec)?;
    let ok: Vec<usize> = (0..s.points.len()).filter(|i| !s.failures.iter().any(|(j, _)| j == i)).collect();
    let values = s.samples.expect("retained");
    Ok(ok.iter().zip(values).map(|(&i, v)| (s.points[i][0], v[0])).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingReport {
    pub trust_seconds: f64,
    pub mc_seconds: f64,
    /// `mc_seconds / trust_seconds`.
    pub speedup: f64,
    pub trust_integrations: usize,
    pub mc_integrations: usize,
}

/// Wall-clock and integration counts of the trust-region envelope against a
/// sampled envelope on the same rows.
pub fn timing_compare(
    scenario: &Scenario,
    state: usize,
    bounds: &ParameterBox,
    plan: &SamplePlan,
    cfg: &EnvelopeConfig,
    rows: &[usize],
) -> Result<(TimingReport, ExtremeEnvelope, ExtremeEnvelope)> {
    let t0 = Instant::now();
    let tr = compute_envelope(scenario, state, bounds, cfg, rows)?;
    let trust_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let mc = sample_envelope(scenario, state, bounds, plan, rows, false, cfg.execution)?;
    let mc_seconds = t1.elapsed().as_secs_f64();
    let report = TimingReport {
        trust_seconds,
        mc_seconds,
        speedup: mc_seconds / trust_seconds,
        trust_integrations: tr.integrations,
        mc_integrations: mc.integrations,
    };
    Ok((report, tr.envelope, mc.envelope))
}

/// Writes `(p, value)` pairs as CSV with header `p,value`.
pub fn write_slice_csv<W: std::io::Write>(slice: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "value"])?;
    for (p, v) in slice {
        w.write_record([p.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_includes_both_bounds() {
        let b = ParameterBox::new(vec![0.2], vec![0.5]).unwrap();
        let pts = SamplePlan::grid(100).points(&b).unwrap();
        assert_eq!(pts.len(), 100);
        assert_eq!(pts[0], vec![0.2]);
        assert_eq!(pts[99], vec![0.5]);
        assert!(pts.windows(2).all(|w| w[1][0] > w[0][0]));
    }

    #[test]
    fn grid_cap_is_enforced() {
        let b = ParameterBox::new(vec![0.0; 19], vec![1.0; 19]).unwrap();
        assert!(SamplePlan::grid(3).points(&b).is_err());
        let b2 = ParameterBox::new(vec![0.0; 2], vec![1.0; 2]).unwrap();
        assert_eq!(SamplePlan::grid(3).points(&b2).unwrap().len(), 9);
    }

    #[test]
    fn seeded_samples_reproduce_and_stay_inside() {
        let b = ParameterBox::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        let a = SamplePlan::uniform(500, 7).points(&b).unwrap();
        let c = SamplePlan::uniform(500, 7).points(&b).unwrap();
        let d = SamplePlan::uniform(500, 8).points(&b).unwrap();
        assert_eq!(a, c);
        assert_ne!(a, d);
        assert!(a.iter().all(|p| b.contains(p)));
    }

    #[test]
    fn slice_csv() {
        let mut buf = Vec::new();
        write_slice_csv(&[(0.5, 1.0)], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "p,value\n0.5,1\n");
    }
}
