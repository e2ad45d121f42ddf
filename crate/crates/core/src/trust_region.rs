//! Box-constrained trust-region minimization over a quadratic surrogate.
//!
//! The trust region uses the infinity norm, so its intersection with the
//! parameter box is again a box and each subproblem is a box-constrained
//! quadratic program, solved by a generalized Cauchy point followed by
//! projected truncated conjugate gradients.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::ParameterBox;
use crate::error::{Error, Result};

/// Acceptance and radius-update settings. `None` radii default to a quarter
/// of the box width (`delta0`) and the box width (`delta_max`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustConfig {
    /// A step is accepted iff `rho > eta`.
    pub eta: f64,
    /// Shrink below this ratio.
    pub eta1: f64,
    /// Expand above this ratio (if the step reached the radius).
    pub eta2: f64,
    pub delta0: Option<f64>,
    pub delta_max: Option<f64>,
    /// Tolerance on the box-scaled projected gradient.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Cap on objective evaluations (full integrations) per run.
    pub max_model_evals: usize,
    /// Failed evaluations tolerated before giving up.
    pub max_retries: usize,
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig {
            eta: 0.05,
            eta1: 0.25,
            eta2: 0.75,
            delta0: None,
            delta_max: None,
            grad_tol: 1e-7,
            max_iters: 50,
            max_model_evals: 30,
            max_retries: 3,
        }
    }
}

impl TrustConfig {
    /// Resolved `(delta0, delta_max)` for `bounds`.
    pub fn radii(&self, bounds: &ParameterBox) -> Result<(f64, f64)> {
        let width = bounds.width();
        let dmax = self.delta_max.unwrap_or(width);
        let d0 = self.delta0.unwrap_or(0.25 * width).min(dmax);
        let ok_eta = 0.0 <= self.eta && self.eta < self.eta1 && self.eta1 < self.eta2 && self.eta2 < 1.0;
        if !ok_eta {
            return Err(Error::Config(format!(
                "need 0 <= eta < eta1 < eta2 < 1, got {}, {}, {}",
                self.eta, self.eta1, self.eta2
            )));
        }
        if width > 0.0 && !(d0 > 0.0 && d0 <= dmax) {
            return Err(Error::Config(format!("need 0 < delta0 <= delta_max, got {d0}, {dmax}")));
        }
        if !(self.grad_tol > 0.0) || self.max_iters == 0 || self.max_model_evals == 0 {
            return Err(Error::Config("tolerances and limits must be positive".into()));
        }
        Ok((d0, dmax))
    }
}

/// Value, gradient and Hessian of the objective at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl Evaluation {
    pub fn negated(mut self) -> Self {
        self.value = -self.value;
        self.gradient.neg_mut();
        self.hessian.neg_mut();
        self
    }
}

/// `m(base + s) = value + gradient.s + s.hessian.s / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateModel {
    pub base: Vec<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl SurrogateModel {
    pub fn new(base: Vec<f64>, e: Evaluation) -> Self {
        let h = &e.hessian;
        let hessian = (h + h.transpose()) * 0.5;
        SurrogateModel { base, value: e.value, gradient: e.gradient, hessian }
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// Change of the model along `s`; zero exactly at `s = 0`.
    pub fn change(&self, s: &[f64]) -> f64 {
        let s = DVector::from_column_slice(s);
        self.gradient.dot(&s) + 0.5 * s.dot(&(&self.hessian * &s))
    }

    pub fn eval(&self, s: &[f64]) -> f64 {
        self.value + self.change(s)
    }

    /// Model evaluated at an absolute parameter point.
    pub fn eval_at(&self, p: &[f64]) -> f64 {
        let s: Vec<f64> = p.iter().zip(&self.base).map(|(a, b)| a - b).collect();
        self.eval(&s)
    }
}

/// Agreement ratio of actual to predicted reduction.
pub fn trust_ratio(f_old: f64, f_new: f64, m_old: f64, m_new: f64) -> Result<f64> {
    let pred = m_old - m_new;
    if !(pred > 1e-16) {
        return Err(Error::DegenerateModelDecrease(pred));
    }
    Ok((f_old - f_new) / pred)
}

/// Approximate minimizer of the model over `{s : lo <= s <= hi}` where the
/// bounds already combine the radius and the parameter box (`lo <= 0 <= hi`).
/// The result never increases the model and reaches at least the generalized
/// Cauchy point decrease.
pub fn solve_box_qp(model: &SurrogateModel, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = model.dim();
    debug_assert!(lo.iter().zip(hi).all(|(l, h)| *l <= 0.0 && 0.0 <= *h));
    let g = &model.gradient;
    let b = &model.hessian;
    // a feasible Newton step of a convex model is the exact solution
    if let Some(chol) = b.clone().cholesky() {
        let newton = -chol.solve(g);
        if newton.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| l <= x && x <= h) {
            return newton.as_slice().to_vec();
        }
    }
    let mut s = cauchy_point(g, b, lo, hi);

    // subspace CG over the variables strictly inside their bounds
    let tol = 1e-12 * (1.0 + g.amax());
    'outer: for _ in 0..(2 * n + 4) {
        let free: Vec<usize> = (0..n).filter(|&i| lo[i] < s[i] && s[i] < hi[i]).collect();
        if free.is_empty() {
            break;
        }
        let sv = DVector::from_column_slice(&s);
        let grad = g + b * &sv;
        let mut r = DVector::from_fn(free.len(), |k, _| -grad[free[k]]);
        if r.amax() <= tol {
            break;
        }
        let bf = DMatrix::from_fn(free.len(), free.len(), |a, c| b[(free[a], free[c])]);
        let mut d = r.clone();
        for _ in 0..free.len().max(1) * 2 {
            let q = &bf * &d;
            let kappa = d.dot(&q);
            // largest feasible step along d
            let mut a_max = f64::INFINITY;
            let mut hit = None;
            for (k, &i) in free.iter().enumerate() {
                let lim = if d[k] > 0.0 {
                    (hi[i] - s[i]) / d[k]
                } else if d[k] < 0.0 {
                    (lo[i] - s[i]) / d[k]
                } else {
                    f64::INFINITY
                };
                if lim < a_max {
                    a_max = lim;
                    hit = Some(k);
                }
            }
            let rr = r.dot(&r);
            let a = if kappa > 0.0 { rr / kappa } else { f64::INFINITY };
            if a >= a_max {
                if !a_max.is_finite() {
                    // unbounded negative curvature cannot happen inside a box
                    break 'outer;
                }
                for (k, &i) in free.iter().enumerate() {
                    s[i] = (s[i] + a_max * d[k]).clamp(lo[i], hi[i]);
                }
                if let Some(k) = hit {
                    let i = free[k];
                    s[i] = if d[k] > 0.0 { hi[i] } else { lo[i] };
                }
                continue 'outer;
            }
            for (k, &i) in free.iter().enumerate() {
                s[i] += a * d[k];
            }
            let r_new = &r - &q * a;
            if r_new.amax() <= tol {
                break 'outer;
            }
            let beta = r_new.dot(&r_new) / rr;
            d = &r_new + &d * beta;
            r = r_new;
        }
        break;
    }
    if model.change(&s) <= 0.0 {
        s
    } else {
        vec![0.0; n]
    }
}

/// First local minimizer of the model along the projected steepest-descent
/// path `s(t) = clamp(-t g, lo, hi)`.
fn cauchy_point(g: &DVector<f64>, b: &DMatrix<f64>, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = g.len();
    let mut s = vec![0.0; n];
    // breakpoint of each coordinate
    let bp: Vec<f64> = (0..n)
        .map(|i| {
            if g[i] < 0.0 {
                hi[i] / -g[i]
            } else if g[i] > 0.0 {
                lo[i] / -g[i]
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..n).filter(|&i| bp[i].is_finite()).collect();
    order.sort_by(|&a, &c| bp[a].total_cmp(&bp[c]));
    let mut t = 0.0;
    let mut next = 0;
    // skip coordinates that cannot move
    while next < order.len() && bp[order[next]] <= 0.0 {
        next += 1;
    }
    let mut fixed: Vec<bool> = (0..n).map(|i| !bp[i].is_finite() || bp[i] <= 0.0).collect();
    loop {
        let d = DVector::from_fn(n, |i, _| if fixed[i] { 0.0 } else { -g[i] });
        if d.amax() == 0.0 {
            break;
        }
        let sv = DVector::from_column_slice(&s);
        let slope = (g + b * &sv).dot(&d);
        if slope >= 0.0 {
            break;
        }
        let curv = d.dot(&(b * &d));
        let t_next = if next < order.len() { bp[order[next]] } else { f64::INFINITY };
        let seg = t_next - t;
        if curv > 0.0 && -slope / curv < seg {
            let tau = -slope / curv;
            for i in 0..n {
                if !fixed[i] {
                    s[i] += tau * d[i];
                }
            }
            break;
        }
        if !seg.is_finite() {
            break;
        }
        for i in 0..n {
            if !fixed[i] {
                s[i] += seg * d[i];
            }
        }
        t = t_next;
        while next < order.len() && bp[order[next]] <= t {
            let i = order[next];
            s[i] = if g[i] < 0.0 { hi[i] } else { lo[i] };
            fixed[i] = true;
            next += 1;
        }
    }
    for i in 0..n {
        s[i] = s[i].clamp(lo[i], hi[i]);
    }
    s
}

/// Trust-region subproblem at `model.base` with infinity-norm radius `delta`
/// intersected with `bounds`.
pub fn solve_subproblem(model: &SurrogateModel, delta: f64, bounds: &ParameterBox) -> Vec<f64> {
    let (lo, hi) = step_bounds(&model.base, delta, bounds);
    solve_box_qp(model, &lo, &hi)
}

fn step_bounds(p: &[f64], delta: f64, bounds: &ParameterBox) -> (Vec<f64>, Vec<f64>) {
    let lo = p.iter().zip(bounds.lower()).map(|(x, l)| (l - x).max(-delta).min(0.0)).collect();
    let hi = p.iter().zip(bounds.upper()).map(|(x, u)| (u - x).min(delta).max(0.0)).collect();
    (lo, hi)
}

/// `||P(q - grad_q) - q||_inf` in unit-box coordinates `q = (p - lower) / width`.
pub fn projected_gradient_norm(p: &[f64], gradient: &DVector<f64>, bounds: &ParameterBox) -> f64 {
    let mut m = 0.0f64;
    for i in 0..p.len() {
        let w = bounds.upper()[i] - bounds.lower()[i];
        if w <= 0.0 {
            continue;
        }
        let q = (p[i] - bounds.lower()[i]) / w;
        let step = (q - gradient[i] * w).clamp(0.0, 1.0) - q;
        m = m.max(step.abs());
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrustStatus {
    Converged,
    IterLimit,
    RadiusCollapse,
}

/// One trial step.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Iterate at which the model was built.
    pub p: Vec<f64>,
    pub trial: Vec<f64>,
    pub value: f64,
    /// Objective at the trial point (`NaN` if the evaluation failed).
    pub trial_value: f64,
    pub model_value: f64,
    pub delta: f64,
    pub delta_next: f64,
    /// `NaN` when the evaluation failed.
    pub rho: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrustResult {
    pub p_star: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Objective evaluations, each one full integration with sensitivities.
    pub evals: usize,
    pub status: TrustStatus,
    pub log: Vec<IterationRecord>,
    /// Surrogate built at every accepted iterate, in order.
    pub models: Vec<SurrogateModel>,
}

/// Minimizes `objective` over `bounds` from `p0`.
pub fn minimize<F>(mut objective: F, p0: &[f64], bounds: &ParameterBox, cfg: &TrustConfig) -> Result<TrustResult>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    if !bounds.contains(p0) {
        return Err(Error::InvalidBox(format!("start point {p0:?} is outside the box")));
    }
    let (mut delta, delta_max) = cfg.radii(bounds)?;
    let mut p = p0.to_vec();
    let mut model = SurrogateModel::new(p.clone(), objective(&p)?);
    let mut evals = 1;
    let mut failures = 0;
    let mut log = Vec::new();
    let mut models = vec![model.clone()];
    let mut status = TrustStatus::IterLimit;
    let tiny = 1e-14 * bounds.width().max(1.0);

    for k in 0..cfg.max_iters {
        if projected_gradient_norm(&p, &model.gradient, bounds) <= cfg.grad_tol || bounds.width() == 0.0 {
            status = TrustStatus::Converged;
            break;
        }
        if delta < tiny {
            status = TrustStatus::RadiusCollapse;
            break;
        }
        let s = solve_subproblem(&model, delta, bounds);
        let m_new = model.eval(&s);
        if !(model.value - m_new > 1e-16) {
            // the model cannot decrease inside the region: stationary for it
            status = TrustStatus::Converged;
            break;
        }
        if evals >= cfg.max_model_evals {
            break;
        }
        let trial = bounds.project(&p.iter().zip(&s).map(|(a, b)| a + b).collect::<Vec<_>>());
        let s_norm = s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        evals += 1;
        let mut rec = IterationRecord {
            k,
            p: p.clone(),
            trial: trial.clone(),
            value: model.value,
            trial_value: f64::NAN,
            model_value: m_new,
            delta,
            delta_next: delta,
            rho: f64::NAN,
            accepted: false,
        };
        let eval = match objective(&trial) {
            Ok(e) => e,
            Err(e) => {
                failures += 1;
                delta /= 4.0;
                rec.delta_next = delta;
                log.push(rec);
                log::debug!("trust-region evaluation failed at {trial:?}: {e}");
                if failures > cfg.max_retries {
                    status = TrustStatus::RadiusCollapse;
                    break;
                }
                continue;
            }
        };
        let rho = trust_ratio(model.value, eval.value, model.value, m_new)?;
        rec.trial_value = eval.value;
        rec.rho = rho;
        delta = next_radius(rho, s_norm, delta, delta_max, cfg);
        rec.delta_next = delta;
        if rho > cfg.eta {
            rec.accepted = true;
            p = trial;
            model = SurrogateModel::new(p.clone(), eval);
            models.push(model.clone());
        }
        log::trace!("tr k={k} rho={rho:.4e} delta={:.4e}->{delta:.4e} accepted={}", rec.delta, rec.accepted);
        log.push(rec);
    }
    Ok(TrustResult {
        value: model.value,
        p_star: p,
        iterations: log.len(),
        evals,
        status,
        log,
        models,
    })
}

/// Radius update: shrink by 4 below `eta1`; double (capped) above `eta2` when
/// the step reached the radius; otherwise keep.
pub fn next_radius(rho: f64, step_norm: f64, delta: f64, delta_max: f64, cfg: &TrustConfig) -> f64 {
    if rho < cfg.eta1 {
        delta / 4.0
    } else if rho > cfg.eta2 && (step_norm - delta).abs() <= 1e-12 * delta {
        (2.0 * delta).min(delta_max)
    } else {
        delta
    }
}

/// Maximizes by minimizing the negated objective; values in the result and
/// its log are reported for the original objective.
pub fn maximize<F>(mut objective: F, p0: &[f64], bounds: &ParameterBox, cfg: &TrustConfig) -> Result<TrustResult>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    let mut r = minimize(|p| objective(p).map(Evaluation::negated), p0, bounds, cfg)?;
    r.value = -r.value;
    for rec in &mut r.log {
        rec.value = -rec.value;
        rec.trial_value = -rec.trial_value;
        rec.model_value = -rec.model_value;
    }
    for m in &mut r.models {
        m.value = -m.value;
        m.gradient.neg_mut();
        m.hessian.neg_mut();
    }
    Ok(r)
}

/// Writes the iteration log as CSV: `k, delta, delta_next, rho, accepted,
/// value, trial_value, model_value, p_1.., trial_1..`.
pub fn write_log<W: Write>(log: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let np = log.first().map_or(0, |r| r.p.len());
    let mut header: Vec<String> =
        ["k", "delta", "delta_next", "rho", "accepted", "value", "trial_value", "model_value"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    header.extend((1..=np).map(|i| format!("p_{i}")));
    header.extend((1..=np).map(|i| format!("trial_{i}")));
    w.write_record(&header)?;
    for r in log {
        let mut row = vec![
            r.k.to_string(),
            r.delta.to_string(),
            r.delta_next.to_string(),
            r.rho.to_string(),
            r.accepted.to_string(),
            r.value.to_string(),
            r.trial_value.to_string(),
            r.model_value.to_string(),
        ];
        row.extend(r.p.iter().map(|x| x.to_string()));
        row.extend(r.trial.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
