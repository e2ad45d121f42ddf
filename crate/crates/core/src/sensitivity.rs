//! Forward first- and second-order trajectory sensitivities.
//!
//! First order, per parameter `a`:
//!
//! ```text
//! [dt*F_x - I, dt*F_y] u_t = -dt*F_a - u_x(t-1)
//! [G_x,        G_y   ] u_t = -G_a
//! ```
//!
//! Second order replaces `(F_a, G_a)` by the forcing term
//! `xi^{ab} = h_ab + h_az u^b + h_bz u^a + (I (x) u^aT) H u^b`, which for `a == b`
//! is `h_aa + 2 h_az u^a + (I (x) u^aT) H u^a`. Every right-hand side of a step
//! shares one factorization of the step matrix evaluated at the converged state.

use nalgebra::{DMatrix, DVector};

use crate::dae::{
    hessian_of, integrate_observed, param_jacobian_of, step_matrix, jacobian_of, DaeSystem,
    EventSchedule, HessTerm, IntegratorConfig, Point, StepObserver, TimeGrid, Trajectory,
};
use crate::error::{Error, Result};
use crate::linalg::Factorization;

/// Position of the unordered pair `(a, b)` in upper-triangle packed order.
pub fn pair_index(n_param: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * n_param - a * (a + 1) / 2 + b
}

pub fn n_pairs(n_param: usize) -> usize {
    n_param * (n_param + 1) / 2
}

/// Iterates `(a, b)` with `a <= b` in packed order.
pub fn pairs(n_param: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n_param).flat_map(move |a| (a..n_param).map(move |b| (a, b)))
}

/// Second-order sensitivities of every state: column `pair_index(a, b)` holds
/// `v^{ab}`. Only `a <= b` is stored; `(b, a)` aliases it.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondOrder {
    pub n_param: usize,
    pub m: DMatrix<f64>,
}

impl SecondOrder {
    pub fn zeros(n_state: usize, n_param: usize) -> Self {
        SecondOrder { n_param, m: DMatrix::zeros(n_state, n_pairs(n_param)) }
    }

    pub fn pair(&self, a: usize, b: usize) -> DVector<f64> {
        self.m.column(pair_index(self.n_param, a, b)).into_owned()
    }

    /// The symmetric `n_param x n_param` matrix of state `i`.
    pub fn state_hessian(&self, i: usize) -> DMatrix<f64> {
        let np = self.n_param;
        DMatrix::from_fn(np, np, |a, b| self.m[(i, pair_index(np, a, b))])
    }
}

/// Forcing term split into differential and algebraic rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingTerm {
    pub xi_x: DVector<f64>,
    pub xi_y: DVector<f64>,
}

/// Forcing terms for every parameter pair, as an `n_state x n_pairs` matrix.
/// `u` is `n_state x n_param`.
pub fn forcing_matrix(terms: &[HessTerm], u: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, np) = (u.nrows(), u.ncols());
    let mut xi = DMatrix::zeros(n, n_pairs(np));
    for t in terms {
        let (a, b, v) = (t.a, t.b, t.val);
        match (a < n, b < n) {
            (true, true) => {
                for (k, (al, be)) in pairs(np).enumerate() {
                    let mut w = u[(a, al)] * u[(b, be)];
                    if a != b {
                        w += u[(b, al)] * u[(a, be)];
                    }
                    xi[(t.row, k)] += v * w;
                }
            }
            (true, false) => {
                let pk = b - n;
                for other in 0..np {
                    // w_al[a] w_be[b] + w_al[b] w_be[a] with w[b] = delta(pk)
                    let k = pair_index(np, pk, other);
                    let w = if other == pk { 2.0 * u[(a, pk)] } else { u[(a, other)] };
                    xi[(t.row, k)] += v * w;
                }
            }
            (false, true) => {
                let pk = a - n;
                for other in 0..np {
                    let k = pair_index(np, pk, other);
                    let w = if other == pk { 2.0 * u[(b, pk)] } else { u[(b, other)] };
                    xi[(t.row, k)] += v * w;
                }
            }
            (false, false) => {
                xi[(t.row, pair_index(np, a - n, b - n))] += v;
            }
        }
    }
    xi
}

/// Forcing term of one pair `(a, b)`.
pub fn forcing(terms: &[HessTerm], u: &DMatrix<f64>, n_diff: usize, a: usize, b: usize) -> ForcingTerm {
    let xi = forcing_matrix(terms, u).column(pair_index(u.ncols(), a, b)).into_owned();
    ForcingTerm {
        xi_x: xi.rows(0, n_diff).into_owned(),
        xi_y: xi.rows(n_diff, xi.len() - n_diff).into_owned(),
    }
}

/// Second-order Taylor value `z + u.s + s'Vs/2`; exactly `z_nom` at `s = 0`.
pub fn taylor_eval(z_nom: f64, u_row: &[f64], v: &DMatrix<f64>, s: &[f64]) -> f64 {
    if s.iter().all(|&x| x == 0.0) {
        return z_nom;
    }
    let lin: f64 = u_row.iter().zip(s).map(|(a, b)| a * b).sum();
    let mut quad = 0.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            quad += s[i] * v[(i, j)] * s[j];
        }
    }
    z_nom + lin + 0.5 * quad
}

/// Sensitivities of the solution of the steady-state system `h(z, p) = 0` at
/// `z0` by implicit differentiation: `u = -J^{-1} h_p`, `v^{ab} = -J^{-1} xi^{ab}`.
pub fn initial_sensitivity(sys: &dyn DaeSystem, z0: &[f64], p: &[f64]) -> Result<(DMatrix<f64>, SecondOrder)> {
    let d = sys.dims();
    if z0.len() != d.n_state() || p.len() != d.n_param {
        return Err(Error::Dimension("initial_sensitivity: state/parameter sizes".into()));
    }
    let sw = sys.initial_switches();
    let at = Point { z: z0, p, t: 0.0, sw: &sw };
    let lu = Factorization::new(jacobian_of(sys, &at)).ok_or(Error::SingularJacobian { step: 0, time: 0.0 })?;
    let mut u = -param_jacobian_of(sys, &at);
    lu.solve_mat(&mut u);
    let mut v = -forcing_matrix(&hessian_of(sys, &at), &u);
    lu.solve_mat(&mut v);
    Ok((u, SecondOrder { n_param: d.n_param, m: v }))
}

/// Per-step sensitivity solves against a shared factorization.
struct Kernel<'a> {
    sys: &'a dyn DaeSystem,
    p: &'a [f64],
    nd: usize,
    na: usize,
}

impl<'a> Kernel<'a> {
    fn new(sys: &'a dyn DaeSystem, p: &'a [f64]) -> Self {
        let d = sys.dims();
        Kernel { sys, p, nd: d.n_diff, na: d.n_alg }
    }

    fn factor_step(&self, z: &[f64], t: f64, dt: f64, sw: &[f64], row: usize) -> Result<Factorization> {
        let a = step_matrix(self.sys, &Point { z, p: self.p, t, sw }, dt);
        Factorization::new(a).ok_or(Error::SingularJacobian { step: row, time: t })
    }

    fn first(&self, lu: &Factorization, z: &[f64], t: f64, dt: f64, sw: &[f64], u_prev: &DMatrix<f64>) -> DMatrix<f64> {
        let mut rhs = -param_jacobian_of(self.sys, &Point { z, p: self.p, t, sw });
        for i in 0..self.nd {
            for k in 0..rhs.ncols() {
                rhs[(i, k)] = dt * rhs[(i, k)] - u_prev[(i, k)];
            }
        }
        lu.solve_mat(&mut rhs);
        rhs
    }

    fn second(
        &self,
        lu: &Factorization,
        z: &[f64],
        t: f64,
        dt: f64,
        sw: &[f64],
        u: &DMatrix<f64>,
        v_prev: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let terms = hessian_of(self.sys, &Point { z, p: self.p, t, sw });
        let mut rhs = -forcing_matrix(&terms, u);
        for i in 0..self.nd {
            for k in 0..rhs.ncols() {
                rhs[(i, k)] = dt * rhs[(i, k)] - v_prev[(i, k)];
            }
        }
        lu.solve_mat(&mut rhs);
        rhs
    }

    /// Re-solves algebraic rows after an event: `G_y w_y = -(G_x w_x + b_y)`.
    fn algebraic(&self, z: &[f64], t: f64, sw: &[f64], row: usize, u: &mut DMatrix<f64>, v: Option<&mut DMatrix<f64>>) -> Result<()> {
        if self.na == 0 {
            return Ok(());
        }
        let (nd, na) = (self.nd, self.na);
        let at = Point { z, p: self.p, t, sw };
        let j = jacobian_of(self.sys, &at);
        let gx = j.view((nd, 0), (na, nd)).into_owned();
        let gy = j.view((nd, nd), (na, na)).into_owned();
        let lu = Factorization::new(gy).ok_or(Error::SingularJacobian { step: row, time: t })?;
        let gp = param_jacobian_of(self.sys, &at).rows(nd, na).into_owned();
        let mut rhs = -(&gx * u.rows(0, nd) + gp);
        lu.solve_mat(&mut rhs);
        u.rows_mut(nd, na).copy_from(&rhs);
        if let Some(v) = v {
            let xi = forcing_matrix(&hessian_of(self.sys, &at), u);
            let mut rhs = -(&gx * v.rows(0, nd) + xi.rows(nd, na));
            lu.solve_mat(&mut rhs);
            v.rows_mut(nd, na).copy_from(&rhs);
        }
        Ok(())
    }
}

fn check_u0(sys: &dyn DaeSystem, u0: &DMatrix<f64>) -> Result<()> {
    let d = sys.dims();
    if u0.nrows() != d.n_state() || u0.ncols() != d.n_param {
        return Err(Error::Dimension(format!(
            "U0 must be {}x{}, got {}x{}",
            d.n_state(),
            d.n_param,
            u0.nrows(),
            u0.ncols()
        )));
    }
    Ok(())
}

/// First-order sensitivities along `traj`, one `n_state x n_param` matrix per
/// stored time.
pub fn propagate_first_order(sys: &dyn DaeSystem, traj: &Trajectory, u0: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    check_u0(sys, u0)?;
    let k = Kernel::new(sys, &traj.params);
    let mut u = u0.clone();
    if let Some(ev) = traj.event_at(0) {
        k.algebraic(traj.state(0), traj.times[0], &ev.post_switches, 0, &mut u, None)?;
    }
    let mut out = Vec::with_capacity(traj.len());
    out.push(u.clone());
    for row in 1..traj.len() {
        let (t, dt) = (traj.times[row], traj.times[row] - traj.times[row - 1]);
        let sw = traj.step_switches(row);
        let ev = traj.event_at(row);
        let z = ev.map(|e| e.pre_state.as_slice()).unwrap_or(traj.state(row));
        let lu = k.factor_step(z, t, dt, sw, row)?;
        u = k.first(&lu, z, t, dt, sw, &u);
        if let Some(e) = ev {
            k.algebraic(traj.state(row), t, &e.post_switches, row, &mut u, None)?;
        }
        out.push(u.clone());
    }
    Ok(out)
}

/// Second-order sensitivities along `traj` given the first-order series `us`.
pub fn propagate_second_order(
    sys: &dyn DaeSystem,
    traj: &Trajectory,
    us: &[DMatrix<f64>],
    v0: &SecondOrder,
) -> Result<Vec<SecondOrder>> {
    let d = sys.dims();
    if us.len() != traj.len() || v0.m.nrows() != d.n_state() || v0.n_param != d.n_param {
        return Err(Error::Dimension("second-order propagation inputs".into()));
    }
    let k = Kernel::new(sys, &traj.params);
    let mut v = v0.m.clone();
    if let Some(ev) = traj.event_at(0) {
        let mut u = us[0].clone();
        k.algebraic(traj.state(0), traj.times[0], &ev.post_switches, 0, &mut u, Some(&mut v))?;
    }
    let mut out = Vec::with_capacity(traj.len());
    out.push(SecondOrder { n_param: d.n_param, m: v.clone() });
    for row in 1..traj.len() {
        let (t, dt) = (traj.times[row], traj.times[row] - traj.times[row - 1]);
        let sw = traj.step_switches(row);
        let ev = traj.event_at(row);
        let z = ev.map(|e| e.pre_state.as_slice()).unwrap_or(traj.state(row));
        let lu = k.factor_step(z, t, dt, sw, row)?;
        if let Some(e) = ev {
            // Pre-event first-order values drive the step; the stored series
            // holds post-event values.
            let u_pre = k.first(&lu, z, t, dt, sw, &us[row - 1]);
            v = k.second(&lu, z, t, dt, sw, &u_pre, &v);
            let mut u = us[row].clone();
            k.algebraic(traj.state(row), t, &e.post_switches, row, &mut u, Some(&mut v))?;
        } else {
            v = k.second(&lu, z, t, dt, sw, &us[row], &v);
        }
        out.push(SecondOrder { n_param: d.n_param, m: v.clone() });
    }
    Ok(out)
}

/// Which state rows a combined integration keeps.
#[derive(Clone, Debug, PartialEq)]
pub enum Tracking {
    All,
    Rows(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

/// Sensitivities of the tracked states at one stored time.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityState {
    pub time: f64,
    /// `n_tracked x n_param`.
    pub u: DMatrix<f64>,
    /// One symmetric `n_param x n_param` matrix per tracked state (empty for
    /// first-order runs).
    pub v: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivitySeries {
    pub tracked: Vec<usize>,
    pub states: Vec<SensitivityState>,
}

impl SensitivitySeries {
    fn slot(&self, state: usize) -> Option<usize> {
        self.tracked.iter().position(|&s| s == state)
    }

    pub fn gradient(&self, row: usize, state: usize) -> Option<Vec<f64>> {
        let k = self.slot(state)?;
        Some(self.states[row].u.row(k).iter().copied().collect())
    }

    pub fn hessian(&self, row: usize, state: usize) -> Option<&DMatrix<f64>> {
        let k = self.slot(state)?;
        self.states[row].v.get(k)
    }
}

struct Recorder<'a> {
    kernel: Kernel<'a>,
    order: Order,
    tracked: Vec<usize>,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    n_param: usize,
    states: Vec<SensitivityState>,
    times: &'a [f64],
}

impl Recorder<'_> {
    fn snapshot(&self, row: usize) -> SensitivityState {
        let np = self.n_param;
        let u = DMatrix::from_fn(self.tracked.len(), np, |k, a| self.u[(self.tracked[k], a)]);
        let v = match self.order {
            Order::First => Vec::new(),
            Order::Second => self
                .tracked
                .iter()
                .map(|&i| DMatrix::from_fn(np, np, |a, b| self.v[(i, pair_index(np, a, b))]))
                .collect(),
        };
        SensitivityState { time: self.times[row], u, v }
    }

    fn record(&mut self, row: usize) {
        let s = self.snapshot(row);
        if self.states.len() > row {
            self.states[row] = s;
        } else {
            self.states.push(s);
        }
    }
}

impl StepObserver for Recorder<'_> {
    fn on_start(&mut self, _z: &[f64], _sw: &[f64]) -> Result<()> {
        self.record(0);
        Ok(())
    }

    fn on_step(&mut self, row: usize, z: &[f64], dt: f64, t: f64, sw: &[f64]) -> Result<Option<Factorization>> {
        let lu = self.kernel.factor_step(z, t, dt, sw, row)?;
        self.u = self.kernel.first(&lu, z, t, dt, sw, &self.u);
        if self.order == Order::Second {
            self.v = self.kernel.second(&lu, z, t, dt, sw, &self.u, &self.v);
        }
        self.record(row);
        Ok(Some(lu))
    }

    fn on_event(&mut self, row: usize, z: &[f64], t: f64, sw: &[f64]) -> Result<()> {
        let v = if self.order == Order::Second { Some(&mut self.v) } else { None };
        self.kernel.algebraic(z, t, sw, row, &mut self.u, v)?;
        if row > 0 {
            self.record(row);
        }
        Ok(())
    }
}

/// Integrates the DAE and its sensitivities in one pass, factoring each step
/// matrix once for Newton reuse and all sensitivity right-hand sides.
#[allow(clippy::too_many_arguments)]
pub fn integrate_with_sensitivities(
    sys: &dyn DaeSystem,
    z0: &[f64],
    p: &[f64],
    u0: &DMatrix<f64>,
    v0: Option<&SecondOrder>,
    grid: &TimeGrid,
    events: &EventSchedule,
    cfg: &IntegratorConfig,
    tracking: &Tracking,
    order: Order,
) -> Result<(Trajectory, SensitivitySeries)> {
    check_u0(sys, u0)?;
    let d = sys.dims();
    let tracked = match tracking {
        Tracking::All => (0..d.n_state()).collect(),
        Tracking::Rows(r) => r.clone(),
    };
    if tracked.iter().any(|&i| i >= d.n_state()) {
        return Err(Error::Dimension("tracked state index out of range".into()));
    }
    let v = match v0 {
        Some(v0) => v0.m.clone(),
        None => DMatrix::zeros(d.n_state(), n_pairs(d.n_param)),
    };
    let mut rec = Recorder {
        kernel: Kernel::new(sys, p),
        order,
        tracked: tracked.clone(),
        u: u0.clone(),
        v,
        n_param: d.n_param,
        states: Vec::with_capacity(grid.len()),
        times: grid.times(),
    };
    let traj = integrate_observed(sys, z0, p, grid, events, cfg, &mut rec)?;
    Ok((traj, SensitivitySeries { tracked, states: rec.states }))
}
