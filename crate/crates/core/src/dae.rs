//! Semi-explicit parameterized DAE systems and their backward-Euler integration.
//!
//! A system is `x' = f(x, y, p, t)`, `0 = g(x, y, p, t)`, handled throughout as
//! the stacked state `z = [x; y]` with residual `h = [f; g]`. Discrete data that
//! events mutate (fault admittances and the like) lives in a small "switch"
//! vector passed alongside the state.
//!
//! Each step solves
//!
//! ```text
//! [ dt*f(z_t) - (x_t - x_{t-1}) ]   [0]
//! [          g(z_t)             ] = [0]
//! ```
//!
//! by Newton iteration with the step matrix `[[dt*F_x - I, dt*F_y], [G_x, G_y]]`,
//! the same matrix the sensitivity solves use.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::Factorization;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n_diff: usize,
    pub n_alg: usize,
    pub n_param: usize,
}

impl Dims {
    pub fn n_state(&self) -> usize {
        self.n_diff + self.n_alg
    }

    /// Size of the `[z; p]` variable space used by Hessian terms.
    pub fn n_var(&self) -> usize {
        self.n_state() + self.n_param
    }
}

/// Evaluation point for system callbacks.
#[derive(Clone, Copy, Debug)]
pub struct Point<'a> {
    pub z: &'a [f64],
    pub p: &'a [f64],
    pub t: f64,
    pub sw: &'a [f64],
}

/// One entry `d^2 h_row / d v_a d v_b` of the stacked Hessian, with `a <= b`
/// indexing the `[z; p]` variable space. Entries with the same
/// `(row, a, b)` are summed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HessTerm {
    pub row: usize,
    pub a: usize,
    pub b: usize,
    pub val: f64,
}

pub trait DaeSystem: Send + Sync {
    fn dims(&self) -> Dims;

    /// Initial values of the event-mutable data slots.
    fn initial_switches(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Writes `[f; g]` into `out` (length `n_state`).
    fn residual(&self, at: &Point, out: &mut [f64]);

    /// Accumulates `[[F_x, F_y], [G_x, G_y]]` into a zeroed `n_state x n_state` matrix.
    fn jacobian(&self, at: &Point, jz: &mut DMatrix<f64>);

    /// Accumulates `[F_p; G_p]` into a zeroed `n_state x n_param` matrix.
    fn param_jacobian(&self, at: &Point, jp: &mut DMatrix<f64>);

    /// Appends the nonzero upper-triangle second derivatives of every residual
    /// row over `[z; p]`.
    fn hessian(&self, at: &Point, out: &mut Vec<HessTerm>);

    fn residual_f(&self, at: &Point) -> Vec<f64> {
        let d = self.dims();
        let mut out = vec![0.0; d.n_state()];
        self.residual(at, &mut out);
        out.truncate(d.n_diff);
        out
    }

    fn residual_g(&self, at: &Point) -> Vec<f64> {
        let d = self.dims();
        let mut out = vec![0.0; d.n_state()];
        self.residual(at, &mut out);
        out.split_off(d.n_diff)
    }
}

pub fn jacobian_of(sys: &dyn DaeSystem, at: &Point) -> DMatrix<f64> {
    let n = sys.dims().n_state();
    let mut m = DMatrix::zeros(n, n);
    sys.jacobian(at, &mut m);
    m
}

pub fn param_jacobian_of(sys: &dyn DaeSystem, at: &Point) -> DMatrix<f64> {
    let d = sys.dims();
    let mut m = DMatrix::zeros(d.n_state(), d.n_param);
    sys.param_jacobian(at, &mut m);
    m
}

pub fn hessian_of(sys: &dyn DaeSystem, at: &Point) -> Vec<HessTerm> {
    let mut terms = Vec::new();
    sys.hessian(at, &mut terms);
    terms
}

/// Dense symmetric Hessian of one residual row over `[z; p]`.
pub fn row_hessian(terms: &[HessTerm], row: usize, n_var: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n_var, n_var);
    for t in terms.iter().filter(|t| t.row == row) {
        h[(t.a, t.b)] += t.val;
        if t.a != t.b {
            h[(t.b, t.a)] += t.val;
        }
    }
    h
}

/// A timed mutation of the switch data.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub label: String,
    pub set: Vec<(usize, f64)>,
}

impl Event {
    pub fn new(time: f64, label: impl Into<String>, set: Vec<(usize, f64)>) -> Self {
        Event { time, label: label.into(), set }
    }

    fn apply(&self, sw: &mut [f64]) {
        for &(slot, v) in &self.set {
            sw[slot] = v;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventSchedule {
    events: Vec<Event>,
}

impl EventSchedule {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        for w in events.windows(2) {
            if !(w[1].time > w[0].time) {
                return Err(Error::InvalidEvents(format!(
                    "event times must be strictly increasing ({} then {})",
                    w[0].time, w[1].time
                )));
            }
        }
        if events.iter().any(|e| !e.time.is_finite()) {
            return Err(Error::InvalidEvents("non-finite event time".into()));
        }
        Ok(EventSchedule { events })
    }

    pub fn empty() -> Self {
        EventSchedule::default()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Integration mesh. Event times are always mesh points.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidGrid("need at least two points".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("times must be finite and strictly increasing".into()));
        }
        Ok(TimeGrid { times })
    }

    /// Uniform mesh `t0 + i*dt`; the last step is shortened if `dt` does not
    /// divide the horizon. Event times are snapped onto nearby mesh points or
    /// inserted.
    pub fn uniform(t0: f64, t_end: f64, dt: f64, events: &EventSchedule) -> Result<Self> {
        if !(t_end > t0) || !(dt > 0.0) {
            return Err(Error::InvalidGrid(format!("t0 = {t0}, t_end = {t_end}, dt = {dt}")));
        }
        let steps = ((t_end - t0) / dt - 1e-9).ceil().max(1.0) as usize;
        let mut times: Vec<f64> = (0..steps).map(|i| t0 + i as f64 * dt).collect();
        times.push(t_end);
        for e in events.events() {
            if e.time < t0 || e.time > t_end {
                return Err(Error::InvalidEvents(format!(
                    "event `{}` at {} outside [{t0}, {t_end}]",
                    e.label, e.time
                )));
            }
            let snap = 1e-6 * dt;
            match times.iter().position(|&t| (t - e.time).abs() <= snap) {
                Some(i) => times[i] = e.time,
                None => {
                    let i = times.partition_point(|&t| t < e.time);
                    times.insert(i, e.time);
                }
            }
        }
        TimeGrid::from_times(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &ti) in self.times.iter().enumerate() {
            if (ti - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    /// Infinity-norm tolerance on the Newton residual.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Keep the step-matrix factorization across iterations and steps while
    /// Newton keeps contracting.
    pub reuse_jacobian: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { newton_tol: 1e-10, max_newton_iters: 20, reuse_jacobian: false }
    }
}

/// State of the system right before an event was applied at mesh row `row`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub row: usize,
    pub pre_state: Vec<f64>,
    pub pre_switches: Vec<f64>,
    pub post_switches: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub params: Vec<f64>,
    pub n_diff: usize,
    n_state: usize,
    states: Vec<f64>,
    /// Switch data in force after processing events at row 0.
    pub initial_switches: Vec<f64>,
    pub events: Vec<EventRecord>,
}

impl Trajectory {
    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, row: usize) -> &[f64] {
        &self.states[row * self.n_state..(row + 1) * self.n_state]
    }

    pub fn value(&self, row: usize, idx: usize) -> f64 {
        self.states[row * self.n_state + idx]
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        (0..self.len()).map(|r| self.value(r, idx)).collect()
    }

    /// Switch data used by the step that ends at `row` (the post-event data of
    /// the previous row).
    pub fn step_switches(&self, row: usize) -> &[f64] {
        let mut sw = &self.initial_switches;
        for ev in &self.events {
            if ev.row > 0 && ev.row < row {
                sw = &ev.post_switches;
            }
        }
        sw
    }

    pub fn event_at(&self, row: usize) -> Option<&EventRecord> {
        self.events.iter().find(|e| e.row == row)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Step matrix `[[dt*F_x - I, dt*F_y], [G_x, G_y]]` at `at`.
pub fn step_matrix(sys: &dyn DaeSystem, at: &Point, dt: f64) -> DMatrix<f64> {
    let nd = sys.dims().n_diff;
    let mut a = jacobian_of(sys, at);
    for i in 0..nd {
        a.row_mut(i).scale_mut(dt);
        a[(i, i)] -= 1.0;
    }
    a
}

/// Newton solver for individual backward-Euler steps, owning its workspace.
pub(crate) struct Stepper<'s> {
    sys: &'s dyn DaeSystem,
    cfg: &'s IntegratorConfig,
    n_diff: usize,
    res: Vec<f64>,
    lu: Option<(Factorization, f64)>,
}

impl<'s> Stepper<'s> {
    pub(crate) fn new(sys: &'s dyn DaeSystem, cfg: &'s IntegratorConfig) -> Self {
        let d = sys.dims();
        Stepper { sys, cfg, n_diff: d.n_diff, res: vec![0.0; d.n_state()], lu: None }
    }

    pub(crate) fn invalidate(&mut self) {
        self.lu = None;
    }

    /// Offers an already factored step matrix for reuse.
    pub(crate) fn adopt(&mut self, lu: Factorization, dt: f64) {
        if self.cfg.reuse_jacobian {
            self.lu = Some((lu, dt));
        }
    }

    fn step_residual(&mut self, z: &[f64], x_prev: &[f64], p: &[f64], t: f64, dt: f64, sw: &[f64]) -> f64 {
        self.sys.residual(&Point { z, p, t, sw }, &mut self.res);
        for i in 0..self.n_diff {
            self.res[i] = dt * self.res[i] - (z[i] - x_prev[i]);
        }
        inf_norm(&self.res)
    }

    /// Solves one step in place; `z` holds the initial guess on entry.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn step(
        &mut self,
        z: &mut [f64],
        x_prev: &[f64],
        p: &[f64],
        t: f64,
        dt: f64,
        sw: &[f64],
        step: usize,
    ) -> Result<()> {
        let mut prev_norm = f64::INFINITY;
        let mut fresh = false;
        for iter in 0..=self.cfg.max_newton_iters {
            let norm = self.step_residual(z, x_prev, p, t, dt, sw);
            if !norm.is_finite() {
                return Err(Error::NonConvergence { step, time: t });
            }
            if norm <= self.cfg.newton_tol {
                return Ok(());
            }
            if iter == self.cfg.max_newton_iters {
                break;
            }
            let stale = match &self.lu {
                None => true,
                // mesh differences of equal steps differ in the last bits
                Some((_, lu_dt)) => (lu_dt - dt).abs() > 1e-9 * dt,
            };
            let slow = norm > 0.25 * prev_norm;
            if !self.cfg.reuse_jacobian || stale || (slow && !fresh) {
                let a = step_matrix(self.sys, &Point { z, p, t, sw }, dt);
                let lu = Factorization::new(a).ok_or(Error::SingularJacobian { step, time: t })?;
                self.lu = Some((lu, dt));
                fresh = true;
            } else {
                fresh = false;
            }
            let (lu, _) = self.lu.as_ref().unwrap();
            lu.solve_slice(&mut self.res);
            for (zi, d) in z.iter_mut().zip(&self.res) {
                *zi -= d;
            }
            prev_norm = norm;
        }
        Err(Error::NonConvergence { step, time: t })
    }
}

/// Newton on `g(x, y, p, t) = 0` over `y` with `x` held fixed.
pub(crate) fn solve_algebraic(
    sys: &dyn DaeSystem,
    z: &mut [f64],
    p: &[f64],
    t: f64,
    sw: &[f64],
    cfg: &IntegratorConfig,
    step: usize,
) -> Result<()> {
    let d = sys.dims();
    let (nd, n) = (d.n_diff, d.n_state());
    if d.n_alg == 0 {
        return Ok(());
    }
    let mut res = vec![0.0; n];
    for iter in 0..=cfg.max_newton_iters {
        sys.residual(&Point { z, p, t, sw }, &mut res);
        let norm = inf_norm(&res[nd..]);
        if !norm.is_finite() {
            break;
        }
        if norm <= cfg.newton_tol {
            return Ok(());
        }
        if iter == cfg.max_newton_iters {
            break;
        }
        let j = jacobian_of(sys, &Point { z, p, t, sw });
        let gy = j.view((nd, nd), (d.n_alg, d.n_alg)).into_owned();
        let lu = Factorization::new(gy).ok_or(Error::SingularJacobian { step, time: t })?;
        let mut rhs = res[nd..].to_vec();
        lu.solve_slice(&mut rhs);
        for (zi, d) in z[nd..].iter_mut().zip(&rhs) {
            *zi -= d;
        }
    }
    Err(Error::NonConvergence { step, time: t })
}

/// Solves the algebraic equations for `y` given the differential part of
/// `z_guess`, which is returned unchanged.
pub fn find_consistent_initial(
    sys: &dyn DaeSystem,
    z_guess: &[f64],
    p: &[f64],
    t0: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    check_dims(sys, z_guess, p)?;
    let mut z = z_guess.to_vec();
    let sw = sys.initial_switches();
    solve_algebraic(sys, &mut z, p, t0, &sw, cfg, 0)?;
    Ok(z)
}

fn check_dims(sys: &dyn DaeSystem, z: &[f64], p: &[f64]) -> Result<()> {
    let d = sys.dims();
    if z.len() != d.n_state() || p.len() != d.n_param {
        return Err(Error::Dimension(format!(
            "expected {} states and {} parameters, got {} and {}",
            d.n_state(),
            d.n_param,
            z.len(),
            p.len()
        )));
    }
    Ok(())
}

/// Checks `||g(z0)||_inf <= newton_tol` under the initial switch data.
pub fn check_consistent(sys: &dyn DaeSystem, z0: &[f64], p: &[f64], t0: f64, tol: f64) -> Result<()> {
    let sw = sys.initial_switches();
    let g = sys.residual_g(&Point { z: z0, p, t: t0, sw: &sw });
    let r = inf_norm(&g);
    if r.is_finite() && r <= tol {
        Ok(())
    } else {
        Err(Error::InconsistentInitial { residual: r })
    }
}

/// Hook invoked by the time loop; lets sensitivity propagation ride along with
/// the state integration and share its factorizations.
pub(crate) trait StepObserver {
    fn on_start(&mut self, traj_row0: &[f64], sw: &[f64]) -> Result<()>;
    /// Called after the step ending at `row` converged, before events at `row`.
    fn on_step(&mut self, row: usize, z: &[f64], dt: f64, t: f64, sw: &[f64]) -> Result<Option<Factorization>>;
    /// Called after events at `row` were applied and the algebraic part re-solved.
    fn on_event(&mut self, row: usize, z: &[f64], t: f64, sw: &[f64]) -> Result<()>;
}

pub(crate) struct NoObserver;

impl StepObserver for NoObserver {
    fn on_start(&mut self, _: &[f64], _: &[f64]) -> Result<()> {
        Ok(())
    }
    fn on_step(&mut self, _: usize, _: &[f64], _: f64, _: f64, _: &[f64]) -> Result<Option<Factorization>> {
        Ok(None)
    }
    fn on_event(&mut self, _: usize, _: &[f64], _: f64, _: &[f64]) -> Result<()> {
        Ok(())
    }
}

/// Integrates from a consistent `z0` over `grid`, applying `events` at their
/// (mesh) times.
pub fn integrate(
    sys: &dyn DaeSystem,
    z0: &[f64],
    p: &[f64],
    grid: &TimeGrid,
    events: &EventSchedule,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate_observed(sys, z0, p, grid, events, cfg, &mut NoObserver)
}

/// Substeps used to move switch data across an event.
const EVENT_HOMOTOPY_STEPS: usize = 8;

pub(crate) fn integrate_observed(
    sys: &dyn DaeSystem,
    z0: &[f64],
    p: &[f64],
    grid: &TimeGrid,
    events: &EventSchedule,
    cfg: &IntegratorConfig,
    obs: &mut dyn StepObserver,
) -> Result<Trajectory> {
    check_dims(sys, z0, p)?;
    let d = sys.dims();
    let (n, nd) = (d.n_state(), d.n_diff);
    let times = grid.times();
    check_consistent(sys, z0, p, times[0], cfg.newton_tol)?;

    let mut event_rows = Vec::with_capacity(events.events().len());
    for e in events.events() {
        let row = times
            .iter()
            .position(|&t| t == e.time)
            .ok_or_else(|| Error::InvalidEvents(format!("event `{}` at {} is not a mesh point", e.label, e.time)))?;
        event_rows.push(row);
    }

    let mut sw = sys.initial_switches();
    let mut z = z0.to_vec();
    let mut records = Vec::new();
    let apply_events = |row: usize, z: &mut Vec<f64>, sw: &mut Vec<f64>, records: &mut Vec<EventRecord>| -> Result<bool> {
        let mut fired = false;
        let pre_state = z.clone();
        let pre_sw = sw.clone();
        for (e, &r) in events.events().iter().zip(&event_rows) {
            if r == row {
                e.apply(sw);
                fired = true;
            }
        }
        if fired {
            // follow the algebraic branch continuously from the pre-event
            // solution; a direct jump can land on a remote root
            let mut blend = pre_sw.clone();
            for k in 1..=EVENT_HOMOTOPY_STEPS {
                let s = k as f64 / EVENT_HOMOTOPY_STEPS as f64;
                for ((b, a), c) in blend.iter_mut().zip(&pre_sw).zip(sw.iter()) {
                    *b = a + s * (c - a);
                }
                if k == EVENT_HOMOTOPY_STEPS {
                    blend.copy_from_slice(sw);
                }
                solve_algebraic(sys, z, p, times[row], &blend, cfg, row)?;
            }
            records.push(EventRecord { row, pre_state, pre_switches: pre_sw, post_switches: sw.clone() });
        }
        Ok(fired)
    };

    if apply_events(0, &mut z, &mut sw, &mut records)? {
        obs.on_event(0, &z, times[0], &sw)?;
    }
    let initial_switches = sw.clone();
    obs.on_start(&z, &sw)?;

    let mut states = Vec::with_capacity(n * times.len());
    states.extend_from_slice(&z);
    let mut stepper = Stepper::new(sys, cfg);
    let mut x_prev = z[..nd].to_vec();
    for row in 1..times.len() {
        let t = times[row];
        let dt = t - times[row - 1];
        stepper.step(&mut z, &x_prev, p, t, dt, &sw, row)?;
        if let Some(lu) = obs.on_step(row, &z, dt, t, &sw)? {
            stepper.adopt(lu, dt);
        }
        if apply_events(row, &mut z, &mut sw, &mut records)? {
            stepper.invalidate();
            obs.on_event(row, &z, t, &sw)?;
        }
        states.extend_from_slice(&z);
        x_prev.copy_from_slice(&z[..nd]);
    }

    Ok(Trajectory {
        times: times.to_vec(),
        params: p.to_vec(),
        n_diff: nd,
        n_state: n,
        states,
        initial_switches,
        events: records,
    })
}
