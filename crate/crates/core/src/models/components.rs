//! Component equations, written once over [`Scalar`].
//!
//! Every component reads a handful of global variables (states and possibly
//! parameters) and adds into a handful of residual rows. The system assembler
//! evaluates the same code with `f64`, [`Dual`] and [`Jet`] to get residuals,
//! Jacobians and Hessians.

use crate::dae::HessTerm;
use crate::jet::{Dual, Jet, Scalar};

/// Local equations of one component.
pub(crate) trait Local {
    /// `v` holds the component's variables in stamp order; `out` receives one
    /// value per stamp row and is zero on entry.
    fn eval<S: Scalar>(&self, v: &[S], sw: &[f64], out: &mut [S]);
}

/// Global indices a component reads (`vars`, in `[z; p]` space) and writes (`rows`).
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Stamp {
    pub vars: Vec<usize>,
    pub rows: Vec<usize>,
}

/// Split of the `[z; p]` space: indices below `n_state` are states.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Space {
    pub n_state: usize,
}

#[inline]
fn var_value(i: usize, z: &[f64], p: &[f64]) -> f64 {
    if i < z.len() {
        z[i]
    } else {
        p[i - z.len()]
    }
}

pub(crate) fn add_residual<L: Local>(l: &L, st: &Stamp, z: &[f64], p: &[f64], sw: &[f64], out: &mut [f64]) {
    let mut v = [0.0f64; 16];
    for (k, &i) in st.vars.iter().enumerate() {
        v[k] = var_value(i, z, p);
    }
    let mut o = [0.0f64; 16];
    l.eval(&v[..st.vars.len()], sw, &mut o[..st.rows.len()]);
    for (k, &r) in st.rows.iter().enumerate() {
        out[r] += o[k];
    }
}

/// Adds the component's state Jacobian (`jz`) and parameter Jacobian (`jp`)
/// contributions. `N` must be at least the number of stamp variables.
pub(crate) fn add_jacobian<const N: usize, L: Local>(
    l: &L,
    st: &Stamp,
    z: &[f64],
    p: &[f64],
    sw: &[f64],
    sp: Space,
    mut jz: Option<&mut nalgebra::DMatrix<f64>>,
    mut jp: Option<&mut nalgebra::DMatrix<f64>>,
) {
    debug_assert!(st.vars.len() <= N);
    let v: Vec<Dual<N>> = st.vars.iter().enumerate().map(|(k, &i)| Dual::var(var_value(i, z, p), k)).collect();
    let mut o = vec![Dual::<N>::cst(0.0); st.rows.len()];
    l.eval(&v, sw, &mut o);
    for (k, &r) in st.rows.iter().enumerate() {
        for (j, &c) in st.vars.iter().enumerate() {
            let g = o[k].g[j];
            if g == 0.0 {
                continue;
            }
            if c < sp.n_state {
                if let Some(m) = jz.as_deref_mut() {
                    m[(r, c)] += g;
                }
            } else if let Some(m) = jp.as_deref_mut() {
                m[(r, c - sp.n_state)] += g;
            }
        }
    }
}

pub(crate) fn add_hessian<const N: usize, L: Local>(
    l: &L,
    st: &Stamp,
    z: &[f64],
    p: &[f64],
    sw: &[f64],
    out: &mut Vec<HessTerm>,
) {
    debug_assert!(st.vars.len() <= N);
    let v: Vec<Jet<N>> = st.vars.iter().enumerate().map(|(k, &i)| Jet::var(var_value(i, z, p), k)).collect();
    let mut o = vec![Jet::<N>::cst(0.0); st.rows.len()];
    l.eval(&v, sw, &mut o);
    let m = st.vars.len();
    for (k, &r) in st.rows.iter().enumerate() {
        for i in 0..m {
            for j in i..m {
                let val = o[k].h[i][j];
                if val != 0.0 {
                    let (a, b) = (st.vars[i], st.vars[j]);
                    out.push(HessTerm { row: r, a: a.min(b), b: a.max(b), val });
                }
            }
        }
    }
}

/// Synchronous machine: two-axis (4th order) round-rotor model with optional
/// exciter and governor.
///
/// ```text
/// delta' = wb*w
/// w'     = (Pm - Pe - D*w) / (2H),   Pe = e'd*id + e'q*iq + (x'q - x'd)*id*iq
/// e'q'   = (Efd - e'q - (xd - x'd)*id) / T'd0
/// e'd'   = (-e'd + (xq - x'q)*iq) / T'q0
/// 0      = e'd - vd - ra*id + x'q*iq
/// 0      = e'q - vq - ra*iq - x'd*id
/// vd = e*sin(delta) - f*cos(delta),  vq = e*cos(delta) + f*sin(delta)
/// ```
///
/// Variables: `[delta, w, e'q, e'd, id, iq, e, f, (Efd), (Pm)]`.
/// Rows: `[f_delta, f_w, f_e'q, f_e'd, g_d, g_q, P_bus, Q_bus, (f_Efd), (f_Pm)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub h: f64,
    pub d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xdp: f64,
    pub xqp: f64,
    pub td0p: f64,
    pub tq0p: f64,
    pub ra: f64,
    pub omega_b: f64,
    /// Field voltage used when there is no exciter.
    pub efd0: f64,
    /// Mechanical power used when there is no governor.
    pub pm0: f64,
    pub exciter: Option<Exciter>,
    pub governor: Option<Governor>,
}

/// First-order exciter with quadratic saturation:
/// `T_A Efd' = K_A (Vref - |V|) - Efd - Se(Efd)`, where
/// `Se(E) = c1 (E - c2)^2` above `c2` and zero below.
#[derive(Clone, Debug, PartialEq)]
pub struct Exciter {
    pub ka: f64,
    pub ta: f64,
    pub c1: f64,
    pub c2: f64,
    pub vref: f64,
}

impl Exciter {
    /// `S(E) * E`; continuous (with its first derivative) at the threshold.
    pub fn saturation<S: Scalar>(&self, efd: S) -> S {
        if efd.value() > self.c2 {
            (efd - self.c2).sq() * self.c1
        } else {
            S::cst(0.0)
        }
    }
}

/// Droop governor: `T_g Pm' = Pref - w/R - Pm`.
#[derive(Clone, Debug, PartialEq)]
pub struct Governor {
    pub r: f64,
    pub tg: f64,
    pub pref: f64,
}

impl Generator {
    pub fn n_vars(&self) -> usize {
        8 + self.exciter.is_some() as usize + self.governor.is_some() as usize
    }

    pub fn electrical_power<S: Scalar>(&self, edp: S, eqp: S, id: S, iq: S) -> S {
        edp * id + eqp * iq + id * iq * (self.xqp - self.xdp)
    }
}

impl Local for Generator {
    fn eval<S: Scalar>(&self, v: &[S], _sw: &[f64], out: &mut [S]) {
        let (delta, w, eqp, edp, id, iq, e, f) = (v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]);
        let mut k = 8;
        let efd = match self.exciter {
            Some(_) => {
                k += 1;
                v[k - 1]
            }
            None => S::cst(self.efd0),
        };
        let pm = match self.governor {
            Some(_) => v[k],
            None => S::cst(self.pm0),
        };
        let (sd, cd) = (delta.sin(), delta.cos());
        let vd = e * sd - f * cd;
        let vq = e * cd + f * sd;
        let pe = self.electrical_power(edp, eqp, id, iq);
        out[0] = w * self.omega_b;
        out[1] = (pm - pe - w * self.d) * (0.5 / self.h);
        out[2] = (efd - eqp - id * (self.xd - self.xdp)) * (1.0 / self.td0p);
        out[3] = (iq * (self.xq - self.xqp) - edp) * (1.0 / self.tq0p);
        out[4] = edp - vd - id * self.ra + iq * self.xqp;
        out[5] = eqp - vq - iq * self.ra - id * self.xdp;
        out[6] = vd * id + vq * iq;
        out[7] = vq * id - vd * iq;
        let mut r = 8;
        if let Some(x) = &self.exciter {
            let vt = (e.sq() + f.sq()).sqrt();
            out[r] = ((-vt + x.vref) * x.ka - efd - x.saturation(efd)) * (1.0 / x.ta);
            r += 1;
        }
        if let Some(g) = &self.governor {
            out[r] = (-w * (1.0 / g.r) - pm + g.pref) * (1.0 / g.tg);
        }
    }
}

/// Impedance + constant-power load at one bus:
/// `P = a*P0*(V/V0)^2 + (1 - a)*P0` (same form for `Q`). When a motor carries
/// the `(1 - a)` share, `constant_power` is false and only the impedance part
/// remains here.
///
/// Variables: `[e, f, (a)]`. Rows: `[P_bus, Q_bus]` (injections, so negated).
#[derive(Clone, Debug, PartialEq)]
pub struct ZipLoad {
    pub p0: f64,
    pub q0: f64,
    pub v0: f64,
    /// Impedance fraction used when it is not a parameter.
    pub alpha: Option<f64>,
    pub constant_power: bool,
}

impl ZipLoad {
    pub fn powers<S: Scalar>(&self, e: S, f: S, alpha: S) -> (S, S) {
        let vv = (e.sq() + f.sq()) * (1.0 / (self.v0 * self.v0));
        let mut p = alpha * vv * self.p0;
        let mut q = alpha * vv * self.q0;
        if self.constant_power {
            p = p + (-alpha + 1.0) * self.p0;
            q = q + (-alpha + 1.0) * self.q0;
        }
        (p, q)
    }
}

impl Local for ZipLoad {
    fn eval<S: Scalar>(&self, v: &[S], _sw: &[f64], out: &mut [S]) {
        let alpha = match self.alpha {
            Some(a) => S::cst(a),
            None => v[2],
        };
        let (p, q) = self.powers(v[0], v[1], alpha);
        out[0] = -p;
        out[1] = -q;
    }
}

/// Third-order induction motor with constant load torque and a compensating
/// shunt, both held as zero-derivative states.
///
/// ```text
/// e'd' = -(e'd + (x0 - x')*iq)/T' + s*ws*e'q
/// e'q' = -(e'q - (x0 - x')*id)/T' - s*ws*e'd
/// s'   = (tau - e'd*id - e'q*iq) / (2H)
/// tau' = 0,  ysh' = 0
/// 0    = ra*id - x'*iq + e'd + V sin(th)
/// 0    = ra*iq + x'*id + e'q - V cos(th)
/// Pmot = -V sin(th)*id + V cos(th)*iq,  Qmot = V cos(th)*id + V sin(th)*iq
/// ```
///
/// With rectangular bus voltage `V cos(th) = e`, `V sin(th) = f`.
/// Variables: `[e'd, e'q, s, tau, ysh, id, iq, e, f]`.
/// Rows: `[f_e'd, f_e'q, f_s, f_tau, f_ysh, g_d, g_q, P_bus, Q_bus]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Motor {
    pub c: MotorConstants,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MotorConstants {
    pub ra: f64,
    pub x0: f64,
    pub xp: f64,
    pub tp: f64,
    pub h: f64,
    pub ws: f64,
}

impl MotorConstants {
    /// Residuals of the motor's five equations at steady state plus the
    /// active-power target; `w = [e'd, e'q, s, id, iq, tau]`.
    pub fn steady_residual<S: Scalar>(&self, w: &[S], vc: f64, vs: f64, p_target: S) -> [S; 6] {
        let (edp, eqp, s, id, iq, tau) = (w[0], w[1], w[2], w[3], w[4], w[5]);
        let c = self;
        [
            -(edp + iq * (c.x0 - c.xp)) * (1.0 / c.tp) + s * eqp * c.ws,
            -(eqp - id * (c.x0 - c.xp)) * (1.0 / c.tp) - s * edp * c.ws,
            tau - edp * id - eqp * iq,
            id * c.ra - iq * c.xp + edp + vs,
            iq * c.ra + id * c.xp + eqp - vc,
            id * (-vs) + iq * vc - p_target,
        ]
    }
}

impl Local for Motor {
    fn eval<S: Scalar>(&self, v: &[S], _sw: &[f64], out: &mut [S]) {
        let c = &self.c;
        let (edp, eqp, s, tau, ysh, id, iq, e, f) = (v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        out[0] = -(edp + iq * (c.x0 - c.xp)) * (1.0 / c.tp) + s * eqp * c.ws;
        out[1] = -(eqp - id * (c.x0 - c.xp)) * (1.0 / c.tp) - s * edp * c.ws;
        out[2] = (tau - edp * id - eqp * iq) * (0.5 / c.h);
        out[3] = S::cst(0.0);
        out[4] = S::cst(0.0);
        out[5] = id * c.ra - iq * c.xp + edp + f;
        out[6] = iq * c.ra + id * c.xp + eqp - e;
        let pmot = -f * id + e * iq;
        let qmot = e * id + f * iq;
        out[7] = -pmot;
        out[8] = -qmot + ysh * (e.sq() + f.sq());
    }
}

/// Switchable shunt admittance `g + jb` read from two switch slots.
/// Variables `[e, f]`, rows `[P_bus, Q_bus]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultShunt {
    pub g_slot: usize,
    pub b_slot: usize,
}

impl Local for FaultShunt {
    fn eval<S: Scalar>(&self, v: &[S], sw: &[f64], out: &mut [S]) {
        let vv = v[0].sq() + v[1].sq();
        out[0] = -(vv * sw[self.g_slot]);
        out[1] = vv * sw[self.b_slot];
    }
}

/// One bus-admittance entry `Y_kj = G + jB` contributing the bilinear network
/// flow `-(V_k conj(Y_kj V_j))` to bus `k`'s power balance.
/// Variables `[e_k, f_k, e_j, f_j]` (or `[e_k, f_k]` on the diagonal),
/// rows `[P_k, Q_k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmittanceEntry {
    pub g: f64,
    pub b: f64,
    pub diagonal: bool,
}

impl Local for AdmittanceEntry {
    fn eval<S: Scalar>(&self, v: &[S], _sw: &[f64], out: &mut [S]) {
        let (ek, fk) = (v[0], v[1]);
        let (ej, fj) = if self.diagonal { (ek, fk) } else { (v[2], v[3]) };
        // I_kj = Y_kj V_j; S = V_k conj(I_kj)
        let ir = ej * self.g - fj * self.b;
        let ii = fj * self.g + ej * self.b;
        out[0] = -(ek * ir + fk * ii);
        out[1] = -(fk * ir - ek * ii);
    }
}

/// `0 = vm - sqrt(e^2 + f^2)`: voltage magnitude as an algebraic state.
/// Variables `[vm, e, f]`, rows `[vm_row]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoltageMagnitude;

impl Local for VoltageMagnitude {
    fn eval<S: Scalar>(&self, v: &[S], _sw: &[f64], out: &mut [S]) {
        out[0] = v[0] - (v[1].sq() + v[2].sq()).sqrt();
    }
}
