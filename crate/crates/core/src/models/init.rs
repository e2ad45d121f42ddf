//! Steady-state initialization of machines from a power-flow solution.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::components::{add_hessian, add_jacobian, add_residual, Local, MotorConstants, Space, Stamp};
use super::data::GeneratorData;
use crate::dae::{DaeSystem, Dims, HessTerm, Point};
use crate::error::{Error, Result};
use crate::jet::{Dual, Scalar};
use crate::linalg::Factorization;

/// Largest slip accepted as a physical motor operating point.
pub const SLIP_CAP: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorInit {
    pub delta: f64,
    pub id: f64,
    pub iq: f64,
    pub eqp: f64,
    pub edp: f64,
    pub efd: f64,
    pub pm: f64,
}

/// Machine states that reproduce terminal voltage `v` and injected power `s`
/// with all derivatives zero.
pub fn init_generator(g: &GeneratorData, v: Complex64, s: Complex64) -> GeneratorInit {
    let i = (s / v).conj();
    let e = v + Complex64::new(g.ra, g.xq) * i;
    let delta = e.arg();
    // machine frame: d + jq = x * e^{-j(delta - pi/2)}
    let rot = Complex64::from_polar(1.0, -(delta - std::f64::consts::FRAC_PI_2));
    let idq = i * rot;
    let vdq = v * rot;
    let (id, iq, vd, vq) = (idq.re, idq.im, vdq.re, vdq.im);
    let edp = vd + g.ra * id - g.xqp * iq;
    let eqp = vq + g.ra * iq + g.xdp * id;
    let efd = eqp + (g.xd - g.xdp) * id;
    let pm = edp * id + eqp * iq + (g.xqp - g.xdp) * id * iq;
    GeneratorInit { delta, id, iq, eqp, edp, efd, pm }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotorInit {
    pub edp: f64,
    pub eqp: f64,
    pub slip: f64,
    pub id: f64,
    pub iq: f64,
    pub tau: f64,
    pub ysh: f64,
}

impl MotorInit {
    /// `[e'd, e'q, s, id, iq, tau, ysh]`.
    pub fn to_array(&self) -> [f64; 7] {
        [self.edp, self.eqp, self.slip, self.id, self.iq, self.tau, self.ysh]
    }
}

/// Compensating shunt so that the motor plus shunt consume `q_available`.
pub fn shunt_admittance(v0: f64, theta0: f64, id: f64, iq: f64, q_available: f64) -> f64 {
    (v0 * theta0.cos() * id + v0 * theta0.sin() * iq - q_available) / (v0 * v0)
}

/// Motor operating point drawing `p_target` at `v0∠theta0`.
///
/// The load is ramped up from the no-load point so Newton tracks the
/// low-slip branch; the result is rejected when `|s| > SLIP_CAP`.
pub fn init_motor(v0: f64, theta0: f64, p_target: f64, q_available: f64, c: &MotorConstants) -> Result<MotorInit> {
    if !(v0 > 0.0 && v0.is_finite() && p_target.is_finite() && q_available.is_finite()) {
        return Err(Error::NoPhysicalSolution(format!("bad motor terminal data V0={v0}, P={p_target}")));
    }
    let (vc, vs) = (v0 * theta0.cos(), v0 * theta0.sin());
    let no_load = {
        // stator with s = 0: (ra, -x0; x0, ra) [id; iq] = [-vs; vc]
        let det = c.ra * c.ra + c.x0 * c.x0;
        let id = (-c.ra * vs + c.x0 * vc) / det;
        let iq = (c.ra * vc + c.x0 * vs) / det;
        [-(c.x0 - c.xp) * iq, (c.x0 - c.xp) * id, 0.0, id, iq, 0.0]
    };
    let mut w = no_load;
    const RAMP: usize = 8;
    for k in 1..=RAMP {
        let target = p_target * k as f64 / RAMP as f64;
        newton_motor(&mut w, vc, vs, target, c)?;
    }
    if w[2].abs() > SLIP_CAP {
        return Err(Error::NoPhysicalSolution(format!("slip {:.4} exceeds the cap {SLIP_CAP}", w[2])));
    }
    let ysh = shunt_admittance(v0, theta0, w[3], w[4], q_available);
    Ok(MotorInit { edp: w[0], eqp: w[1], slip: w[2], id: w[3], iq: w[4], tau: w[5], ysh })
}

fn newton_motor(w: &mut [f64; 6], vc: f64, vs: f64, p_target: f64, c: &MotorConstants) -> Result<()> {
    for _ in 0..40 {
        let wd: Vec<Dual<6>> = (0..6).map(|i| Dual::var(w[i], i)).collect();
        let r = c.steady_residual(&wd, vc, vs, Dual::cst(p_target));
        let norm = r.iter().fold(0.0f64, |m, x| m.max(x.v.abs()));
        if !norm.is_finite() {
            break;
        }
        if norm <= 1e-13 {
            return Ok(());
        }
        let jac = DMatrix::from_fn(6, 6, |i, j| r[i].g[j]);
        let lu = Factorization::new(jac)
            .ok_or_else(|| Error::NoPhysicalSolution("singular motor initialization Jacobian".into()))?;
        let mut rhs = DVector::from_fn(6, |i, _| -r[i].v);
        lu.solve_vec(&mut rhs);
        for i in 0..6 {
            w[i] += rhs[i];
        }
    }
    Err(Error::NoPhysicalSolution(format!("motor initialization did not converge for P = {p_target}")))
}

/// Motor steady-state equations with the drawn power tied to the load's
/// impedance fraction: `P = (1 - a) P0`, `Q = (1 - a) Q0`.
/// Variables `[e'd, e'q, s, id, iq, tau, ysh, (a)]`, seven rows.
#[derive(Clone, Debug)]
pub(crate) struct MotorSteady {
    pub c: MotorConstants,
    pub vc: f64,
    pub vs: f64,
    pub p0: f64,
    pub q0: f64,
    pub alpha: Option<f64>,
}

impl Local for MotorSteady {
    fn eval<S: Scalar>(&self, v: &[S], _sw: &[f64], out: &mut [S]) {
        let alpha = match self.alpha {
            Some(a) => S::cst(a),
            None => v[7],
        };
        let share = -alpha + 1.0;
        let r = self.c.steady_residual(&v[..6], self.vc, self.vs, share * self.p0);
        out[..6].copy_from_slice(&r);
        let (id, iq, ysh) = (v[3], v[4], v[6]);
        let vv = self.vc * self.vc + self.vs * self.vs;
        out[6] = ysh * vv - id * self.vc - iq * self.vs + share * self.q0;
    }
}

/// The motors' initialization equations as a purely algebraic system in the
/// load parameters, so initial sensitivities come from the implicit function
/// theorem. State: seven entries per motor in [`MotorInit::to_array`] order.
#[derive(Clone, Debug)]
pub struct MotorInitSystem {
    pub(crate) n_param: usize,
    pub(crate) parts: Vec<(MotorSteady, Stamp)>,
}

impl MotorInitSystem {
    pub fn n_motors(&self) -> usize {
        self.parts.len()
    }
}

impl DaeSystem for MotorInitSystem {
    fn dims(&self) -> Dims {
        Dims { n_diff: 0, n_alg: 7 * self.parts.len(), n_param: self.n_param }
    }

    fn residual(&self, at: &Point, out: &mut [f64]) {
        out.fill(0.0);
        for (m, s) in &self.parts {
            add_residual(m, s, at.z, at.p, at.sw, out);
        }
    }

    fn jacobian(&self, at: &Point, jz: &mut DMatrix<f64>) {
        let sp = Space { n_state: 7 * self.parts.len() };
        for (m, s) in &self.parts {
            add_jacobian::<8, _>(m, s, at.z, at.p, at.sw, sp, Some(jz), None);
        }
    }

    fn param_jacobian(&self, at: &Point, jp: &mut DMatrix<f64>) {
        let sp = Space { n_state: 7 * self.parts.len() };
        for (m, s) in &self.parts {
            add_jacobian::<8, _>(m, s, at.z, at.p, at.sw, sp, None, Some(jp));
        }
    }

    fn hessian(&self, at: &Point, out: &mut Vec<HessTerm>) {
        for (m, s) in &self.parts {
            add_hessian::<8, _>(m, s, at.z, at.p, at.sw, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn motor() -> MotorConstants {
        MotorConstants { ra: 0.0, x0: 3.0, xp: 0.15, tp: 0.1, h: 0.5, ws: 2.0 * std::f64::consts::PI * 60.0 }
    }

    #[test]
    fn no_load_motor_has_zero_slip_and_torque() {
        let m = init_motor(1.0, 0.0, 0.0, 0.0, &motor()).unwrap();
        assert!(m.slip.abs() < 1e-14);
        assert!(m.tau.abs() < 1e-14);
        assert!((m.id - 1.0 / 3.0).abs() < 1e-12);
        assert!(m.iq.abs() < 1e-14);
    }

    #[test]
    fn shunt_formula_evaluates_literally() {
        assert_eq!(shunt_admittance(1.0, 0.0, 0.1, 0.2, 0.1), 0.0);
        assert!((shunt_admittance(2.0, 0.0, 0.3, 0.0, 0.2) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn loaded_motor_draws_target_power() {
        let m = init_motor(0.98, -0.2, 0.4, 0.1, &motor()).unwrap();
        let (vc, vs) = (0.98 * (-0.2f64).cos(), 0.98 * (-0.2f64).sin());
        assert!((-vs * m.id + vc * m.iq - 0.4).abs() < 1e-10);
        assert!(m.slip > 0.0 && m.slip < SLIP_CAP);
        let qmot = vc * m.id + vs * m.iq;
        assert!((qmot - m.ysh * 0.98 * 0.98 - 0.1).abs() < 1e-10);
    }

    #[test]
    fn overloaded_motor_is_rejected() {
        let r = init_motor(1.0, 0.0, 50.0, 0.0, &motor());
        assert!(matches!(r, Err(Error::NoPhysicalSolution(_))));
    }

    #[test]
    fn round_rotor_init_is_stationary() {
        let g = GeneratorData {
            bus: 1,
            p_set: 0.8,
            h: 3.0,
            d: 0.0,
            xd: 1.8,
            xq: 1.7,
            xdp: 0.3,
            xqp: 0.55,
            td0p: 8.0,
            tq0p: 0.4,
            ra: 0.003,
        };
        let v = Complex64::from_polar(1.02, 0.1);
        let s = Complex64::new(0.8, 0.25);
        let x = init_generator(&g, v, s);
        assert!((-x.edp + (g.xq - g.xqp) * x.iq).abs() < 1e-12);
        // terminal power matches
        let rot = Complex64::from_polar(1.0, -(x.delta - std::f64::consts::FRAC_PI_2));
        let vdq = v * rot;
        let p = vdq.re * x.id + vdq.im * x.iq;
        assert!((p - 0.8).abs() < 1e-12);
        assert!((x.pm - p - g.ra * (x.id * x.id + x.iq * x.iq)).abs() < 1e-12);
    }
}
