//! Assembled power system as a [`DaeSystem`].

use nalgebra::DMatrix;

use super::components::{
    add_hessian, add_jacobian, add_residual, AdmittanceEntry, FaultShunt, Generator, Local, Motor, Space, Stamp,
    VoltageMagnitude, ZipLoad,
};
use crate::dae::{DaeSystem, Dims, HessTerm, Point};

/// Power system DAE in rectangular network coordinates.
///
/// State layout: differential states of every generator (`delta, w, e'q, e'd`
/// then `Efd` and `Pm` when controlled) followed by every motor
/// (`e'd, e'q, s, tau, ysh`); then algebraic states: `e, f` per bus,
/// `id, iq` per generator, `id, iq` per motor, and one voltage magnitude per
/// monitored bus. Parameters are the uncertain load impedance fractions.
/// Switch slots hold `g, b` of each fault shunt.
#[derive(Clone, Debug)]
pub struct PowerSystem {
    pub(crate) dims: Dims,
    pub(crate) n_switch: usize,
    pub(crate) gens: Vec<(Generator, Stamp)>,
    pub(crate) loads: Vec<(ZipLoad, Stamp)>,
    pub(crate) motors: Vec<(Motor, Stamp)>,
    pub(crate) faults: Vec<(FaultShunt, Stamp)>,
    pub(crate) network: Vec<(AdmittanceEntry, Stamp)>,
    pub(crate) vmags: Vec<(VoltageMagnitude, Stamp)>,
}

/// Visits every component with the largest local-variable count it needs.
macro_rules! each_component {
    ($self:ident, $f:ident, $($arg:expr),*) => {{
        for (c, s) in &$self.gens { $f::<10, _>(c, s, $($arg),*); }
        for (c, s) in &$self.motors { $f::<9, _>(c, s, $($arg),*); }
        for (c, s) in &$self.loads { $f::<3, _>(c, s, $($arg),*); }
        for (c, s) in &$self.faults { $f::<2, _>(c, s, $($arg),*); }
        for (c, s) in &$self.network { $f::<4, _>(c, s, $($arg),*); }
        for (c, s) in &$self.vmags { $f::<3, _>(c, s, $($arg),*); }
    }};
}

fn residual_n<const N: usize, L: Local>(l: &L, st: &Stamp, at: &Point, out: &mut [f64]) {
    add_residual(l, st, at.z, at.p, at.sw, out);
}

fn jacobian_n<const N: usize, L: Local>(l: &L, st: &Stamp, at: &Point, sp: Space, jz: &mut DMatrix<f64>) {
    add_jacobian::<N, L>(l, st, at.z, at.p, at.sw, sp, Some(jz), None);
}

fn param_jacobian_n<const N: usize, L: Local>(l: &L, st: &Stamp, at: &Point, sp: Space, jp: &mut DMatrix<f64>) {
    if st.vars.iter().any(|&v| v >= sp.n_state) {
        add_jacobian::<N, L>(l, st, at.z, at.p, at.sw, sp, None, Some(jp));
    }
}

fn hessian_n<const N: usize, L: Local>(l: &L, st: &Stamp, at: &Point, out: &mut Vec<HessTerm>) {
    add_hessian::<N, L>(l, st, at.z, at.p, at.sw, out);
}

impl DaeSystem for PowerSystem {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn initial_switches(&self) -> Vec<f64> {
        vec![0.0; self.n_switch]
    }

    fn residual(&self, at: &Point, out: &mut [f64]) {
        out.fill(0.0);
        each_component!(self, residual_n, at, out);
    }

    fn jacobian(&self, at: &Point, jz: &mut DMatrix<f64>) {
        let sp = Space { n_state: self.dims.n_state() };
        each_component!(self, jacobian_n, at, sp, jz);
    }

    fn param_jacobian(&self, at: &Point, jp: &mut DMatrix<f64>) {
        let sp = Space { n_state: self.dims.n_state() };
        each_component!(self, param_jacobian_n, at, sp, jp);
    }

    fn hessian(&self, at: &Point, out: &mut Vec<HessTerm>) {
        each_component!(self, hessian_n, at, out);
    }
}
