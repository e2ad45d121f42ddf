//! Bus admittance matrix and the steady-state power flow.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::data::{BranchData, BusKind};
use crate::error::{Error, Result};
use crate::linalg::Factorization;

/// Dense complex bus admittance matrix, split as `Y = G + jB`.
#[derive(Clone, Debug, PartialEq)]
pub struct Admittance {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Admittance {
    /// `index` maps a bus id to its row. Off-nominal taps sit on the `from` side.
    pub fn build(n_bus: usize, branches: &[BranchData], index: impl Fn(usize) -> usize) -> Self {
        let mut y = DMatrix::<Complex64>::zeros(n_bus, n_bus);
        for br in branches {
            let (f, t) = (index(br.from), index(br.to));
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            let half = Complex64::new(0.0, br.b / 2.0);
            let tap = if br.tap == 0.0 { 1.0 } else { br.tap };
            y[(f, f)] += (ys + half) / (tap * tap);
            y[(t, t)] += ys + half;
            y[(f, t)] -= ys / tap;
            y[(t, f)] -= ys / tap;
        }
        Admittance { g: y.map(|c| c.re), b: y.map(|c| c.im) }
    }

    pub fn n_bus(&self) -> usize {
        self.g.nrows()
    }

    /// Complex power injected at each bus for polar voltages.
    pub fn injections(&self, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_bus();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let (g, b) = (self.g[(i, j)], self.b[(i, j)]);
                if g == 0.0 && b == 0.0 {
                    continue;
                }
                let (s, c) = (theta[i] - theta[j]).sin_cos();
                p[i] += v[i] * v[j] * (g * c + b * s);
                q[i] += v[i] * v[j] * (g * s - b * c);
            }
        }
        (p, q)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerFlowSolution {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Net injections at the solution (generation minus load).
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub iterations: usize,
}

/// Polar Newton-Raphson power flow. `p_spec`/`q_spec` are net injections;
/// `v_set` fixes the magnitude at slack and pv buses and seeds pq buses.
pub fn solve_power_flow(
    y: &Admittance,
    kinds: &[BusKind],
    p_spec: &[f64],
    q_spec: &[f64],
    v_set: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution> {
    let n = y.n_bus();
    let ang: Vec<usize> = (0..n).filter(|&i| kinds[i] != BusKind::Slack).collect();
    let mag: Vec<usize> = (0..n).filter(|&i| kinds[i] == BusKind::Pq).collect();
    let m = ang.len() + mag.len();
    let mut v: Vec<f64> = v_set.to_vec();
    let mut theta = vec![0.0; n];
    let mut mismatch = f64::INFINITY;
    for it in 0..=max_iter {
        let (p, q) = y.injections(&v, &theta);
        let mut r = DVector::zeros(m);
        for (k, &i) in ang.iter().enumerate() {
            r[k] = p_spec[i] - p[i];
        }
        for (k, &i) in mag.iter().enumerate() {
            r[ang.len() + k] = q_spec[i] - q[i];
        }
        mismatch = r.amax();
        if !mismatch.is_finite() {
            break;
        }
        if mismatch <= tol {
            return Ok(PowerFlowSolution { v, theta, p, q, iterations: it });
        }
        if it == max_iter {
            break;
        }
        let mut jac = DMatrix::zeros(m, m);
        for (r_k, &i) in ang.iter().enumerate() {
            fill_row(y, &v, &theta, &p, &q, i, true, &ang, &mag, &mut jac, r_k);
        }
        for (r_k, &i) in mag.iter().enumerate() {
            fill_row(y, &v, &theta, &p, &q, i, false, &ang, &mag, &mut jac, ang.len() + r_k);
        }
        let lu = Factorization::new(jac).ok_or(Error::PowerFlow { iterations: it, mismatch })?;
        lu.solve_vec(&mut r);
        for (k, &i) in ang.iter().enumerate() {
            theta[i] += r[k];
        }
        for (k, &i) in mag.iter().enumerate() {
            v[i] += r[ang.len() + k];
        }
    }
    Err(Error::PowerFlow { iterations: max_iter, mismatch })
}

#[allow(clippy::too_many_arguments)]
fn fill_row(
    y: &Admittance,
    v: &[f64],
    theta: &[f64],
    p: &[f64],
    q: &[f64],
    i: usize,
    active: bool,
    ang: &[usize],
    mag: &[usize],
    jac: &mut DMatrix<f64>,
    row: usize,
) {
    let (gii, bii) = (y.g[(i, i)], y.b[(i, i)]);
    let d_theta = |j: usize| -> f64 {
        if j == i {
            if active {
                -q[i] - bii * v[i] * v[i]
            } else {
                p[i] - gii * v[i] * v[i]
            }
        } else {
            let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            if active {
                v[i] * v[j] * (g * s - b * c)
            } else {
                -v[i] * v[j] * (g * c + b * s)
            }
        }
    };
    let d_v = |j: usize| -> f64 {
        if j == i {
            if active {
                p[i] / v[i] + gii * v[i]
            } else {
                q[i] / v[i] - bii * v[i]
            }
        } else {
            let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            if active {
                v[i] * (g * c + b * s)
            } else {
                v[i] * (g * s - b * c)
            }
        }
    };
    for (k, &j) in ang.iter().enumerate() {
        jac[(row, k)] = d_theta(j);
    }
    for (k, &j) in mag.iter().enumerate() {
        jac[(row, ang.len() + k)] = d_v(j);
    }
}
