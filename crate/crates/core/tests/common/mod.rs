//! Finite-difference and sampling oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DVector;
use trajex::models::Scenario;
use trajex::sensitivity::{Order, Tracking};

/// Worst per-time relative errors `(first, second)` of the integrated
/// sensitivities at `p` against finite differences of plain simulations.
///
/// First order: central differences with step `1e-6 (1 + |p|)`.
/// Second order: Richardson-extrapolated second differences with steps
/// `h` and `h / 2`; the plain second difference at `h` alone is dominated by
/// its `O(h^2)` truncation.
///
/// Each column is compared as a vector over all states; the denominator is
/// floored at `1e-6` of the column's largest norm over time so rows where the
/// sensitivity vanishes (before any event) do not divide by zero.
pub fn sensitivity_errors(s: &Scenario, p: &[f64], h2: f64) -> (f64, f64) {
    let mut tight = s.clone();
    tight.integrator.newton_tol = 1e-12;
    tight.integrator.reuse_jacobian = false;
    let (traj, ser) = s.simulate_with_sensitivities(p, &Tracking::All, Order::Second).unwrap();
    let n = s.n_state();
    let rows = traj.len();
    let shifted = |a: usize, d: f64| {
        let mut q = p.to_vec();
        q[a] += d;
        tight.simulate(&q).unwrap()
    };
    let shifted2 = |a: usize, da: f64, b: usize, db: f64| {
        let mut q = p.to_vec();
        q[a] += da;
        q[b] += db;
        tight.simulate(&q).unwrap()
    };
    let column = |t: &trajex::dae::Trajectory, r: usize| DVector::from_column_slice(t.state(r));
    let rel = |err: Vec<f64>, scale: Vec<f64>| {
        let top = scale.iter().cloned().fold(0.0, f64::max);
        err.iter().zip(&scale).map(|(e, s)| e / s.max(1e-6 * top).max(1e-300)).fold(0.0, f64::max)
    };

    let mut first = 0.0f64;
    for a in 0..p.len() {
        let h = 1e-6 * (1.0 + p[a].abs());
        let (tp, tm) = (shifted(a, h), shifted(a, -h));
        let (mut err, mut scale) = (Vec::with_capacity(rows), Vec::with_capacity(rows));
        for r in 0..rows {
            let fd = (column(&tp, r) - column(&tm, r)) / (2.0 * h);
            let u = DVector::from_fn(n, |i, _| ser.states[r].u[(i, a)]);
            err.push((&u - &fd).norm());
            scale.push(fd.norm());
        }
        first = first.max(rel(err, scale));
    }

    let mut second = 0.0f64;
    let centre = tight.simulate(p).unwrap();
    let base = |r: usize| column(&centre, r);
    for a in 0..p.len() {
        for b in a..p.len() {
            // second difference at step k, Richardson over k = h2, h2 / 2
            let diff = |k: f64| -> Vec<DVector<f64>> {
                if a == b {
                    let (tp, tm) = (shifted(a, k), shifted(a, -k));
                    (0..rows).map(|r| (column(&tp, r) - base(r) * 2.0 + column(&tm, r)) / (k * k)).collect()
                } else {
                    let pp = shifted2(a, k, b, k);
                    let pm = shifted2(a, k, b, -k);
                    let mp = shifted2(a, -k, b, k);
                    let mm = shifted2(a, -k, b, -k);
                    (0..rows)
                        .map(|r| (column(&pp, r) - column(&pm, r) - column(&mp, r) + column(&mm, r)) / (4.0 * k * k))
                        .collect()
                }
            };
            let (coarse, fine) = (diff(h2), diff(h2 / 2.0));
            let (mut err, mut scale) = (Vec::with_capacity(rows), Vec::with_capacity(rows));
            for r in 0..rows {
                let fd = (&fine[r] * 4.0 - &coarse[r]) / 3.0;
                let v = DVector::from_fn(n, |i, _| ser.states[r].v[i][(a, b)]);
                err.push((&v - &fd).norm());
                scale.push(fd.norm());
            }
            second = second.max(rel(err, scale));
        }
    }
    (first, second)
}

/// Case C with only the loads at `keep` uncertain (the others fixed at the
/// box midpoint) on a shorter horizon.
pub fn reduced_case_c(keep: &[usize], t_end: f64) -> Scenario {
    use trajex::models::data::LoadModel;
    let mut d = trajex::models::build_case_c().unwrap().data;
    for b in d.buses.iter_mut() {
        if b.load == LoadModel::Parameter && !keep.contains(&b.id) {
            b.load = LoadModel::Fixed(0.5);
        }
    }
    d.parameters.retain(|r| keep.contains(&r.bus));
    d.simulation.t_end = t_end;
    Scenario::from_data(d).unwrap()
}
