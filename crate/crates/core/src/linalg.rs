//! Dense LU factorization shared by Newton and sensitivity solves.

use nalgebra::{DMatrix, DVector, Dyn, LU};

/// Pivots smaller than this (relative to the largest pivot) mark the matrix singular.
const PIVOT_RTOL: f64 = 1e-14;

pub struct Factorization {
    lu: LU<f64, Dyn, Dyn>,
}

impl Factorization {
    /// Returns `None` when the matrix is numerically singular.
    pub fn new(m: DMatrix<f64>) -> Option<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return None;
        }
        let lu = m.lu();
        let u = lu.u();
        let mut max = 0.0f64;
        let mut min = f64::INFINITY;
        for i in 0..u.nrows().min(u.ncols()) {
            let d = u[(i, i)].abs();
            max = max.max(d);
            min = min.min(d);
        }
        if u.nrows() > 0 && (min <= PIVOT_RTOL * max || max == 0.0) {
            return None;
        }
        Some(Factorization { lu })
    }

    pub fn dim(&self) -> usize {
        self.lu.l().nrows()
    }

    pub fn solve_vec(&self, b: &mut DVector<f64>) {
        self.lu.solve_mut(b);
    }

    pub fn solve_slice(&self, b: &mut [f64]) {
        let mut v = DVector::from_column_slice(b);
        self.lu.solve_mut(&mut v);
        b.copy_from_slice(v.as_slice());
    }

    /// Solves for all columns of `b` at once.
    pub fn solve_mat(&self, b: &mut DMatrix<f64>) {
        self.lu.solve_mut(b);
    }
}
