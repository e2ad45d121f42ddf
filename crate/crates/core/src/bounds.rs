//! Axis-aligned parameter boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `{p : lower <= p <= upper}` with `lower <= upper` componentwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidBox(format!(
                "bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(Error::InvalidBox(format!("component {i}: [{l}, {u}]")));
            }
        }
        Ok(ParameterBox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    /// Largest side length.
    pub fn width(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).fold(0.0, f64::max)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && p.iter().zip(&self.lower).zip(&self.upper).all(|((x, l), u)| l <= x && x <= u)
    }

    pub fn project(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.lower).zip(&self.upper).map(|((x, l), u)| x.clamp(*l, *u)).collect()
    }

    /// Point at fractional position `s in [0,1]^d`.
    pub fn lerp(&self, s: &[f64]) -> Vec<f64> {
        s.iter().zip(&self.lower).zip(&self.upper).map(|((s, l), u)| l + s * (u - l)).collect()
    }

    /// Corner selected by the bits of `mask` (bit `i` set picks `upper[i]`).
    pub fn corner(&self, mask: u64) -> Vec<f64> {
        (0..self.dim())
            .map(|i| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] })
            .collect()
    }
}
