//! Uniform periodic grids.

use crate::error::{config, Result};
use serde::{Deserialize, Serialize};

/// `n` nodes at `x_i = i * h` on a circle of circumference `period`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub period: f64,
}

impl Grid {
    pub fn new(n: usize, period: f64) -> Result<Self> {
        if n < 2 {
            return Err(config(format!("grid needs at least 2 nodes, got {n}")));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(config(format!("period must be positive, got {period}")));
        }
        Ok(Self { n, period })
    }

    /// Grid with spacing `h`; fails unless `h` divides the period.
    pub fn with_spacing(h: f64, period: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(config(format!("spacing must be positive, got {h}")));
        }
        let ratio = period / h;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(config(format!("spacing {h} does not divide period {period}")));
        }
        Self::new(n as usize, period)
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.period / self.n as f64
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Nearest node to `x` after periodic reduction.
    pub fn nearest(&self, x: f64) -> usize {
        let k = (x / self.h()).round() as i64;
        k.rem_euclid(self.n as i64) as usize
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.n == other.n && (self.period - other.period).abs() <= 1e-12 * self.period
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(config(format!(
                "grid mismatch: ({}, {}) vs ({}, {})",
                self.n, self.period, other.n, other.period
            )))
        }
    }
}

/// Wraps a signed index into `0..n`.
#[inline]
pub fn wrap(i: i64, n: usize) -> usize {
    i.rem_euclid(n as i64) as usize
}
