use alloc::format;

use crate::error::{Error, Result};
use crate::math;

/// PR weights `w_i = (c + i)^{-γ}`.
///
/// Requiring `γ ∈ (1/2, 1]` gives `Σ w_i = ∞` and `Σ w_i² < ∞`; `c > 0`
/// keeps every weight inside `(0, 1)`. The KL rate bound additionally needs
/// `γ > 2/3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSchedule {
    c: f64,
    gamma: f64,
}

impl WeightSchedule {
    pub const DEFAULT_C: f64 = 1.0;
    pub const DEFAULT_GAMMA: f64 = 0.67;

    pub fn new(c: f64, gamma: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Schedule(format!("c must be positive, got {c}")));
        }
        if !(gamma > 0.5 && gamma <= 1.0) {
            return Err(Error::Schedule(format!("gamma must lie in (1/2, 1], got {gamma}")));
        }
        Ok(WeightSchedule { c, gamma })
    }

    /// `w_i = (α + i)^{-1}`: with `n = 1` this reproduces the Dirichlet-process
    /// posterior mean under precision `α`.
    pub fn dirichlet(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Weight for the `i`-th observation, `i ≥ 1`.
    pub fn weight(&self, i: usize) -> f64 {
        assert!(i >= 1, "PR weights are indexed from 1");
        math::powf(self.c + i as f64, -self.gamma)
    }
}

impl Default for WeightSchedule {
    fn default() -> Self {
        WeightSchedule {
            c: Self::DEFAULT_C,
            gamma: Self::DEFAULT_GAMMA,
        }
    }
}
