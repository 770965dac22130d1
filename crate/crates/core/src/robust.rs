//! Linear regression with scale-mixture-of-normals errors, fitted by an
//! alternating PR / EM scheme.
//!
//! The error density is `f(ε) = ∫ N(ε | 0, u²) p(u) du`. Each outer iteration
//! (a) refits `p` by PR on the current residuals, starting from the flat
//! initial guess, and (b) solves a weighted least-squares problem with
//! weights `E[u⁻² | ε_i]`. Steps are accepted only when they do not lower the
//! PR marginal likelihood of the residuals; a rejected step is halved up to
//! ten times before the scheme declares itself stalled.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{MixingDensity, MixingGrid, QuadratureRule};
use crate::kernel::{Kernel, Observation};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::pr::{self, PrFit};
use crate::schedule::WeightSchedule;

pub use crate::linalg::Matrix as DesignMatrix;

/// Floor applied to E-step weights whose posterior underflows.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Slack allowed when comparing PR marginal likelihoods of successive steps.
const ACCEPT_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionOptions {
    /// Scale grid `[lo, hi]` with `m` log-spaced nodes.
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub scale_nodes: usize,
    /// Interpret `[scale_lo, scale_hi]` in units of the initial robust
    /// residual scale (1.4826 × MAD of the OLS residuals).
    pub relative_scale: bool,
    /// Stop once `‖β_new − β_old‖_∞` drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        RegressionOptions {
            scale_lo: 0.1,
            scale_hi: 10.0,
            scale_nodes: 200,
            relative_scale: true,
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    /// No halving of the EM step raised the PR marginal likelihood.
    Stalled,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub beta: Vec<f64>,
    /// PR marginal log-likelihood of the residuals at `beta`.
    pub objective: f64,
    pub step_halvings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub beta: Vec<f64>,
    pub beta_ols: Vec<f64>,
    /// Mixing density over error scales `u`, in response units.
    pub scale_density: MixingDensity,
    /// Final E-step weights `E[u⁻² | ε_i]`.
    pub weights: Vec<f64>,
    pub residual_scale: f64,
    /// Starts with the OLS fit, then one entry per accepted iteration.
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    pub stop: StopReason,
}

impl RegressionFit {
    pub fn residuals(&self, x: &Matrix, y: &[f64]) -> Vec<f64> {
        residuals(x, y, &self.beta)
    }
}

pub fn residuals(x: &Matrix, y: &[f64], beta: &[f64]) -> Vec<f64> {
    x.mul_vec(beta).iter().zip(y).map(|(f, yi)| yi - f).collect()
}

pub fn ols(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    linalg::weighted_least_squares(x, y, &alloc::vec![1.0; y.len()])
}

/// `E[u⁻² | ε_i]` under `N(ε | 0, u²)` and mixing density `p`.
pub fn posterior_scale_weights(residuals: &[f64], scale_density: &MixingDensity) -> Result<Vec<f64>> {
    let grid = scale_density.grid();
    Kernel::GaussScale.check_grid(grid)?;
    let nodes = grid.nodes();
    let inv_sq: Vec<f64> = nodes.iter().map(|u| 1.0 / (u * u)).collect();
    let masses = scale_density.masses();
    let mut row = alloc::vec![0.0; grid.len()];
    residuals
        .iter()
        .map(|&e| {
            Kernel::GaussScale.fill_scaled_row(&Observation::new(e), nodes, &mut row)?;
            let mut num = 0.0;
            let mut den = 0.0;
            for ((k, m), s) in row.iter().zip(&masses).zip(&inv_sq) {
                den += k * m;
                num += k * m * s;
            }
            let w = num / den;
            Ok(if w.is_finite() && w > WEIGHT_FLOOR {
                w
            } else {
                WEIGHT_FLOOR
            })
        })
        .collect()
}

fn robust_scale(res: &[f64]) -> f64 {
    let mut abs: Vec<f64> = res.iter().map(|r| r.abs()).collect();
    1.4826 * math::median(&mut abs)
}

struct ScaleFitter {
    p0: MixingDensity,
    schedule: WeightSchedule,
}

impl ScaleFitter {
    fn fit(&self, res: &[f64]) -> Result<PrFit> {
        let data: Vec<Observation> = res.iter().map(|&e| Observation::new(e)).collect();
        pr::pr_fit(&data, &Kernel::GaussScale, &self.p0, &self.schedule)
    }
}

/// Fit `y = Xβ + ε` with a nonparametric scale mixture of normals for `ε`.
pub fn prem_fit(x: &Matrix, y: &[f64], schedule: &WeightSchedule, opts: &RegressionOptions) -> Result<RegressionFit> {
    let (n, d) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: y.len(),
        });
    }
    if n <= d {
        return Err(Error::Design(format!(
            "need more observations ({n}) than coefficients ({d})"
        )));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("response {v} is not finite")));
    }
    if (0..n).any(|i| x.row(i).iter().any(|v| !v.is_finite())) {
        return Err(Error::Domain("design matrix has non-finite entries".into()));
    }
    if !(opts.scale_lo > 0.0 && opts.scale_lo < opts.scale_hi) {
        return Err(Error::InvalidGrid(format!(
            "scale grid [{}, {}] must be positive",
            opts.scale_lo, opts.scale_hi
        )));
    }

    let beta_ols = ols(x, y)?;
    let res0 = residuals(x, y, &beta_ols);
    let y_size = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut s0 = robust_scale(&res0);
    if !(s0 > 1e-10 * (1.0 + y_size)) {
        // exact (or nearly exact) fit: keep the grid in response units
        s0 = 1.0;
    }
    let unit = if opts.relative_scale { s0 } else { 1.0 };
    let grid = Arc::new(MixingGrid::build(
        opts.scale_lo * unit,
        opts.scale_hi * unit,
        opts.scale_nodes,
        QuadratureRule::LogMidpoint,
        &[],
    )?);
    let fitter = ScaleFitter {
        p0: MixingDensity::uniform(grid),
        schedule: *schedule,
    };

    let mut beta = beta_ols.clone();
    let mut fit = fitter.fit(&res0)?;
    let mut objective = fit.log_marginal_likelihood();
    let mut trace = alloc::vec![IterationRecord {
        beta: beta.clone(),
        objective,
        step_halvings: 0
    }];
    let mut stop = StopReason::MaxIter;

    for _ in 0..opts.max_iter {
        let w = posterior_scale_weights(&residuals(x, y, &beta), &fit.density)?;
        let target = linalg::weighted_least_squares(x, y, &w)?;
        let mut step: Vec<f64> = target.iter().zip(&beta).map(|(t, b)| t - b).collect();
        let mut halvings = 0;
        let accepted = loop {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + s).collect();
            let cand_fit = fitter.fit(&residuals(x, y, &cand))?;
            let cand_obj = cand_fit.log_marginal_likelihood();
            if cand_obj >= objective - ACCEPT_SLACK {
                break Some((cand, cand_fit, cand_obj));
            }
            if halvings == 10 {
                break None;
            }
            halvings += 1;
            step.iter_mut().for_each(|s| *s *= 0.5);
        };
        let Some((cand, cand_fit, cand_obj)) = accepted else {
            stop = StopReason::Stalled;
            break;
        };
        let change = cand.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = cand;
        fit = cand_fit;
        objective = cand_obj;
        trace.push(IterationRecord {
            beta: beta.clone(),
            objective,
            step_halvings: halvings,
        });
        if change < opts.tol {
            stop = StopReason::Converged;
            break;
        }
    }

    let weights = posterior_scale_weights(&residuals(x, y, &beta), &fit.density)?;
    Ok(RegressionFit {
        beta,
        beta_ols,
        scale_density: fit.density,
        weights,
        residual_scale: s0,
        trace,
        converged: stop == StopReason::Converged,
        stop,
    })
}

/// Design with an intercept column followed by `x, x², ..., x^degree` for
/// each predictor column.
pub fn polynomial_design(predictors: &[Vec<f64>], degree: usize) -> Result<Matrix> {
    let n = predictors.first().map_or(0, Vec::len);
    if predictors.iter().any(|p| p.len() != n) {
        return Err(Error::Design("predictor columns have different lengths".into()));
    }
    let d = 1 + predictors.len() * degree.max(1);
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        data.push(1.0);
        for col in predictors {
            let mut v = 1.0;
            for _ in 0..degree.max(1) {
                v *= col[i];
                data.push(v);
            }
        }
    }
    Matrix::from_row_major(n, d, data)
}
