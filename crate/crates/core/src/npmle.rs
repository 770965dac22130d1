//! Fredholm fixed-point iteration for the mixture inverse problem and its
//! empirical variant, which converges to the nonparametric MLE.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{MixingDensity, MixingGrid};
use crate::kernel::{Kernel, Observation};
use crate::kl::YQuadrature;
use crate::math;

/// What the iteration is trying to reproduce as a mixture.
pub enum FredholmTarget<'a> {
    /// A known mixture density `f`, integrated over `yq`.
    Known {
        f: &'a dyn Fn(f64) -> f64,
        yq: &'a YQuadrature,
    },
    /// The empirical distribution of a sample.
    Empirical(&'a [Observation]),
    /// Any density estimate `f̂` standing in for `f`, integrated over `yq`.
    PlugIn {
        f_hat: &'a dyn Fn(f64) -> f64,
        yq: &'a YQuadrature,
    },
}

/// Kernel rows for a set of weighted target points, each row scaled by its
/// maximum so that mixture ratios never underflow.
struct TargetRows {
    m: usize,
    rows: Vec<f64>,
    shifts: Vec<f64>,
    /// Target weights, summing to one for the empirical target.
    weights: Vec<f64>,
    /// Original observation index of each row, for error messages.
    labels: Vec<usize>,
}

impl TargetRows {
    fn build(kernel: &Kernel, grid: &MixingGrid, points: &[(Observation, f64, usize)]) -> Result<Self> {
        kernel.validate()?;
        kernel.check_grid(grid)?;
        let m = grid.len();
        let mut rows = alloc::vec![0.0; points.len() * m];
        let mut shifts = Vec::with_capacity(points.len());
        for (r, (obs, _, label)) in points.iter().enumerate() {
            let shift = kernel
                .fill_scaled_row(obs, grid.nodes(), &mut rows[r * m..(r + 1) * m])
                .map_err(|e| e.at_observation(*label))?;
            shifts.push(shift);
        }
        Ok(TargetRows {
            m,
            rows,
            shifts,
            weights: points.iter().map(|p| p.1).collect(),
            labels: points.iter().map(|p| p.2).collect(),
        })
    }

    fn empirical(kernel: &Kernel, grid: &MixingGrid, data: &[Observation]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Data("empirical target needs at least one observation".into()));
        }
        // ties share a row
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.sort_by(|&a, &b| {
            data[a]
                .y
                .total_cmp(&data[b].y)
                .then(data[a].trials.cmp(&data[b].trials))
                .then(a.cmp(&b))
        });
        let unit = 1.0 / data.len() as f64;
        let mut points: Vec<(Observation, f64, usize)> = Vec::new();
        for i in idx {
            match points.last_mut() {
                Some(last) if last.0 == data[i] => last.1 += unit,
                _ => points.push((data[i], unit, i)),
            }
        }
        Self::build(kernel, grid, &points)
    }

    fn quadrature(kernel: &Kernel, grid: &MixingGrid, f: &dyn Fn(f64) -> f64, yq: &YQuadrature) -> Result<Self> {
        let (nodes, w) = yq.nodes_and_weights();
        let points: Vec<(Observation, f64, usize)> = nodes
            .iter()
            .zip(&w)
            .enumerate()
            .filter_map(|(i, (&y, &wy))| {
                let fy = f(y);
                (fy > 0.0).then_some((Observation::new(y), wy * fy, i))
            })
            .collect();
        Self::build(kernel, grid, &points)
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.rows[r * self.m..(r + 1) * self.m]
    }

    /// Scaled mixture values `Σ_j row_rj p_j ν_j` for every row.
    fn mixtures(&self, masses: &[f64]) -> Result<Vec<f64>> {
        (0..self.weights.len())
            .map(|r| {
                let s: f64 = self.row(r).iter().zip(masses).map(|(k, q)| k * q).sum();
                if s > 0.0 && self.shifts[r] > f64::NEG_INFINITY {
                    Ok(s)
                } else {
                    Err(Error::ZeroMixture { index: self.labels[r] })
                }
            })
            .collect()
    }

    /// `G(u_j) = Σ_r w_r k(y_r | u_j) / f_p(y_r)`.
    fn gradient(&self, mix: &[f64]) -> Vec<f64> {
        let mut g = alloc::vec![0.0; self.m];
        for (r, (&w, &s)) in self.weights.iter().zip(mix).enumerate() {
            let c = w / s;
            for (gj, k) in g.iter_mut().zip(self.row(r)) {
                *gj += c * k;
            }
        }
        g
    }

    fn log_likelihood(&self, mix: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(mix)
            .zip(&self.shifts)
            .map(|((w, s), sh)| w * (sh + math::ln(*s)))
            .sum()
    }
}

fn apply_gradient(p: &MixingDensity, g: &[f64]) -> Result<MixingDensity> {
    let values: Vec<f64> = p.values().iter().zip(g).map(|(v, gj)| v * gj).collect();
    p.grid().normalize(values)
}

/// One Fredholm update `p_new(u) ∝ p_prev(u) ∫ k(y|u) f(y) / f_{p_prev}(y) dy`.
pub fn fredholm_step(p_prev: &MixingDensity, kernel: &Kernel, target: &FredholmTarget<'_>) -> Result<MixingDensity> {
    let grid = p_prev.grid();
    let rows = match *target {
        FredholmTarget::Empirical(data) => TargetRows::empirical(kernel, grid, data)?,
        FredholmTarget::Known { f, yq } => TargetRows::quadrature(kernel, grid, f, yq)?,
        FredholmTarget::PlugIn { f_hat, yq } => TargetRows::quadrature(kernel, grid, f_hat, yq)?,
    };
    let mix = rows.mixtures(&p_prev.masses())?;
    apply_gradient(p_prev, &rows.gradient(&mix))
}

/// NPMLE gradient `(1/n) Σ_i k(Y_i | u) / f_p(Y_i)` at every grid node.
pub fn npmle_gradient(data: &[Observation], kernel: &Kernel, p: &MixingDensity) -> Result<Vec<f64>> {
    let rows = TargetRows::empirical(kernel, p.grid(), data)?;
    let mix = rows.mixtures(&p.masses())?;
    Ok(rows.gradient(&mix))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FredholmState {
    pub density: MixingDensity,
    /// Iterations performed.
    pub iterations: usize,
    /// `max_u` of the NPMLE gradient at the final iterate.
    pub sup_gradient: f64,
    pub gradient: Vec<f64>,
    pub converged: bool,
    /// Sup-norm change of the last iteration.
    pub last_change: f64,
    /// Log-likelihood of the starting density followed by every iterate.
    pub log_lik_trace: Vec<f64>,
}

impl FredholmState {
    pub fn log_likelihood(&self) -> f64 {
        *self.log_lik_trace.last().expect("trace holds the initial value")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NpmleOptions {
    /// Sup-norm change in density values that ends the iteration.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NpmleOptions {
    fn default() -> Self {
        NpmleOptions {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// Iterate the empirical Fredholm update from the flat density on `grid`.
pub fn npmle_fit(
    data: &[Observation],
    kernel: &Kernel,
    grid: Arc<MixingGrid>,
    opts: &NpmleOptions,
) -> Result<FredholmState> {
    npmle_fit_from(data, kernel, MixingDensity::uniform(grid), opts)
}

/// Like [`npmle_fit`] but starting from `p0`.
pub fn npmle_fit_from(
    data: &[Observation],
    kernel: &Kernel,
    p0: MixingDensity,
    opts: &NpmleOptions,
) -> Result<FredholmState> {
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter(alloc::format!(
            "tolerance {} must be positive",
            opts.tol
        )));
    }
    let rows = TargetRows::empirical(kernel, p0.grid(), data)?;
    let n = data.len() as f64;
    let mut p = p0;
    let mut mix = rows.mixtures(&p.masses())?;
    let mut trace = alloc::vec![n * rows.log_likelihood(&mix)];
    let mut converged = false;
    let mut change = f64::INFINITY;
    let mut t = 0;
    while t < opts.max_iter {
        let next = apply_gradient(&p, &rows.gradient(&mix))?;
        change = next
            .values()
            .iter()
            .zip(p.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        p = next;
        mix = rows.mixtures(&p.masses())?;
        trace.push(n * rows.log_likelihood(&mix));
        t += 1;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let gradient = rows.gradient(&mix);
    let sup_gradient = gradient.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FredholmState {
        density: p,
        iterations: t,
        sup_gradient,
        gradient,
        converged,
        last_change: change,
        log_lik_trace: trace,
    })
}
