//! Two-groups model for large-scale testing.
//!
//! The marginal density of z-scores is written as a mixture over the domain
//! `ν = δ₀ + λ[-1, 1]` with kernel `N(y | μ + τσu, σ²)`. The atom at zero
//! carries the null proportion π, the continuous part carries the non-null
//! density, and the local false discovery rate is `π f⁽⁰⁾(y) / f(y)`. Since
//! both terms come from one fitted mixture, the fdr can never exceed one.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{MixingDensity, MixingGrid, QuadratureRule};
use crate::kernel::{self, Kernel, KernelFamily, Observation};
use crate::math;
use crate::schedule::WeightSchedule;
use crate::semiparam::{self, PrmlOptions, ThetaBox, TraceEntry};

/// Hard floor on the number of z-scores.
pub const MIN_CASES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoGroupsOptions {
    /// Mass placed on the null atom by the initial guess `p₀`; the rest is
    /// spread uniformly over `[-1, 1]`.
    pub initial_null_mass: f64,
    /// Upper cap on π̂.
    pub pi_cap: f64,
    pub prml: PrmlOptions,
}

impl Default for TwoGroupsOptions {
    fn default() -> Self {
        TwoGroupsOptions {
            initial_null_mass: 0.9,
            pi_cap: 0.999,
            prml: PrmlOptions::default(),
        }
    }
}

/// Default search box over `(μ, τ, σ)`.
pub fn default_box() -> ThetaBox {
    ThetaBox::new(alloc::vec![-1.0, 1.0, 0.3], alloc::vec![1.0, 10.0, 3.0]).expect("static box is valid")
}

/// `δ₀ + λ[-1, 1]` with `m` midpoint nodes on the continuous part.
pub fn default_grid(m: usize) -> Result<MixingGrid> {
    MixingGrid::build(-1.0, 1.0, m, QuadratureRule::Midpoint, &[0.0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoGroupsFit {
    /// Mass of the null atom.
    pub pi_hat: f64,
    pub mu_hat: f64,
    pub tau_hat: f64,
    pub sigma_hat: f64,
    /// Full mixing density on `δ₀ + λ[-1, 1]` (after any capping of π̂).
    pub density: MixingDensity,
    /// Non-null density on the continuous nodes alone.
    pub p1_hat: MixingDensity,
    pub log_lik: f64,
    /// True when π̂ was reduced to the cap.
    pub capped: bool,
    pub trace: Vec<TraceEntry>,
}

impl TwoGroupsFit {
    pub fn kernel(&self) -> Kernel {
        Kernel::TwoGroups {
            mu: self.mu_hat,
            tau: self.tau_hat,
            sigma: self.sigma_hat,
        }
    }

    /// `ln f⁽⁰⁾(y)`, the empirical null.
    pub fn ln_null(&self, y: f64) -> f64 {
        math::normal_ln_pdf(y, self.mu_hat, self.sigma_hat)
    }

    /// `ln f⁽¹⁾(y)`; `-inf` if the continuous part carries no mass.
    pub fn ln_alt(&self, y: f64) -> f64 {
        kernel::ln_mixture_density(&self.kernel(), &self.p1_hat, &Observation::new(y)).unwrap_or(f64::NEG_INFINITY)
    }

    /// `(ln π̂ f⁽⁰⁾(y), ln (1-π̂) f⁽¹⁾(y))`.
    fn ln_parts(&self, y: f64) -> (f64, f64) {
        let null = math::ln(self.pi_hat) + self.ln_null(y);
        let alt = if self.pi_hat < 1.0 {
            libm::log1p(-self.pi_hat) + self.ln_alt(y)
        } else {
            f64::NEG_INFINITY
        };
        (null, alt)
    }

    /// Fitted marginal density `f̂(y)`.
    pub fn marginal(&self, y: f64) -> f64 {
        let (a, b) = self.ln_parts(y);
        math::exp(math::log_sum_exp(&[a, b]))
    }

    /// `(f̂, π̂ f̂⁽⁰⁾, (1-π̂) f̂⁽¹⁾)` at `y`, for plotting.
    pub fn components(&self, y: f64) -> (f64, f64, f64) {
        let (a, b) = self.ln_parts(y);
        (math::exp(math::log_sum_exp(&[a, b])), math::exp(a), math::exp(b))
    }
}

/// Fit the two-groups model to z-scores.
///
/// `(μ, τ, σ)` maximize the PR marginal likelihood over `bounds`; π̂ is the
/// atom mass of the PR estimate at the optimum, capped at `opts.pi_cap`.
pub fn twogroups_fit(
    z: &[f64],
    bounds: &ThetaBox,
    grid: &Arc<MixingGrid>,
    schedule: &WeightSchedule,
    opts: &TwoGroupsOptions,
) -> Result<TwoGroupsFit> {
    if z.len() < MIN_CASES {
        return Err(Error::Data(format!(
            "two-groups fit needs at least {MIN_CASES} z-scores, got {}",
            z.len()
        )));
    }
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("z-score {bad} is not finite")));
    }
    let atoms: Vec<usize> = grid.atom_indices().collect();
    if atoms.len() != 1 || grid.nodes()[atoms[0]] != 0.0 {
        return Err(Error::InvalidGrid(
            "two-groups grid needs exactly one atom, at 0".into(),
        ));
    }
    let (lo, hi) = grid.support();
    if lo < -1.0 || hi > 1.0 {
        return Err(Error::InvalidGrid(
            "two-groups continuous part must lie in [-1, 1]".into(),
        ));
    }
    let pi0 = opts.initial_null_mass;
    if !(pi0 > 0.0 && pi0 < 1.0) {
        return Err(Error::Parameter(format!("initial null mass {pi0} outside (0, 1)")));
    }
    if !(opts.pi_cap > 0.0 && opts.pi_cap < 1.0) {
        return Err(Error::Parameter(format!("pi cap {} outside (0, 1)", opts.pi_cap)));
    }
    let p0 = initial_density(grid, pi0)?;
    let data: Vec<Observation> = z.iter().map(|&y| Observation::new(y)).collect();
    let res = semiparam::prml_optimize(&data, KernelFamily::TwoGroups, bounds, &p0, schedule, &opts.prml)?;

    let atom = atoms[0];
    let mut masses = res.fit.density.masses();
    let mut capped = false;
    if masses[atom] > opts.pi_cap {
        let cont: f64 = 1.0 - masses[atom];
        let scale = (1.0 - opts.pi_cap) / cont;
        for (j, m) in masses.iter_mut().enumerate() {
            if j != atom {
                *m *= scale;
            }
        }
        masses[atom] = opts.pi_cap;
        capped = true;
    }
    let density = MixingDensity::from_masses(Arc::clone(grid), &masses)?;
    let pi_hat = density.atom_mass();
    let p1_hat = continuous_part(&density)?;
    Ok(TwoGroupsFit {
        pi_hat,
        mu_hat: res.theta[0],
        tau_hat: res.theta[1],
        sigma_hat: res.theta[2],
        density,
        p1_hat,
        log_lik: res.log_lik,
        capped,
        trace: res.trace,
    })
}

/// `π₀` on the atom plus `(1 - π₀)` spread uniformly over the continuous nodes.
pub fn initial_density(grid: &Arc<MixingGrid>, null_mass: f64) -> Result<MixingDensity> {
    let cont_measure: f64 = (0..grid.len())
        .filter(|&j| !grid.is_atom(j))
        .map(|j| grid.weights()[j])
        .sum();
    let values = (0..grid.len())
        .map(|j| {
            if grid.is_atom(j) {
                null_mass / grid.weights()[j]
            } else {
                (1.0 - null_mass) / cont_measure
            }
        })
        .collect();
    MixingDensity::from_values(Arc::clone(grid), values)
}

fn continuous_part(density: &MixingDensity) -> Result<MixingDensity> {
    let grid = density.grid();
    let keep: Vec<usize> = (0..grid.len()).filter(|&j| !grid.is_atom(j)).collect();
    let (lo, hi) = grid.support();
    let sub = MixingGrid::from_parts(
        keep.iter().map(|&j| grid.nodes()[j]).collect(),
        keep.iter().map(|&j| grid.weights()[j]).collect(),
        alloc::vec![false; keep.len()],
        lo,
        hi,
    )?;
    MixingDensity::from_values(Arc::new(sub), keep.iter().map(|&j| density.values()[j]).collect())
}

/// Local false discovery rate `π̂ f̂⁽⁰⁾(y) / f̂(y)`, always in `[0, 1]`.
pub fn local_fdr(fit: &TwoGroupsFit, y: f64) -> f64 {
    let (null, alt) = fit.ln_parts(y);
    let total = math::log_sum_exp(&[null, alt]);
    if !total.is_finite() {
        // both parts underflowed: nothing separates the groups
        return 1.0;
    }
    math::exp(null - total).clamp(0.0, 1.0)
}

/// Per-case decisions of the `fdr ≤ cutoff` rule.
#[derive(Debug, Clone, PartialEq)]
pub struct FdrDecisions {
    pub cutoff: f64,
    pub fdr: Vec<f64>,
    pub reject: Vec<bool>,
    /// Rejections with `y > μ̂`.
    pub n_up: usize,
    /// Rejections with `y < μ̂`.
    pub n_down: usize,
    /// Abscissa below `μ̂` where fdr first drops to the cutoff, if it does.
    pub lower_threshold: Option<f64>,
    /// Abscissa above `μ̂` where fdr first drops to the cutoff, if it does.
    pub upper_threshold: Option<f64>,
}

impl FdrDecisions {
    pub fn n_rejected(&self) -> usize {
        self.n_up + self.n_down
    }
}

/// Reject case `i` when `fdr(z_i) ≤ cutoff`.
pub fn fdr_test(fit: &TwoGroupsFit, z: &[f64], cutoff: f64) -> Result<FdrDecisions> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::Parameter(format!("fdr cutoff {cutoff} outside (0, 1)")));
    }
    let fdr: Vec<f64> = z.iter().map(|&y| local_fdr(fit, y)).collect();
    let reject: Vec<bool> = fdr.iter().map(|&f| f <= cutoff).collect();
    let n_up = z.iter().zip(&reject).filter(|(y, r)| **r && **y > fit.mu_hat).count();
    let n_down = z.iter().zip(&reject).filter(|(y, r)| **r && **y < fit.mu_hat).count();
    Ok(FdrDecisions {
        cutoff,
        fdr,
        reject,
        n_up,
        n_down,
        lower_threshold: crossing(fit, cutoff, -1.0),
        upper_threshold: crossing(fit, cutoff, 1.0),
    })
}

/// Walk away from μ̂ in `direction` until fdr ≤ cutoff, then bisect.
fn crossing(fit: &TwoGroupsFit, cutoff: f64, direction: f64) -> Option<f64> {
    let step = 0.01 * fit.sigma_hat;
    let reach = 40.0 * fit.sigma_hat + fit.tau_hat * fit.sigma_hat;
    let below = |y: f64| local_fdr(fit, y) <= cutoff;
    let mut inner = fit.mu_hat;
    if below(inner) {
        return Some(inner);
    }
    let mut t = step;
    while t <= reach {
        let outer = fit.mu_hat + direction * t;
        if below(outer) {
            let (mut a, mut b) = (inner, outer);
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                if below(mid) {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            return Some(b);
        }
        inner = outer;
        t += step;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn handmade(pi: f64, p1_values: Vec<f64>) -> TwoGroupsFit {
        let grid = Arc::new(default_grid(p1_values.len()).unwrap());
        let cont = Arc::new(MixingGrid::build(-1.0, 1.0, p1_values.len(), QuadratureRule::Midpoint, &[]).unwrap());
        let p1_hat = cont.normalize(p1_values).unwrap();
        let mut masses = vec![0.0; grid.len()];
        let mut k = 0;
        for j in 0..grid.len() {
            if grid.is_atom(j) {
                masses[j] = pi;
            } else {
                masses[j] = (1.0 - pi) * p1_hat.masses()[k];
                k += 1;
            }
        }
        let density = MixingDensity::from_masses(grid, &masses).unwrap();
        TwoGroupsFit {
            pi_hat: pi,
            mu_hat: 0.0,
            tau_hat: 4.0,
            sigma_hat: 1.0,
            density,
            p1_hat,
            log_lik: 0.0,
            capped: false,
            trace: Vec::new(),
        }
    }

    #[test]
    fn fdr_arithmetic_matches_definition() {
        let fit = handmade(0.5, vec![1.0; 40]);
        for y in [-3.0, 0.0, 0.7, 4.0] {
            let f0 = math::normal_pdf(y, 0.0, 1.0);
            let f1 = math::exp(fit.ln_alt(y));
            assert_relative_eq!(
                local_fdr(&fit, y),
                0.5 * f0 / (0.5 * f0 + 0.5 * f1),
                max_relative = 1e-12
            );
        }
        // worked number: f0(0) = 0.398942, f1(0) = 0.1, π = 0.5
        let f0 = math::normal_pdf(0.0, 0.0, 1.0);
        assert!((0.5 * f0 / (0.5 * f0 + 0.5 * 0.1) - 0.7996).abs() < 1e-4);
    }

    #[test]
    fn no_alternative_mass_means_fdr_one() {
        let mut fit = handmade(0.5, vec![1.0; 20]);
        fit.pi_hat = 1.0;
        for y in [-8.0, 0.0, 3.0, 15.0] {
            assert_eq!(local_fdr(&fit, y), 1.0);
        }
    }

    #[test]
    fn fdr_stays_in_unit_interval_far_out() {
        let fit = handmade(0.9, (0..60).map(|j| 1.0 + (j as f64 / 10.0)).collect());
        for i in -400..=400 {
            let f = local_fdr(&fit, i as f64 * 0.1);
            assert!((0.0..=1.0).contains(&f));
        }
        assert!(local_fdr(&fit, 0.0) > local_fdr(&fit, 5.0));
    }

    #[test]
    fn rejections_grow_with_cutoff() {
        let fit = handmade(0.8, vec![1.0; 50]);
        let z: Vec<f64> = (-60..=60).map(|i| i as f64 * 0.1).collect();
        let a = fdr_test(&fit, &z, 0.05).unwrap();
        let b = fdr_test(&fit, &z, 0.2).unwrap();
        assert!(a.reject.iter().zip(&b.reject).all(|(x, y)| !*x || *y));
        assert!(b.n_rejected() >= a.n_rejected());
        let lo = b.lower_threshold.unwrap();
        let hi = b.upper_threshold.unwrap();
        assert!(lo < 0.0 && hi > 0.0);
        assert!((local_fdr(&fit, hi) - 0.2).abs() < 1e-6);
        assert!(fdr_test(&fit, &z, 1.0).is_err());
    }

    #[test]
    fn nothing_rejected_when_all_fdr_high() {
        let fit = handmade(0.999, vec![1.0; 20]);
        let z = [0.0, 0.5, -1.0, 1.5];
        let d = fdr_test(&fit, &z, 0.1).unwrap();
        assert_eq!(d.n_rejected(), 0);
    }

    #[test]
    fn input_validation() {
        let grid = Arc::new(default_grid(50).unwrap());
        let s = WeightSchedule::default();
        let few = [0.1; 5];
        assert!(twogroups_fit(&few, &default_box(), &grid, &s, &TwoGroupsOptions::default()).is_err());
        let no_atom = Arc::new(MixingGrid::build(-1.0, 1.0, 20, QuadratureRule::Midpoint, &[]).unwrap());
        let z = [0.1; 20];
        assert!(matches!(
            twogroups_fit(&z, &default_box(), &no_atom, &s, &TwoGroupsOptions::default()),
            Err(Error::InvalidGrid(_))
        ));
    }

    #[test]
    fn initial_density_splits_mass() {
        let grid = Arc::new(default_grid(100).unwrap());
        let p0 = initial_density(&grid, 0.3).unwrap();
        assert_relative_eq!(p0.atom_mass(), 0.3, epsilon = 1e-14);
        assert_relative_eq!(p0.total_mass(), 1.0, epsilon = 1e-14);
    }
}
