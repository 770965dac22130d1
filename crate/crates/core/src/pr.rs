//! The predictive recursion and its permutation-averaged form.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{MixingDensity, MixingGrid};
use crate::kernel::{self, Kernel, Observation};
use crate::math;
use crate::perm;
use crate::schedule::WeightSchedule;

/// Output of a PR pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PrFit {
    /// The final mixing density `p_n`.
    pub density: MixingDensity,
    pub kernel: Kernel,
    /// `ln f_{i-1}(Y_i)` for `i = 1..n`. For averaged fits, entry `i` is the
    /// mean over permutations of the `i`-th step's log predictive.
    pub per_step_log_predictive: Vec<f64>,
    pub schedule: WeightSchedule,
    pub permutations_used: usize,
    /// Seed of the permutation generator, when one was used.
    pub seed: Option<u64>,
}

impl PrFit {
    /// `ln L_n = Σ_i ln f_{i-1}(Y_i)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.per_step_log_predictive.iter().sum()
    }

    /// `f_n(y)` for the fitted mixing density.
    pub fn mixture_density(&self, obs: &Observation) -> Result<f64> {
        kernel::mixture_density(&self.kernel, &self.density, obs)
    }

    /// Log-likelihood `Σ ln f_n(Y_i)` of data under the final fitted mixture.
    pub fn log_likelihood(&self, data: &[Observation]) -> Result<f64> {
        data.iter()
            .map(|o| kernel::ln_mixture_density(&self.kernel, &self.density, o))
            .sum()
    }

    /// Pointwise average of fits that share a grid, kernel and data length.
    pub fn average(fits: &[PrFit], seed: Option<u64>) -> Result<PrFit> {
        let first = fits.first().ok_or_else(|| Error::Data("no fits to average".into()))?;
        let densities: Vec<MixingDensity> = fits.iter().map(|f| f.density.clone()).collect();
        let density = MixingDensity::average(&densities)?;
        let n = first.per_step_log_predictive.len();
        if let Some(bad) = fits.iter().find(|f| f.per_step_log_predictive.len() != n) {
            return Err(Error::Shape {
                expected: n,
                got: bad.per_step_log_predictive.len(),
            });
        }
        let mut column = alloc::vec![0.0; fits.len()];
        let steps = (0..n)
            .map(|i| {
                column
                    .iter_mut()
                    .zip(fits)
                    .for_each(|(c, f)| *c = f.per_step_log_predictive[i]);
                math::order_free_mean(&mut column)
            })
            .collect();
        Ok(PrFit {
            density,
            kernel: first.kernel,
            per_step_log_predictive: steps,
            schedule: first.schedule,
            permutations_used: fits.len(),
            seed,
        })
    }
}

/// Mutable PR state that consumes one observation at a time.
///
/// Useful when intermediate estimates are needed (convergence curves); the
/// one-shot entry points are [`pr_fit`] and [`pr_fit_averaged`].
#[derive(Debug, Clone)]
pub struct PrRecursion {
    kernel: Kernel,
    grid: Arc<MixingGrid>,
    values: Vec<f64>,
    row: Vec<f64>,
    steps: usize,
}

impl PrRecursion {
    pub fn new(kernel: Kernel, p0: &MixingDensity) -> Result<Self> {
        kernel.validate()?;
        kernel.check_grid(p0.grid())?;
        Ok(PrRecursion {
            kernel,
            grid: Arc::clone(p0.grid()),
            values: p0.values().to_vec(),
            row: alloc::vec![0.0; p0.grid().len()],
            steps: 0,
        })
    }

    /// Number of observations consumed.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Apply one update with weight `w` and return `ln f_{i-1}(y)`.
    ///
    /// On error the state is left unchanged. `index` only labels errors.
    pub fn step(&mut self, obs: &Observation, w: f64, index: usize) -> Result<f64> {
        if !(w > 0.0 && w < 1.0) {
            return Err(Error::Parameter(alloc::format!("PR weight {w} outside (0, 1)")));
        }
        let shift = self
            .kernel
            .fill_scaled_row(obs, self.grid.nodes(), &mut self.row)
            .map_err(|e| e.at_observation(index))?;
        let weights = self.grid.weights();
        let scaled_pred = kernel::weighted_sum(&self.row, &self.values, weights);
        if !(scaled_pred > 0.0) || shift == f64::NEG_INFINITY {
            return Err(Error::ZeroPredictive { index });
        }
        let ratio = w / scaled_pred;
        let keep = 1.0 - w;
        for (p, k) in self.values.iter_mut().zip(&self.row) {
            *p *= keep + ratio * k;
        }
        renormalize(&mut self.values, weights);
        self.steps += 1;
        Ok(shift + math::ln(scaled_pred))
    }

    /// Current mixing density.
    pub fn density(&self) -> MixingDensity {
        MixingDensity::from_normalized_unchecked(Arc::clone(&self.grid), self.values.clone())
    }

    pub fn into_density(self) -> MixingDensity {
        MixingDensity::from_normalized_unchecked(self.grid, self.values)
    }
}

fn renormalize(values: &mut [f64], weights: &[f64]) {
    let mass: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    if (mass - 1.0).abs() > 1e-13 {
        let s = 1.0 / mass;
        values.iter_mut().for_each(|v| *v *= s);
    }
}

/// One PR update of `p_prev` with observation `obs` and weight `w`.
pub fn pr_step(p_prev: &MixingDensity, obs: &Observation, kernel: &Kernel, w: f64) -> Result<MixingDensity> {
    let mut rec = PrRecursion::new(*kernel, p_prev)?;
    rec.step(obs, w, 0)?;
    Ok(rec.into_density())
}

/// PR over `data` in the given order, starting from `p0`.
pub fn pr_fit(data: &[Observation], kernel: &Kernel, p0: &MixingDensity, schedule: &WeightSchedule) -> Result<PrFit> {
    let order: Vec<usize> = (0..data.len()).collect();
    pr_fit_ordered(data, &order, kernel, p0, schedule)
}

/// PR over `data` visited in `order`. Errors report positions in `data`.
pub fn pr_fit_ordered(
    data: &[Observation],
    order: &[usize],
    kernel: &Kernel,
    p0: &MixingDensity,
    schedule: &WeightSchedule,
) -> Result<PrFit> {
    if data.is_empty() {
        return Err(Error::Data("PR needs at least one observation".into()));
    }
    if order.len() != data.len() {
        return Err(Error::Shape {
            expected: data.len(),
            got: order.len(),
        });
    }
    let mut rec = PrRecursion::new(*kernel, p0)?;
    let mut log_pred = Vec::with_capacity(data.len());
    for (i, &idx) in order.iter().enumerate() {
        let obs = data
            .get(idx)
            .ok_or_else(|| Error::Range(alloc::format!("order index {idx}")))?;
        log_pred.push(rec.step(obs, schedule.weight(i + 1), idx)?);
    }
    Ok(PrFit {
        density: rec.into_density(),
        kernel: *kernel,
        per_step_log_predictive: log_pred,
        schedule: *schedule,
        permutations_used: 1,
        seed: None,
    })
}

/// Average of PR fits over `n_perm` random orderings of `data`.
///
/// With `n ≤ 5` and `n_perm ≥ n!` all orderings are used exactly once, which
/// makes the result invariant to the input order.
pub fn pr_fit_averaged(
    data: &[Observation],
    kernel: &Kernel,
    p0: &MixingDensity,
    schedule: &WeightSchedule,
    n_perm: usize,
    seed: u64,
) -> Result<PrFit> {
    if n_perm == 0 {
        return Err(Error::Parameter("need at least one permutation".into()));
    }
    let fits = perm::orderings(data.len(), n_perm, seed)
        .iter()
        .map(|order| pr_fit_ordered(data, order, kernel, p0, schedule))
        .collect::<Result<Vec<_>>>()?;
    PrFit::average(&fits, Some(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::QuadratureRule;
    use crate::kernel::observations;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn uniform(lo: f64, hi: f64, m: usize) -> MixingDensity {
        let grid = Arc::new(MixingGrid::build(lo, hi, m, QuadratureRule::Midpoint, &[]).unwrap());
        MixingDensity::uniform(grid)
    }

    #[test]
    fn poisson_two_atom_step() {
        let grid = Arc::new(MixingGrid::atoms(&[1.0, 2.0]).unwrap());
        let p = grid.normalize(vec![0.5, 0.5]).unwrap();
        let next = pr_step(&p, &Observation::new(0.0), &Kernel::Poisson, 0.5).unwrap();
        // hand oracle: 0.25 + 0.5 * 0.5 k(0|u) / (0.5 e^-1 + 0.5 e^-2)
        let f = 0.5 * (math::exp(-1.0) + math::exp(-2.0));
        let want = [0.25 + 0.25 * math::exp(-1.0) / f, 0.25 + 0.25 * math::exp(-2.0) / f];
        assert_relative_eq!(next.values()[0], want[0], epsilon = 1e-14);
        assert_relative_eq!(next.values()[1], want[1], epsilon = 1e-14);
        assert!((next.values()[0] - 0.6156).abs() < 1e-4);
        assert!((next.values()[1] - 0.3844).abs() < 1e-4);
    }

    #[test]
    fn constant_kernel_leaves_density_alone() {
        // N(0 | ±1, 1) agrees on both atoms, so k / f ≡ 1
        let grid = Arc::new(MixingGrid::atoms(&[-1.0, 1.0]).unwrap());
        let p = grid.normalize(vec![0.3, 0.7]).unwrap();
        let next = pr_step(&p, &Observation::new(0.0), &Kernel::gauss(1.0).unwrap(), 0.9).unwrap();
        assert_eq!(next.values(), p.values());
    }

    #[test]
    fn point_mass_is_invariant() {
        let grid = Arc::new(MixingGrid::build(0.0, 10.0, 40, QuadratureRule::Midpoint, &[]).unwrap());
        let p = MixingDensity::point_mass(grid, 17).unwrap();
        let next = pr_step(&p, &Observation::new(6.0), &Kernel::Poisson, 0.7).unwrap();
        assert_eq!(next.values(), p.values());
    }

    #[test]
    fn zero_predictive_is_reported() {
        let grid = Arc::new(MixingGrid::atoms(&[0.0]).unwrap());
        let p = MixingDensity::uniform(grid);
        let data = observations(&[0.0, 0.0, 3.0]);
        let err = pr_fit(&data, &Kernel::Poisson, &p, &WeightSchedule::default()).unwrap_err();
        assert_eq!(err, Error::ZeroPredictive { index: 2 });
    }

    #[test]
    fn bad_observation_names_its_index() {
        let p = uniform(0.0, 25.0, 50);
        let data = observations(&[1.0, -2.0]);
        let err = pr_fit(&data, &Kernel::Poisson, &p, &WeightSchedule::default()).unwrap_err();
        assert_eq!(err.observation_index(), Some(1));
        assert!(matches!(err, Error::BadObservation { .. }));
    }

    #[test]
    fn one_step_matches_dirichlet_posterior_mean() {
        let alpha = 2.5;
        let schedule = WeightSchedule::dirichlet(alpha).unwrap();
        let p0 = uniform(0.0, 25.0, 400);
        let y = Observation::new(3.0);
        let fit = pr_fit(&[y], &Kernel::Poisson, &p0, &schedule).unwrap();
        let f0 = kernel::mixture_density(&Kernel::Poisson, &p0, &y).unwrap();
        for (j, &u) in p0.grid().nodes().iter().enumerate() {
            let k = Kernel::Poisson.eval(&y, u).unwrap();
            let want = alpha / (alpha + 1.0) * p0.values()[j] + k * p0.values()[j] / ((alpha + 1.0) * f0);
            assert!((fit.density.values()[j] - want).abs() < 1e-12);
        }
        assert_relative_eq!(fit.per_step_log_predictive[0], math::ln(f0), epsilon = 1e-12);
    }

    #[test]
    fn n_perm_one_equals_fit_on_permuted_order() {
        let data = observations(&[0.0, 3.0, 1.0, 7.0, 2.0, 2.0, 5.0, 0.0]);
        let p0 = uniform(0.0, 25.0, 100);
        let s = WeightSchedule::default();
        let avg = pr_fit_averaged(&data, &Kernel::Poisson, &p0, &s, 1, 99).unwrap();
        let order = &perm::orderings(data.len(), 1, 99)[0];
        let direct = pr_fit_ordered(&data, order, &Kernel::Poisson, &p0, &s).unwrap();
        assert_eq!(avg.density.values(), direct.density.values());
        assert_eq!(avg.per_step_log_predictive, direct.per_step_log_predictive);
        assert_eq!(avg.seed, Some(99));
    }

    #[test]
    fn exhaustive_average_ignores_input_order() {
        let p0 = uniform(0.0, 25.0, 80);
        let s = WeightSchedule::default();
        let a = observations(&[4.0, 0.0, 9.0, 1.0, 2.0]);
        let b = observations(&[9.0, 2.0, 1.0, 0.0, 4.0]);
        let fa = pr_fit_averaged(&a, &Kernel::Poisson, &p0, &s, 120, 1).unwrap();
        let fb = pr_fit_averaged(&b, &Kernel::Poisson, &p0, &s, 500, 2).unwrap();
        assert_eq!(fa.permutations_used, 120);
        assert_eq!(fa.density, fb.density);
        assert_eq!(fa.log_marginal_likelihood(), fb.log_marginal_likelihood());
    }

    #[test]
    fn averaged_fit_is_deterministic_given_seed() {
        let data = observations(&(0..40).map(|i| (i % 7) as f64).collect::<Vec<_>>());
        let p0 = uniform(0.0, 25.0, 60);
        let s = WeightSchedule::default();
        let a = pr_fit_averaged(&data, &Kernel::Poisson, &p0, &s, 25, 5).unwrap();
        let b = pr_fit_averaged(&data, &Kernel::Poisson, &p0, &s, 25, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.permutations_used, 25);
        assert!(pr_fit_averaged(&data, &Kernel::Poisson, &p0, &s, 0, 5).is_err());
    }

    proptest! {
        #[test]
        fn steps_conserve_mass_support_and_sign(
            ys in prop::collection::vec(0u32..15, 1..40),
            zeros in prop::collection::vec(0usize..60, 0..20),
            gamma in 0.51f64..1.0,
        ) {
            let grid = Arc::new(MixingGrid::build(0.0, 20.0, 60, QuadratureRule::Midpoint, &[]).unwrap());
            let mut v = vec![1.0; 60];
            for &z in &zeros { v[z] = 0.0; }
            v[59] = 1.0;
            let p0 = grid.normalize(v).unwrap();
            let s = WeightSchedule::new(1.0, gamma).unwrap();
            let mut rec = PrRecursion::new(Kernel::Poisson, &p0).unwrap();
            for (i, &y) in ys.iter().enumerate() {
                let lp = rec.step(&Observation::new(y as f64), s.weight(i + 1), i).unwrap();
                prop_assert!(lp.is_finite());
                let d = rec.density();
                prop_assert!((grid.integrate(d.values()).unwrap() - 1.0).abs() < 1e-10);
                for (j, &val) in d.values().iter().enumerate() {
                    prop_assert!(val >= 0.0);
                    if p0.values()[j] == 0.0 { prop_assert_eq!(val, 0.0); }
                }
            }
        }
    }
}
