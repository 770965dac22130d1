//! Kernel densities `k(y | u)` and the mixtures they induce.
//!
//! Every kernel is evaluated in log space; callers that need a whole row over
//! the grid get log values and exponentiate once after subtracting the row
//! maximum, which keeps z-scores near ±10 and large counts from underflowing.

use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{MixingDensity, MixingGrid};
use crate::math;

/// One observation: the response plus an optional binomial trial count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub trials: Option<u64>,
}

impl Observation {
    pub fn new(y: f64) -> Self {
        Observation { y, trials: None }
    }

    pub fn binomial(successes: u64, trials: u64) -> Self {
        Observation {
            y: successes as f64,
            trials: Some(trials),
        }
    }
}

impl From<f64> for Observation {
    fn from(y: f64) -> Self {
        Observation::new(y)
    }
}

/// Wrap plain responses as observations.
pub fn observations(ys: &[f64]) -> Vec<Observation> {
    ys.iter().map(|&y| Observation::new(y)).collect()
}

/// Kernel family with its structural parameter θ, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// Poisson mass function with rate `u`.
    Poisson,
    /// `N(y | u, σ²)`.
    GaussLocation { sigma: f64 },
    /// `Bin(y | N, u)` with `N` taken from the observation.
    Binomial,
    /// `N(y | 0, u²)`, the scale-mixture-of-normals kernel.
    GaussScale,
    /// `N(y | μ + τσu, σ²)` on the two-groups domain `δ₀ + λ[-1, 1]`.
    TwoGroups { mu: f64, tau: f64, sigma: f64 },
}

impl Kernel {
    pub fn gauss(sigma: f64) -> Result<Self> {
        let k = Kernel::GaussLocation { sigma };
        k.validate()?;
        Ok(k)
    }

    pub fn two_groups(mu: f64, tau: f64, sigma: f64) -> Result<Self> {
        let k = Kernel::TwoGroups { mu, tau, sigma };
        k.validate()?;
        Ok(k)
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            Kernel::Poisson => KernelFamily::Poisson,
            Kernel::GaussLocation { .. } => KernelFamily::Gauss,
            Kernel::Binomial => KernelFamily::Binomial,
            Kernel::GaussScale => KernelFamily::Scale,
            Kernel::TwoGroups { .. } => KernelFamily::TwoGroups,
        }
    }

    /// Structural parameters in the order [`KernelFamily::with_theta`] expects.
    pub fn theta(&self) -> Vec<f64> {
        match *self {
            Kernel::GaussLocation { sigma } => alloc::vec![sigma],
            Kernel::TwoGroups { mu, tau, sigma } => alloc::vec![mu, tau, sigma],
            _ => Vec::new(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Kernel::Poisson | Kernel::Binomial)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            Kernel::GaussLocation { sigma } => positive("sigma", sigma),
            Kernel::TwoGroups { mu, tau, sigma } => {
                positive("sigma", sigma)?;
                positive("tau", tau)?;
                if mu.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!("mu must be finite, got {mu}")))
                }
            }
            _ => Ok(()),
        }
    }

    /// Reject observations outside the family's sample space.
    pub fn check_observation(&self, obs: &Observation) -> Result<()> {
        if !obs.y.is_finite() {
            return Err(Error::Domain(format!("observation {} is not finite", obs.y)));
        }
        let is_count = obs.y >= 0.0 && libm::trunc(obs.y) == obs.y;
        match self {
            Kernel::Poisson if !is_count => Err(Error::Domain(format!(
                "Poisson kernel needs a nonnegative count, got {}",
                obs.y
            ))),
            Kernel::Binomial => match obs.trials {
                None => Err(Error::Domain("binomial kernel needs a trial count".into())),
                Some(0) => Err(Error::Domain("binomial trial count must be at least 1".into())),
                Some(n) if !is_count || obs.y > n as f64 => {
                    Err(Error::Domain(format!("binomial outcome {} outside 0..={n}", obs.y)))
                }
                Some(_) => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Reject grids whose nodes fall outside the kernel's parameter space.
    pub fn check_grid(&self, grid: &MixingGrid) -> Result<()> {
        let nodes = grid.nodes();
        let bad = match self {
            Kernel::Poisson => nodes.iter().find(|&&u| u < 0.0),
            Kernel::Binomial => nodes.iter().find(|&&u| !(0.0..=1.0).contains(&u)),
            Kernel::GaussScale => nodes.iter().find(|&&u| u <= 0.0),
            _ => None,
        };
        match bad {
            Some(u) => Err(Error::Domain(format!(
                "grid node {u} outside the {:?} kernel's domain",
                self.family()
            ))),
            None => Ok(()),
        }
    }

    /// `ln k(y | u)`.
    pub fn ln_eval(&self, obs: &Observation, u: f64) -> Result<f64> {
        self.validate()?;
        self.check_observation(obs)?;
        let ok = match self {
            Kernel::Poisson => u >= 0.0,
            Kernel::Binomial => (0.0..=1.0).contains(&u),
            Kernel::GaussScale => u > 0.0,
            _ => u.is_finite(),
        };
        if !ok {
            return Err(Error::Domain(format!(
                "latent value {u} outside the {:?} kernel's domain",
                self.family()
            )));
        }
        let prepared = Prepared::new(self, obs);
        Ok(prepared.ln_eval(self, obs, u))
    }

    /// `k(y | u)`.
    pub fn eval(&self, obs: &Observation, u: f64) -> Result<f64> {
        self.ln_eval(obs, u).map(math::exp)
    }

    /// `ln k(y | u_j)` for every grid node.
    pub fn ln_row(&self, obs: &Observation, grid: &MixingGrid) -> Result<Vec<f64>> {
        let mut out = alloc::vec![0.0; grid.len()];
        self.fill_ln_row(obs, grid.nodes(), &mut out)?;
        Ok(out)
    }

    /// Fill `out` with `ln k(y | u_j)`. Nodes are assumed to have passed
    /// [`Kernel::check_grid`].
    pub fn fill_ln_row(&self, obs: &Observation, nodes: &[f64], out: &mut [f64]) -> Result<()> {
        self.validate()?;
        self.check_observation(obs)?;
        let prepared = Prepared::new(self, obs);
        for (o, &u) in out.iter_mut().zip(nodes) {
            *o = prepared.ln_eval(self, obs, u);
        }
        Ok(())
    }

    /// Fill `out` with `k(y | u_j) / max_j k(y | u_j)` and return `ln max_j k`.
    ///
    /// Returns `-inf` (and leaves `out` zeroed) when the kernel vanishes on
    /// every node.
    pub fn fill_scaled_row(&self, obs: &Observation, nodes: &[f64], out: &mut [f64]) -> Result<f64> {
        self.fill_ln_row(obs, nodes, out)?;
        let shift = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if shift == f64::NEG_INFINITY {
            out.iter_mut().for_each(|o| *o = 0.0);
            return Ok(shift);
        }
        out.iter_mut().for_each(|o| *o = math::exp(*o - shift));
        Ok(shift)
    }
}

/// Per-observation constants hoisted out of the node loop.
struct Prepared {
    ln_norm: f64,
}

impl Prepared {
    fn new(kernel: &Kernel, obs: &Observation) -> Self {
        let ln_norm = match *kernel {
            Kernel::Poisson => -math::ln_gamma(obs.y + 1.0),
            Kernel::Binomial => math::ln_choose(obs.trials.unwrap_or(0), obs.y as u64),
            Kernel::GaussLocation { sigma } | Kernel::TwoGroups { sigma, .. } => -math::ln(sigma) - math::LN_SQRT_2PI,
            Kernel::GaussScale => -math::LN_SQRT_2PI,
        };
        Prepared { ln_norm }
    }

    #[inline]
    fn ln_eval(&self, kernel: &Kernel, obs: &Observation, u: f64) -> f64 {
        let y = obs.y;
        match *kernel {
            Kernel::Poisson => {
                if u == 0.0 {
                    return if y == 0.0 { 0.0 } else { f64::NEG_INFINITY };
                }
                y * math::ln(u) - u + self.ln_norm
            }
            Kernel::Binomial => {
                let n = obs.trials.unwrap_or(0) as f64;
                let succ = if y == 0.0 { 0.0 } else { y * math::ln(u) };
                let fail = if y == n { 0.0 } else { (n - y) * libm::log1p(-u) };
                succ + fail + self.ln_norm
            }
            Kernel::GaussLocation { sigma } => {
                let z = (y - u) / sigma;
                -0.5 * z * z + self.ln_norm
            }
            Kernel::TwoGroups { mu, tau, sigma } => {
                let z = (y - mu - tau * sigma * u) / sigma;
                -0.5 * z * z + self.ln_norm
            }
            Kernel::GaussScale => {
                let z = y / u;
                -0.5 * z * z - math::ln(u) + self.ln_norm
            }
        }
    }
}

/// `ln f_p(y) = ln ∫ k(y | u) p(u) ν(du)` by grid quadrature.
pub fn ln_mixture_density(kernel: &Kernel, p: &MixingDensity, obs: &Observation) -> Result<f64> {
    let grid = p.grid();
    kernel.check_grid(grid)?;
    let mut row = alloc::vec![0.0; grid.len()];
    let shift = kernel.fill_scaled_row(obs, grid.nodes(), &mut row)?;
    Ok(shift + math::ln(weighted_sum(&row, p.values(), grid.weights())))
}

/// `f_p(y) = ∫ k(y | u) p(u) ν(du)` by grid quadrature.
pub fn mixture_density(kernel: &Kernel, p: &MixingDensity, obs: &Observation) -> Result<f64> {
    ln_mixture_density(kernel, p, obs).map(math::exp)
}

#[inline]
pub(crate) fn weighted_sum(row: &[f64], values: &[f64], weights: &[f64]) -> f64 {
    row.iter().zip(values).zip(weights).map(|((k, p), w)| k * p * w).sum()
}

/// Kernel family without its structural parameter, as chosen on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Poisson,
    Gauss,
    Binomial,
    Scale,
    TwoGroups,
}

impl KernelFamily {
    /// Number of structural parameters.
    pub fn theta_dim(self) -> usize {
        match self {
            KernelFamily::Gauss => 1,
            KernelFamily::TwoGroups => 3,
            _ => 0,
        }
    }

    /// Names of the structural parameters, in order.
    pub fn theta_names(self) -> &'static [&'static str] {
        match self {
            KernelFamily::Gauss => &["sigma"],
            KernelFamily::TwoGroups => &["mu", "tau", "sigma"],
            _ => &[],
        }
    }

    pub fn with_theta(self, theta: &[f64]) -> Result<Kernel> {
        if theta.len() != self.theta_dim() {
            return Err(Error::Shape {
                expected: self.theta_dim(),
                got: theta.len(),
            });
        }
        let k = match self {
            KernelFamily::Poisson => Kernel::Poisson,
            KernelFamily::Gauss => Kernel::GaussLocation { sigma: theta[0] },
            KernelFamily::Binomial => Kernel::Binomial,
            KernelFamily::Scale => Kernel::GaussScale,
            KernelFamily::TwoGroups => Kernel::TwoGroups {
                mu: theta[0],
                tau: theta[1],
                sigma: theta[2],
            },
        };
        k.validate()?;
        Ok(k)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Poisson => "poisson",
            KernelFamily::Gauss => "gauss",
            KernelFamily::Binomial => "binom",
            KernelFamily::Scale => "scale",
            KernelFamily::TwoGroups => "twogroups",
        }
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(KernelFamily::Poisson),
            "gauss" | "gaussian" => Ok(KernelFamily::Gauss),
            "binom" | "binomial" => Ok(KernelFamily::Binomial),
            "scale" => Ok(KernelFamily::Scale),
            "twogroups" => Ok(KernelFamily::TwoGroups),
            other => Err(Error::Parameter(format!("unknown kernel `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::QuadratureRule;
    use alloc::sync::Arc;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const PHI0: f64 = 0.398_942_280_401_432_7;

    #[test]
    fn kernel_eval_examples() {
        let e1 = core::f64::consts::E.recip();
        assert_relative_eq!(
            Kernel::Poisson.eval(&Observation::new(0.0), 1.0).unwrap(),
            e1,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            Kernel::gauss(1.0).unwrap().eval(&Observation::new(3.2), 3.2).unwrap(),
            PHI0,
            epsilon = 1e-15
        );
        // 3 * 0.5^3
        assert_relative_eq!(
            Kernel::Binomial.eval(&Observation::binomial(2, 3), 0.5).unwrap(),
            0.375,
            epsilon = 1e-14
        );
    }

    #[test]
    fn binomial_boundaries() {
        assert_eq!(Kernel::Binomial.eval(&Observation::binomial(0, 4), 0.0).unwrap(), 1.0);
        assert_eq!(Kernel::Binomial.eval(&Observation::binomial(4, 4), 1.0).unwrap(), 1.0);
        assert_eq!(Kernel::Binomial.eval(&Observation::binomial(2, 4), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            Kernel::Poisson.eval(&Observation::new(-1.0), 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            Kernel::Poisson.eval(&Observation::new(1.5), 1.0),
            Err(Error::Domain(_))
        ));
        assert!(Kernel::Binomial.eval(&Observation::binomial(4, 3), 0.5).is_err());
        assert!(Kernel::Binomial.eval(&Observation::new(1.0), 0.5).is_err());
        assert!(Kernel::GaussScale.eval(&Observation::new(1.0), 0.0).is_err());
        assert!(Kernel::gauss(0.0).is_err());
        assert!(Kernel::gauss(1.0)
            .unwrap()
            .eval(&Observation::new(f64::NAN), 0.0)
            .is_err());
    }

    #[test]
    fn two_groups_kernel_examples() {
        let k = Kernel::two_groups(0.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(k.eval(&Observation::new(0.0), 0.0).unwrap(), PHI0, epsilon = 1e-15);
        let k = Kernel::two_groups(0.0, 2.0, 1.0).unwrap();
        assert_relative_eq!(k.eval(&Observation::new(2.0), 1.0).unwrap(), PHI0, epsilon = 1e-15);
        // the atom reproduces the empirical null N(0.07, 0.74^2)
        let k = Kernel::two_groups(0.07, 3.0, 0.74).unwrap();
        for y in [-2.0, 0.0, 0.07, 1.3] {
            assert_relative_eq!(
                k.eval(&Observation::new(y), 0.0).unwrap(),
                math::normal_pdf(y, 0.07, 0.74),
                max_relative = 1e-14
            );
        }
        assert!(matches!(Kernel::two_groups(0.0, 1.0, -1.0), Err(Error::Parameter(_))));
        assert!(Kernel::two_groups(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn far_tail_rows_do_not_underflow() {
        let k = Kernel::gauss(0.2).unwrap();
        let grid = MixingGrid::build(-1.0, 1.0, 50, QuadratureRule::Midpoint, &[]).unwrap();
        let mut row = vec![0.0; grid.len()];
        let shift = k
            .fill_scaled_row(&Observation::new(40.0), grid.nodes(), &mut row)
            .unwrap();
        assert!(shift.is_finite() && shift < -700.0);
        assert_eq!(row.iter().copied().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn mixture_density_examples() {
        let atoms = Arc::new(MixingGrid::atoms(&[1.0, 2.0]).unwrap());
        let p = atoms.normalize(vec![0.5, 0.5]).unwrap();
        let f = mixture_density(&Kernel::Poisson, &p, &Observation::new(0.0)).unwrap();
        let expected = 0.5 * (math::exp(-1.0) + math::exp(-2.0));
        assert_relative_eq!(f, expected, epsilon = 1e-15);
        assert!((f - 0.251607).abs() < 1e-6);

        let point = MixingDensity::point_mass(Arc::clone(&atoms), 1).unwrap();
        let f = mixture_density(&Kernel::Poisson, &point, &Observation::new(3.0)).unwrap();
        assert_eq!(f, Kernel::Poisson.eval(&Observation::new(3.0), 2.0).unwrap());

        let grid = Arc::new(MixingGrid::build(5.0, 40.0, 400, QuadratureRule::Midpoint, &[]).unwrap());
        let flat = MixingDensity::uniform(grid);
        let f = mixture_density(&Kernel::gauss(1.0).unwrap(), &flat, &Observation::new(22.5)).unwrap();
        assert!((f - 1.0 / 35.0).abs() < 1e-4);
    }

    fn mass_over_y(kernel: &Kernel, u: f64, trials: Option<u64>) -> f64 {
        match kernel {
            Kernel::Poisson => (0..200)
                .map(|y| kernel.eval(&Observation::new(y as f64), u).unwrap())
                .sum(),
            Kernel::Binomial => {
                let n = trials.unwrap();
                (0..=n)
                    .map(|y| kernel.eval(&Observation::binomial(y, n), u).unwrap())
                    .sum()
            }
            _ => {
                // trapezoid over a wide y range
                let (lo, hi, m) = (-60.0, 60.0, 24001);
                let h = (hi - lo) / (m - 1) as f64;
                (0..m)
                    .map(|j| {
                        let w = if j == 0 || j == m - 1 { 0.5 * h } else { h };
                        w * kernel.eval(&Observation::new(lo + j as f64 * h), u).unwrap()
                    })
                    .sum()
            }
        }
    }

    #[test]
    fn every_family_is_a_density_in_y() {
        for u in [0.05, 1.0, 7.5, 30.0] {
            assert!((mass_over_y(&Kernel::Poisson, u, None) - 1.0).abs() < 1e-6);
        }
        for u in [0.0, 0.03, 0.5, 0.97, 1.0] {
            assert!((mass_over_y(&Kernel::Binomial, u, Some(17)) - 1.0).abs() < 1e-6);
        }
        for u in [-3.0, 0.0, 2.5] {
            assert!((mass_over_y(&Kernel::gauss(0.8).unwrap(), u, None) - 1.0).abs() < 1e-6);
            assert!((mass_over_y(&Kernel::two_groups(0.3, 4.0, 1.2).unwrap(), u / 3.0, None) - 1.0).abs() < 1e-6);
        }
        for u in [0.1, 1.0, 9.0] {
            assert!((mass_over_y(&Kernel::GaussScale, u, None) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn family_parsing_and_theta() {
        for name in ["poisson", "gauss", "binom", "scale", "twogroups"] {
            let fam: KernelFamily = name.parse().unwrap();
            assert_eq!(fam.name(), name);
        }
        assert!("cauchy".parse::<KernelFamily>().is_err());
        let k = KernelFamily::TwoGroups.with_theta(&[0.1, 2.0, 0.9]).unwrap();
        assert_eq!(k.theta(), vec![0.1, 2.0, 0.9]);
        assert!(KernelFamily::Gauss.with_theta(&[]).is_err());
    }

    proptest! {
        #[test]
        fn mixture_is_linear_and_bounded(
            a in prop::collection::vec(0.01f64..1.0, 12),
            b in prop::collection::vec(0.01f64..1.0, 12),
            alpha in 0.0f64..1.0,
            y in -4.0f64..4.0,
        ) {
            let grid = Arc::new(MixingGrid::build(-3.0, 3.0, 12, QuadratureRule::Midpoint, &[]).unwrap());
            let k = Kernel::gauss(0.7).unwrap();
            let obs = Observation::new(y);
            let p = grid.normalize(a).unwrap();
            let q = grid.normalize(b).unwrap();
            let mix: Vec<f64> = p.values().iter().zip(q.values()).map(|(x, z)| alpha * x + (1.0 - alpha) * z).collect();
            let pq = grid.normalize(mix).unwrap();
            let lhs = mixture_density(&k, &pq, &obs).unwrap();
            let rhs = alpha * mixture_density(&k, &p, &obs).unwrap()
                + (1.0 - alpha) * mixture_density(&k, &q, &obs).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);

            let row: Vec<f64> = grid.nodes().iter().map(|&u| k.eval(&obs, u).unwrap()).collect();
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(0.0, f64::max);
            prop_assert!(lhs >= lo * (1.0 - 1e-12) && lhs <= hi * (1.0 + 1e-12));
        }
    }
}
