//! Seeded synthetic mixtures and PR convergence curves.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::grid::MixingDensity;
use crate::kernel::{Kernel, Observation};
use crate::kl::{kl_divergence, YQuadrature};
use crate::linalg::Matrix;
use crate::math;
use crate::perm;
use crate::pr::PrRecursion;
use crate::schedule::WeightSchedule;

/// Nodes used to integrate continuous mixing laws when evaluating `f*`.
const TRUTH_NODES: usize = 2000;

/// Law of the latent variable `U`.
#[derive(Debug, Clone, PartialEq)]
pub enum MixingSpec {
    /// `(location, probability)` pairs.
    Atoms(Vec<(f64, f64)>),
    Uniform {
        lo: f64,
        hi: f64,
    },
    Beta {
        a: f64,
        b: f64,
    },
}

impl MixingSpec {
    fn validate(&self) -> Result<()> {
        match self {
            MixingSpec::Atoms(a) => {
                let total: f64 = a.iter().map(|p| p.1).sum();
                if a.is_empty() || a.iter().any(|p| !(p.1 >= 0.0) || !p.0.is_finite()) || (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Parameter(
                        "atom probabilities must be nonnegative and sum to 1".into(),
                    ));
                }
            }
            MixingSpec::Uniform { lo, hi } => {
                if !(lo < hi) {
                    return Err(Error::Parameter("uniform mixing law needs lo < hi".into()));
                }
            }
            MixingSpec::Beta { a, b } => {
                if !(*a > 0.0 && *b > 0.0) {
                    return Err(Error::Parameter("beta mixing law needs positive shapes".into()));
                }
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            MixingSpec::Atoms(atoms) => {
                let r: f64 = rng.random();
                let mut acc = 0.0;
                for &(u, p) in atoms {
                    acc += p;
                    if r < acc {
                        return u;
                    }
                }
                atoms[atoms.len() - 1].0
            }
            MixingSpec::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            MixingSpec::Beta { a, b } => Beta::new(*a, *b).expect("validated").sample(rng),
        }
    }

    /// Quadrature representation as `(u, mass)` pairs.
    fn discretize(&self) -> Vec<(f64, f64)> {
        match self {
            MixingSpec::Atoms(a) => a.clone(),
            MixingSpec::Uniform { lo, hi } => {
                let h = (hi - lo) / TRUTH_NODES as f64;
                (0..TRUTH_NODES)
                    .map(|j| (lo + (j as f64 + 0.5) * h, 1.0 / TRUTH_NODES as f64))
                    .collect()
            }
            MixingSpec::Beta { a, b } => {
                let h = 1.0 / TRUTH_NODES as f64;
                let lnb = math::ln_gamma(*a) + math::ln_gamma(*b) - math::ln_gamma(a + b);
                (0..TRUTH_NODES)
                    .map(|j| {
                        let u = (j as f64 + 0.5) * h;
                        (
                            u,
                            h * math::exp((a - 1.0) * math::ln(u) + (b - 1.0) * libm::log1p(-u) - lnb),
                        )
                    })
                    .collect()
            }
        }
    }

    fn range(&self) -> (f64, f64) {
        match self {
            MixingSpec::Atoms(a) => a
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.0), h.max(p.0))),
            MixingSpec::Uniform { lo, hi } => (*lo, *hi),
            MixingSpec::Beta { .. } => (0.0, 1.0),
        }
    }
}

/// Binomial trial counts for simulated observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialsSpec {
    Fixed(u64),
    /// Uniform on `lo..=hi`.
    Range {
        lo: u64,
        hi: u64,
    },
}

/// Data-generating density `f*`.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Mixture {
        mixing: MixingSpec,
        kernel: Kernel,
    },
    /// A normal law that need not be a member of the fitted mixture family.
    Normal {
        mean: f64,
        sd: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub name: String,
    pub truth: Truth,
    pub trials: Option<TrialsSpec>,
    pub n: usize,
    pub seed: u64,
}

/// Registered scenario names with one-line descriptions.
pub const SCENARIOS: &[(&str, &str)] = &[
    ("poisson-2atom", "0.5 Pois(1) + 0.5 Pois(5)"),
    ("poisson-point", "Pois(3), a point-mass mixing law"),
    (
        "poisson-zip",
        "zero-heavy Poisson mixture with atoms at 0.1, 1.5, 4 and 8",
    ),
    ("poisson-uniform", "Poisson with rates uniform on [1, 9]"),
    ("gauss-point", "N(0, 1) as a point-mass location mixture"),
    ("gauss-bimodal", "0.5 N(-2, 1) + 0.5 N(2, 1)"),
    ("gauss-narrow", "N(0, 0.5²), outside the N(u, 1) location family"),
    (
        "binomial-beta",
        "Binomial(N, U) with U ~ Beta(8, 14) and N uniform on 1..=60",
    ),
    ("twogroups", "0.9 N(0, 1) + 0.05 N(3, 1) + 0.05 N(-3, 1)"),
    ("twogroups-null", "N(0, 1) z-scores only"),
];

impl SimScenario {
    pub fn new(name: &str, truth: Truth, n: usize, seed: u64) -> Result<Self> {
        let s = SimScenario {
            name: name.into(),
            truth,
            trials: None,
            n,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// Look up a registered scenario.
    pub fn named(name: &str, n: usize, seed: u64) -> Result<Self> {
        let gauss = Kernel::GaussLocation { sigma: 1.0 };
        let atoms = |a: &[(f64, f64)]| MixingSpec::Atoms(a.to_vec());
        let (truth, trials) = match name {
            "poisson-2atom" => (
                Truth::Mixture {
                    mixing: atoms(&[(1.0, 0.5), (5.0, 0.5)]),
                    kernel: Kernel::Poisson,
                },
                None,
            ),
            "poisson-point" => (
                Truth::Mixture {
                    mixing: atoms(&[(3.0, 1.0)]),
                    kernel: Kernel::Poisson,
                },
                None,
            ),
            "poisson-zip" => (
                Truth::Mixture {
                    mixing: atoms(&[(0.1, 0.4), (1.5, 0.3), (4.0, 0.2), (8.0, 0.1)]),
                    kernel: Kernel::Poisson,
                },
                None,
            ),
            "poisson-uniform" => (
                Truth::Mixture {
                    mixing: MixingSpec::Uniform { lo: 1.0, hi: 9.0 },
                    kernel: Kernel::Poisson,
                },
                None,
            ),
            "gauss-point" => (
                Truth::Mixture {
                    mixing: atoms(&[(0.0, 1.0)]),
                    kernel: gauss,
                },
                None,
            ),
            "gauss-bimodal" => (
                Truth::Mixture {
                    mixing: atoms(&[(-2.0, 0.5), (2.0, 0.5)]),
                    kernel: gauss,
                },
                None,
            ),
            "gauss-narrow" => (Truth::Normal { mean: 0.0, sd: 0.5 }, None),
            "binomial-beta" => (
                Truth::Mixture {
                    mixing: MixingSpec::Beta { a: 8.0, b: 14.0 },
                    kernel: Kernel::Binomial,
                },
                Some(TrialsSpec::Range { lo: 1, hi: 60 }),
            ),
            "twogroups" => (
                Truth::Mixture {
                    mixing: atoms(&[(0.0, 0.9), (3.0, 0.05), (-3.0, 0.05)]),
                    kernel: gauss,
                },
                None,
            ),
            "twogroups-null" => (
                Truth::Mixture {
                    mixing: atoms(&[(0.0, 1.0)]),
                    kernel: gauss,
                },
                None,
            ),
            other => return Err(Error::Parameter(alloc::format!("unknown scenario `{other}`"))),
        };
        let s = SimScenario {
            name: name.into(),
            truth,
            trials,
            n,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_trials(mut self, trials: TrialsSpec) -> Self {
        self.trials = Some(trials);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Parameter("scenario needs n >= 1".into()));
        }
        match &self.truth {
            Truth::Mixture { mixing, kernel } => {
                mixing.validate()?;
                kernel.validate()?;
                if matches!(kernel, Kernel::Binomial) && self.trials.is_none() {
                    return Err(Error::Parameter("binomial scenario needs a trials spec".into()));
                }
                if matches!(kernel, Kernel::TwoGroups { .. }) {
                    return Err(Error::Parameter(
                        "simulate two-groups data with a location kernel".into(),
                    ));
                }
            }
            Truth::Normal { mean, sd } => {
                if !(mean.is_finite() && *sd > 0.0) {
                    return Err(Error::Parameter("normal truth needs a positive sd".into()));
                }
            }
        }
        Ok(())
    }

    pub fn is_discrete(&self) -> bool {
        matches!(&self.truth, Truth::Mixture { kernel, .. } if kernel.is_discrete())
    }

    /// True density `f*(y)`. Binomial truths use the fixed trial count, or
    /// the upper end of a trial range.
    pub fn true_density(&self, y: f64) -> f64 {
        match &self.truth {
            Truth::Normal { mean, sd } => math::normal_pdf(y, *mean, *sd),
            Truth::Mixture { mixing, kernel } => {
                let obs = self.probe(y);
                mixing
                    .discretize()
                    .iter()
                    .map(|&(u, q)| {
                        if q > 0.0 {
                            q * kernel.eval(&obs, u).unwrap_or(0.0)
                        } else {
                            0.0
                        }
                    })
                    .sum()
            }
        }
    }

    fn probe(&self, y: f64) -> Observation {
        match self.trials {
            Some(TrialsSpec::Fixed(t)) | Some(TrialsSpec::Range { hi: t, .. }) => Observation { y, trials: Some(t) },
            None => Observation::new(y),
        }
    }

    /// Quadrature over `𝕐` adequate for KL against `f*`.
    pub fn y_quadrature(&self) -> YQuadrature {
        match &self.truth {
            Truth::Normal { mean, sd } => YQuadrature::continuous(*mean, *sd),
            Truth::Mixture { mixing, kernel } => match *kernel {
                Kernel::Poisson => YQuadrature::counts_for(|y| self.true_density(y), 1e-12, 10_000),
                Kernel::Binomial => match self.probe(0.0).trials {
                    Some(t) => YQuadrature::Counts { upto: t },
                    None => YQuadrature::Counts { upto: 0 },
                },
                Kernel::GaussLocation { sigma } => {
                    let (lo, hi) = mixing.range();
                    YQuadrature::Trapezoid {
                        lo: lo - 8.0 * sigma,
                        hi: hi + 8.0 * sigma,
                        m: 1000,
                    }
                }
                Kernel::GaussScale => {
                    let (_, hi) = mixing.range();
                    YQuadrature::Trapezoid {
                        lo: -8.0 * hi,
                        hi: 8.0 * hi,
                        m: 1000,
                    }
                }
                Kernel::TwoGroups { .. } => unreachable!("rejected by validate"),
            },
        }
    }

    /// Mean of `f*`, for moment checks.
    pub fn true_mean(&self) -> f64 {
        match &self.truth {
            Truth::Normal { mean, .. } => *mean,
            Truth::Mixture { mixing, kernel } => {
                let eu: f64 = mixing.discretize().iter().map(|(u, q)| u * q).sum();
                match kernel {
                    Kernel::GaussScale => 0.0,
                    Kernel::Binomial => eu * self.mean_trials(),
                    _ => eu,
                }
            }
        }
    }

    /// Variance of `f*`, for moment checks.
    pub fn true_variance(&self) -> f64 {
        match &self.truth {
            Truth::Normal { sd, .. } => sd * sd,
            Truth::Mixture { mixing, kernel } => {
                let d = mixing.discretize();
                let eu: f64 = d.iter().map(|(u, q)| u * q).sum();
                let eu2: f64 = d.iter().map(|(u, q)| u * u * q).sum();
                let var_u = eu2 - eu * eu;
                match *kernel {
                    Kernel::Poisson => eu + var_u,
                    Kernel::GaussLocation { sigma } => sigma * sigma + var_u,
                    Kernel::GaussScale => eu2,
                    Kernel::Binomial => {
                        let (en, en2) = self.trial_moments();
                        // E[N U(1-U)] + Var(N U)
                        en * (eu - eu2) + en2 * eu2 - en * en * eu * eu
                    }
                    Kernel::TwoGroups { .. } => f64::NAN,
                }
            }
        }
    }

    fn mean_trials(&self) -> f64 {
        self.trial_moments().0
    }

    fn trial_moments(&self) -> (f64, f64) {
        match self.trials {
            Some(TrialsSpec::Fixed(t)) => (t as f64, (t * t) as f64),
            Some(TrialsSpec::Range { lo, hi }) => {
                let k = (hi - lo + 1) as f64;
                let s1: f64 = (lo..=hi).map(|t| t as f64).sum();
                let s2: f64 = (lo..=hi).map(|t| (t * t) as f64).sum();
                (s1 / k, s2 / k)
            }
            None => (0.0, 0.0),
        }
    }
}

/// `n` iid draws from the scenario: `U ~ p*`, then `Y | U ~ k(· | U)`.
pub fn simulate(scenario: &SimScenario) -> Vec<Observation> {
    simulate_latent(scenario).into_iter().map(|d| d.1).collect()
}

/// Like [`simulate`], also returning each latent `U` (`None` for truths
/// that are not mixtures).
pub fn simulate_latent(scenario: &SimScenario) -> Vec<(Option<f64>, Observation)> {
    let mut rng = perm::rng(scenario.seed);
    (0..scenario.n).map(|_| draw(scenario, &mut rng)).collect()
}

fn draw<R: Rng + ?Sized>(s: &SimScenario, rng: &mut R) -> (Option<f64>, Observation) {
    match &s.truth {
        Truth::Normal { mean, sd } => (
            None,
            Observation::new(Normal::new(*mean, *sd).expect("validated").sample(rng)),
        ),
        Truth::Mixture { mixing, kernel } => {
            let u = mixing.sample(rng);
            let obs = match *kernel {
                Kernel::Poisson => {
                    let y = if u > 0.0 {
                        Poisson::new(u).expect("positive rate").sample(rng)
                    } else {
                        0.0
                    };
                    Observation::new(y)
                }
                Kernel::Binomial => {
                    let trials = match s.trials.expect("validated") {
                        TrialsSpec::Fixed(t) => t,
                        TrialsSpec::Range { lo, hi } => rng.random_range(lo..=hi),
                    };
                    let y = Binomial::new(trials, u.clamp(0.0, 1.0))
                        .expect("probability in [0, 1]")
                        .sample(rng);
                    Observation::binomial(y, trials)
                }
                Kernel::GaussLocation { sigma } => Observation::new(u + sigma * standard_normal(rng)),
                Kernel::GaussScale => Observation::new(u * standard_normal(rng)),
                Kernel::TwoGroups { .. } => unreachable!("rejected by validate"),
            };
            (Some(u), obs)
        }
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// PR configuration used by [`convergence_curve`].
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub kernel: Kernel,
    pub p0: MixingDensity,
    pub schedule: WeightSchedule,
}

/// `(n, KL(f*, f_n))` at each checkpoint of a single PR pass over simulated
/// data of length `max(checkpoints)`. A checkpoint of 0 reports `f_0`.
pub fn convergence_curve(
    scenario: &SimScenario,
    est: &EstimatorSpec,
    checkpoints: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("checkpoints must be strictly increasing".into()));
    }
    let n_max = checkpoints.last().copied().unwrap_or(0);
    let mut s = scenario.clone();
    s.n = n_max.max(1);
    let data = simulate(&s);
    let yq = scenario.y_quadrature();
    let probe = scenario.probe(0.0).trials;
    let kl_of = |p: &MixingDensity| -> f64 {
        kl_divergence(
            |y| scenario.true_density(y),
            |y| crate::kernel::mixture_density(&est.kernel, p, &Observation { y, trials: probe }).unwrap_or(0.0),
            &yq,
        )
    };
    let mut rec = PrRecursion::new(est.kernel, &est.p0)?;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut cp = checkpoints.iter().peekable();
    if cp.peek() == Some(&&0) {
        out.push((0, kl_of(&est.p0)));
        cp.next();
    }
    for (i, obs) in data.iter().enumerate() {
        let step = i + 1;
        rec.step(obs, est.schedule.weight(step), i)?;
        if cp.peek() == Some(&&step) {
            out.push((step, kl_of(&rec.density())));
            cp.next();
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln KL` against `ln n`, skipping `n = 0` and
/// non-positive KL values.
pub fn loglog_slope(curve: &[(usize, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|(n, k)| *n > 0 && *k > 0.0 && k.is_finite())
        .map(|&(n, k)| (math::ln(n as f64), math::ln(k)))
        .collect();
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / m, sy / m);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in &pts {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Seeds `base, base + 1, ..., base + reps - 1`.
pub fn seed_ladder(base: u64, reps: usize) -> Vec<u64> {
    (0..reps as u64).map(|k| base.wrapping_add(k)).collect()
}

/// Run `f` once per seed of the ladder, in seed order.
pub fn replicate<T>(base: u64, reps: usize, f: impl FnMut(u64) -> T) -> Vec<T> {
    seed_ladder(base, reps).into_iter().map(f).collect()
}

/// Simulated regression data.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub beta: Vec<f64>,
    /// Which observations received contaminated errors.
    pub outlier: Vec<bool>,
}

/// Intercept plus `beta.len() - 1` standard normal predictors, with
/// N(0, 1) errors replaced by N(0, `outlier_sd`²) with probability
/// `outlier_frac`.
pub fn simulate_regression(
    n: usize,
    beta: &[f64],
    outlier_frac: f64,
    outlier_sd: f64,
    seed: u64,
) -> Result<RegressionData> {
    if beta.is_empty() || n <= beta.len() {
        return Err(Error::Parameter("need n > d >= 1".into()));
    }
    if !(0.0..=1.0).contains(&outlier_frac) || !(outlier_sd > 0.0) {
        return Err(Error::Parameter(
            "outlier fraction must be in [0, 1] and sd positive".into(),
        ));
    }
    let d = beta.len();
    let mut rng = perm::rng(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut outlier = Vec::with_capacity(n);
    for _ in 0..n {
        let start = data.len();
        data.push(1.0);
        for _ in 1..d {
            data.push(standard_normal(&mut rng));
        }
        let mean: f64 = data[start..].iter().zip(beta).map(|(a, b)| a * b).sum();
        let bad = rng.random::<f64>() < outlier_frac;
        let e = standard_normal(&mut rng) * if bad { outlier_sd } else { 1.0 };
        y.push(mean + e);
        outlier.push(bad);
    }
    Ok(RegressionData {
        x: Matrix::from_row_major(n, d, data)?,
        y,
        beta: beta.to_vec(),
        outlier,
    })
}
