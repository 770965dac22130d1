//! PR marginal likelihood `L_n(θ) = Π f_{i-1,θ}(Y_i)` and its maximization
//! over a box of structural parameters.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::MixingDensity;
use crate::kernel::{Kernel, KernelFamily, Observation};
use crate::perm;
use crate::pr::{self, PrFit, PrRecursion};
use crate::schedule::WeightSchedule;

/// Search box for θ. A coordinate with `lower == upper` is held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) || l > u {
                return Err(Error::Parameter(format!(
                    "theta box coordinate {i}: [{l}, {u}] is empty"
                )));
            }
        }
        Ok(ThetaBox { lower, upper })
    }

    /// Single-coordinate box.
    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::new(alloc::vec![lower], alloc::vec![upper])
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

    pub fn is_fixed(&self, i: usize) -> bool {
        self.lower[i] == self.upper[i]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((t, l), u)| *l <= *t && *t <= *u)
    }
}

/// Tuning of [`prml_optimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct PrmlOptions {
    /// Points in the initial scan of each free coordinate.
    pub scan_points: usize,
    /// Stop refining a coordinate once its bracket is narrower than this.
    pub tol: f64,
    /// Hard cap on objective evaluations.
    pub max_evals: usize,
    /// Data orderings averaged inside the objective.
    pub n_perm: usize,
    pub seed: u64,
}

impl Default for PrmlOptions {
    fn default() -> Self {
        PrmlOptions {
            scan_points: 20,
            tol: 1e-3,
            max_evals: 200,
            n_perm: 1,
            seed: 0,
        }
    }
}

/// One objective evaluation on the optimizer's path.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub theta: Vec<f64>,
    /// `ln L_n(θ)`; `-inf` when some predictive density was zero.
    pub log_lik: f64,
    /// Best value seen so far, including this entry.
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrmlResult {
    pub theta: Vec<f64>,
    pub log_lik: f64,
    /// PR fit at `theta`, averaged over the same orderings as the objective.
    pub fit: PrFit,
    pub trace: Vec<TraceEntry>,
}

/// `ln L_n(θ)` for the data in its given order.
pub fn prml_loglik(
    data: &[Observation],
    family: KernelFamily,
    theta: &[f64],
    p0: &MixingDensity,
    schedule: &WeightSchedule,
) -> Result<f64> {
    let kernel = family.with_theta(theta)?;
    let order: Vec<usize> = (0..data.len()).collect();
    loglik_for_order(data, &order, &kernel, p0, schedule)
}

/// Mean of `ln L_n(θ)` over the given orderings.
pub fn prml_loglik_averaged(
    data: &[Observation],
    family: KernelFamily,
    theta: &[f64],
    p0: &MixingDensity,
    schedule: &WeightSchedule,
    orders: &[Vec<usize>],
) -> Result<f64> {
    if orders.is_empty() {
        return Err(Error::Parameter("need at least one ordering".into()));
    }
    let kernel = family.with_theta(theta)?;
    let mut total = 0.0;
    for order in orders {
        total += loglik_for_order(data, order, &kernel, p0, schedule)?;
    }
    Ok(total / orders.len() as f64)
}

fn loglik_for_order(
    data: &[Observation],
    order: &[usize],
    kernel: &Kernel,
    p0: &MixingDensity,
    schedule: &WeightSchedule,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("PR marginal likelihood needs data".into()));
    }
    let mut rec = PrRecursion::new(*kernel, p0)?;
    let mut total = 0.0;
    for (i, &idx) in order.iter().enumerate() {
        total += rec.step(&data[idx], schedule.weight(i + 1), idx)?;
    }
    Ok(total)
}

struct Search<'a> {
    data: &'a [Observation],
    family: KernelFamily,
    p0: &'a MixingDensity,
    schedule: &'a WeightSchedule,
    orders: Vec<Vec<usize>>,
    max_evals: usize,
    trace: Vec<TraceEntry>,
    best_theta: Vec<f64>,
    best: f64,
}

impl Search<'_> {
    fn exhausted(&self) -> bool {
        self.trace.len() >= self.max_evals
    }

    fn eval(&mut self, theta: &[f64]) -> Result<f64> {
        let value = match prml_loglik_averaged(self.data, self.family, theta, self.p0, self.schedule, &self.orders) {
            Ok(v) if v.is_nan() => f64::NEG_INFINITY,
            Ok(v) => v,
            Err(Error::ZeroPredictive { .. }) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        if value > self.best || self.trace.is_empty() {
            if value > self.best {
                self.best = value;
            }
            self.best_theta = theta.to_vec();
        }
        self.trace.push(TraceEntry {
            theta: theta.to_vec(),
            log_lik: value,
            best: self.best,
        });
        Ok(value)
    }

    /// Evaluate `theta` with coordinate `c` replaced by `x`.
    fn eval_at(&mut self, base: &[f64], c: usize, x: f64) -> Result<f64> {
        let mut t = base.to_vec();
        t[c] = x;
        self.eval(&t)
    }

    /// Golden-section refinement of coordinate `c` on `[a, b]`.
    fn golden(&mut self, c: usize, mut a: f64, mut b: f64, tol: f64) -> Result<()> {
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let base = self.best_theta.clone();
        let mut x1 = b - INV_PHI * (b - a);
        let mut x2 = a + INV_PHI * (b - a);
        if self.exhausted() {
            return Ok(());
        }
        let mut f1 = self.eval_at(&base, c, x1)?;
        if self.exhausted() {
            return Ok(());
        }
        let mut f2 = self.eval_at(&base, c, x2)?;
        while b - a > tol && !self.exhausted() {
            if f1 >= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - INV_PHI * (b - a);
                f1 = self.eval_at(&base, c, x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + INV_PHI * (b - a);
                f2 = self.eval_at(&base, c, x2)?;
            }
        }
        Ok(())
    }
}

/// Maximize `ln L_n(θ)` over `bounds`.
///
/// Each free coordinate is first scanned on `scan_points` equally spaced
/// values, then refined by golden-section search inside the bracket around
/// the best scan point. With several free coordinates this is repeated
/// cyclically (later cycles refine a bracket of one scan spacing around the
/// incumbent) until no coordinate moves by more than `tol` or the evaluation
/// budget runs out. The same data orderings are reused for every θ so the
/// objective is a fixed function of θ.
pub fn prml_optimize(
    data: &[Observation],
    family: KernelFamily,
    bounds: &ThetaBox,
    p0: &MixingDensity,
    schedule: &WeightSchedule,
    opts: &PrmlOptions,
) -> Result<PrmlResult> {
    if bounds.dim() != family.theta_dim() {
        return Err(Error::Shape {
            expected: family.theta_dim(),
            got: bounds.dim(),
        });
    }
    if opts.max_evals == 0 || opts.n_perm == 0 || opts.scan_points < 2 || !(opts.tol > 0.0) {
        return Err(Error::Parameter(
            "optimizer needs a positive budget, tolerance and scan size".into(),
        ));
    }
    if data.is_empty() {
        return Err(Error::Data("PR marginal likelihood needs data".into()));
    }
    let orders = if opts.n_perm == 1 {
        alloc::vec![(0..data.len()).collect()]
    } else {
        perm::orderings(data.len(), opts.n_perm, opts.seed)
    };
    let mut search = Search {
        data,
        family,
        p0,
        schedule,
        orders,
        max_evals: opts.max_evals,
        trace: Vec::new(),
        best_theta: bounds.center(),
        best: f64::NEG_INFINITY,
    };
    let free: Vec<usize> = (0..bounds.dim()).filter(|&i| !bounds.is_fixed(i)).collect();
    let start: Vec<f64> = (0..bounds.dim())
        .map(|i| {
            if bounds.is_fixed(i) {
                bounds.lower()[i]
            } else {
                0.5 * (bounds.lower()[i] + bounds.upper()[i])
            }
        })
        .collect();

    if free.is_empty() {
        search.eval(&start)?;
    } else {
        search.best_theta = start;
        let spacing: Vec<f64> = free
            .iter()
            .map(|&c| (bounds.upper()[c] - bounds.lower()[c]) / (opts.scan_points - 1) as f64)
            .collect();
        let mut first_cycle = true;
        loop {
            let before = search.best_theta.clone();
            for (slot, &c) in free.iter().enumerate() {
                if search.exhausted() {
                    break;
                }
                let (lo, hi) = (bounds.lower()[c], bounds.upper()[c]);
                let h = spacing[slot];
                if first_cycle {
                    let base = search.best_theta.clone();
                    for j in 0..opts.scan_points {
                        if search.exhausted() {
                            break;
                        }
                        let x = if j + 1 == opts.scan_points {
                            hi
                        } else {
                            lo + j as f64 * h
                        };
                        search.eval_at(&base, c, x)?;
                    }
                }
                if search.best == f64::NEG_INFINITY {
                    return Err(Error::Optimization(
                        "PR marginal likelihood is -inf over the whole initial scan".into(),
                    ));
                }
                let x0 = search.best_theta[c];
                search.golden(c, (x0 - h).max(lo), (x0 + h).min(hi), opts.tol)?;
            }
            first_cycle = false;
            let moved = search
                .best_theta
                .iter()
                .zip(&before)
                .any(|(a, b)| (a - b).abs() > opts.tol);
            if free.len() == 1 || !moved || search.exhausted() {
                break;
            }
        }
    }

    if search.best == f64::NEG_INFINITY {
        return Err(Error::Optimization(
            "PR marginal likelihood is -inf everywhere tried".into(),
        ));
    }
    let theta = search.best_theta.clone();
    let kernel = family.with_theta(&theta)?;
    let fits = search
        .orders
        .iter()
        .map(|order| pr::pr_fit_ordered(data, order, &kernel, p0, schedule))
        .collect::<Result<Vec<_>>>()?;
    let seed = (opts.n_perm > 1).then_some(opts.seed);
    let fit = PrFit::average(&fits, seed)?;
    Ok(PrmlResult {
        theta,
        log_lik: search.best,
        fit,
        trace: search.trace,
    })
}
