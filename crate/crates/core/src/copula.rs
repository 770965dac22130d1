//! Mixing-free predictive recursion with a Gaussian copula update.
//!
//! The predictive density itself is updated on a fixed grid over `𝕐`:
//!
//! ```text
//! f_n(y) = (1 - w_n) f_{n-1}(y) + w_n g_ρ(F_{n-1}(y), F_{n-1}(Y_n)) f_{n-1}(y)
//! ```
//!
//! where `g_ρ` is the bivariate Gaussian copula density.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::perm;
use crate::schedule::WeightSchedule;

/// Copula arguments are clamped into `[CLAMP, 1 - CLAMP]`.
pub const CLAMP: f64 = 1e-12;

pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_NODES: usize = 1024;

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "copula correlation {rho} must lie in (-1, 1)"
        )))
    }
}

fn clamp_unit(a: f64) -> f64 {
    a.clamp(CLAMP, 1.0 - CLAMP)
}

/// `g_ρ(a, b)` for normal scores `x = Φ⁻¹(a)`, `z = Φ⁻¹(b)`.
fn copula_from_scores(x: f64, z: f64, rho: f64) -> f64 {
    let r2 = rho * rho;
    let q = (r2 * (x * x + z * z) - 2.0 * rho * x * z) / (2.0 * (1.0 - r2));
    math::exp(-q) / math::sqrt(1.0 - r2)
}

/// Bivariate Gaussian copula density with correlation `rho`.
pub fn gaussian_copula_density(a: f64, b: f64, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("copula arguments ({a}, {b}) must be finite")));
    }
    let x = math::normal_quantile(clamp_unit(a));
    let z = math::normal_quantile(clamp_unit(b));
    Ok(copula_from_scores(x, z, rho))
}

/// Equally spaced grid over the observation space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YGridSpec {
    /// [`DEFAULT_NODES`] nodes over the data range widened by 4 robust sd.
    Auto,
    Explicit {
        lo: f64,
        hi: f64,
        m: usize,
    },
}

impl YGridSpec {
    pub fn resolve(&self, data: &[f64]) -> Result<(f64, f64, usize)> {
        let (lo, hi, m) = match *self {
            YGridSpec::Explicit { lo, hi, m } => (lo, hi, m),
            YGridSpec::Auto => {
                if data.is_empty() {
                    return Err(Error::Data("automatic y-grid needs data".into()));
                }
                let s = robust_sd(data);
                let (min, max) = data
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
                (min - 4.0 * s, max + 4.0 * s, DEFAULT_NODES)
            }
        };
        if !(lo.is_finite() && hi.is_finite() && lo < hi) || m < 3 {
            return Err(Error::InvalidGrid(format!(
                "y-grid {lo}:{hi}:{m} needs lo < hi and at least 3 nodes"
            )));
        }
        Ok((lo, hi, m))
    }
}

/// 1.4826 × MAD, falling back to the sample sd and then to 1.
pub fn robust_sd(data: &[f64]) -> f64 {
    let mut v = data.to_vec();
    let med = math::median(&mut v);
    let mut dev: Vec<f64> = data.iter().map(|y| (y - med).abs()).collect();
    let mad = 1.4826 * math::median(&mut dev);
    if mad > 0.0 {
        return mad;
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let sd = math::sqrt(data.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n);
    if sd > 0.0 {
        sd
    } else {
        1.0
    }
}

/// Starting predictive density `f_0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDensity {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Normal centred at the sample median with twice the robust sd.
    Auto,
    /// Values at the y-grid nodes (normalized on construction).
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveState {
    lo: f64,
    h: f64,
    y: Vec<f64>,
    density: Vec<f64>,
    cdf: Vec<f64>,
    n: usize,
    rho: f64,
    schedule: WeightSchedule,
    /// `|∫ raw update − 1|` of every update so far.
    mass_drift: Vec<f64>,
    /// `ln f_{i-1}(Y_i)` of every update so far.
    log_predictive: Vec<f64>,
}

/// Unnormalized result of one update, with its quadrature mass.
#[derive(Debug, Clone, PartialEq)]
pub struct RawUpdate {
    pub values: Vec<f64>,
    pub mass: f64,
    pub weight: f64,
}

fn trapezoid_weights(m: usize, h: f64) -> impl Iterator<Item = f64> {
    (0..m).map(move |j| if j == 0 || j == m - 1 { 0.5 * h } else { h })
}

impl PredictiveState {
    pub fn new(
        lo: f64,
        hi: f64,
        m: usize,
        f0: &InitialDensity,
        data_hint: &[f64],
        rho: f64,
        schedule: WeightSchedule,
    ) -> Result<Self> {
        check_rho(rho)?;
        let (lo, hi, m) = YGridSpec::Explicit { lo, hi, m }.resolve(&[])?;
        let h = (hi - lo) / (m - 1) as f64;
        let y: Vec<f64> = (0..m).map(|j| lo + j as f64 * h).collect();
        let values = match f0 {
            InitialDensity::Normal { mean, sd } => {
                if !(sd.is_finite() && *sd > 0.0 && mean.is_finite()) {
                    return Err(Error::Parameter(format!("initial normal N({mean}, {sd}²) is invalid")));
                }
                y.iter().map(|&t| math::normal_pdf(t, *mean, *sd)).collect()
            }
            InitialDensity::Auto => {
                if data_hint.is_empty() {
                    return Err(Error::Data("automatic initial density needs data".into()));
                }
                let mut v = data_hint.to_vec();
                let mean = math::median(&mut v);
                let sd = 2.0 * robust_sd(data_hint);
                y.iter().map(|&t| math::normal_pdf(t, mean, sd)).collect()
            }
            InitialDensity::Values(v) => {
                if v.len() != m {
                    return Err(Error::Shape {
                        expected: m,
                        got: v.len(),
                    });
                }
                if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::Domain(
                        "initial density values must be finite and nonnegative".into(),
                    ));
                }
                v.clone()
            }
        };
        let mut state = PredictiveState {
            lo,
            h,
            y,
            density: values,
            cdf: Vec::new(),
            n: 0,
            rho,
            schedule,
            mass_drift: Vec::new(),
            log_predictive: Vec::new(),
        };
        let mass = state.integrate(&state.density);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::DegenerateDensity(mass));
        }
        state.density.iter_mut().for_each(|v| *v /= mass);
        state.refresh_cdf();
        Ok(state)
    }

    fn integrate(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(trapezoid_weights(values.len(), self.h))
            .map(|(v, w)| v * w)
            .sum()
    }

    fn refresh_cdf(&mut self) {
        let m = self.y.len();
        let mut cdf = Vec::with_capacity(m);
        let mut acc = 0.0;
        cdf.push(0.0);
        for j in 1..m {
            acc += 0.5 * self.h * (self.density[j - 1] + self.density[j]);
            cdf.push(acc);
        }
        self.cdf = cdf;
    }

    pub fn y_grid(&self) -> &[f64] {
        &self.y
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn schedule(&self) -> WeightSchedule {
        self.schedule
    }

    pub fn mass_drift(&self) -> &[f64] {
        &self.mass_drift
    }

    pub fn log_predictive(&self) -> &[f64] {
        &self.log_predictive
    }

    pub fn total_mass(&self) -> f64 {
        self.integrate(&self.density)
    }

    fn hi(&self) -> f64 {
        *self.y.last().expect("grid has nodes")
    }

    /// Position of `y` on the grid as (cell index, fraction), after clamping
    /// into the grid range.
    fn locate(&self, y: f64) -> Result<(usize, f64)> {
        let span = self.hi() - self.lo;
        if !y.is_finite() || y < self.lo - span || y > self.hi() + span {
            return Err(Error::Range(format!(
                "observation {y} lies outside the y-grid [{}, {}] by more than its span",
                self.lo,
                self.hi()
            )));
        }
        let t = ((y - self.lo) / self.h).clamp(0.0, (self.y.len() - 1) as f64);
        let j = (t as usize).min(self.y.len() - 2);
        Ok((j, t - j as f64))
    }

    /// Linear interpolation of `F_n`.
    pub fn cdf_at(&self, y: f64) -> Result<f64> {
        let (j, s) = self.locate(y)?;
        Ok(self.cdf[j] + s * (self.cdf[j + 1] - self.cdf[j]))
    }

    /// Linear interpolation of `f_n`; zero outside the grid.
    pub fn density_at(&self, y: f64) -> f64 {
        if !(y >= self.lo && y <= self.hi()) {
            return 0.0;
        }
        let t = (y - self.lo) / self.h;
        let j = (t as usize).min(self.y.len() - 2);
        let s = t - j as f64;
        self.density[j] + s * (self.density[j + 1] - self.density[j])
    }

    /// The update for `y_new` before re-normalization.
    pub fn raw_update(&self, y_new: f64) -> Result<RawUpdate> {
        let b = clamp_unit(self.cdf_at(y_new)?);
        let z = math::normal_quantile(b);
        let w = self.schedule.weight(self.n + 1);
        let keep = 1.0 - w;
        let values: Vec<f64> = self
            .density
            .iter()
            .zip(&self.cdf)
            .map(|(&f, &a)| {
                let x = math::normal_quantile(clamp_unit(a));
                f * (keep + w * copula_from_scores(x, z, self.rho))
            })
            .collect();
        let mass = self.integrate(&values);
        Ok(RawUpdate {
            values,
            mass,
            weight: w,
        })
    }

    /// Consume `y_new`.
    pub fn update(&mut self, y_new: f64) -> Result<()> {
        let pred = self.density_at(y_new);
        let raw = self.raw_update(y_new)?;
        if !(raw.mass > 0.0 && raw.mass.is_finite()) {
            return Err(Error::DegenerateDensity(raw.mass));
        }
        self.mass_drift.push((raw.mass - 1.0).abs());
        self.log_predictive.push(math::ln(pred));
        let s = 1.0 / raw.mass;
        self.density = raw.values.into_iter().map(|v| v * s).collect();
        self.refresh_cdf();
        self.n += 1;
        Ok(())
    }
}

/// Functional form of [`PredictiveState::update`].
pub fn copula_update(state: &PredictiveState, y_new: f64) -> Result<PredictiveState> {
    let mut next = state.clone();
    next.update(y_new)?;
    Ok(next)
}

/// Fold [`copula_update`] over `data` in order.
pub fn copula_fit(
    data: &[f64],
    f0: &InitialDensity,
    rho: f64,
    schedule: WeightSchedule,
    ygrid: YGridSpec,
) -> Result<PredictiveState> {
    let order: Vec<usize> = (0..data.len()).collect();
    let (lo, hi, m) = ygrid.resolve(data)?;
    let mut state = PredictiveState::new(lo, hi, m, f0, data, rho, schedule)?;
    fold(&mut state, data, &order)?;
    Ok(state)
}

fn fold(state: &mut PredictiveState, data: &[f64], order: &[usize]) -> Result<()> {
    for &i in order {
        state.update(data[i]).map_err(|e| e.at_observation(i))?;
    }
    Ok(())
}

/// Average of [`copula_fit`] over `n_perm` orderings of `data`.
///
/// The returned state carries the averaged density and its CDF; its drift
/// and log-predictive records come from the first ordering.
pub fn copula_fit_averaged(
    data: &[f64],
    f0: &InitialDensity,
    rho: f64,
    schedule: WeightSchedule,
    ygrid: YGridSpec,
    n_perm: usize,
    seed: u64,
) -> Result<PredictiveState> {
    let (lo, hi, m) = ygrid.resolve(data)?;
    let start = PredictiveState::new(lo, hi, m, f0, data, rho, schedule)?;
    let orders = perm::orderings(data.len(), n_perm.max(1), seed);
    let mut avg: Option<PredictiveState> = None;
    let mut sum = alloc::vec![0.0; m];
    for order in &orders {
        let mut st = start.clone();
        fold(&mut st, data, order)?;
        sum.iter_mut().zip(&st.density).for_each(|(s, v)| *s += v);
        if avg.is_none() {
            avg = Some(st);
        }
    }
    let mut out = avg.unwrap_or(start);
    let k = orders.len().max(1) as f64;
    out.density = sum.into_iter().map(|v| v / k).collect();
    let mass = out.total_mass();
    out.density.iter_mut().for_each(|v| *v /= mass);
    out.refresh_cdf();
    Ok(out)
}
