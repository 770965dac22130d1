//! Kullback–Leibler divergence between densities on the observation space.

use alloc::vec::Vec;

use crate::math;

/// Quadrature over the observation space `𝕐`.
#[derive(Debug, Clone, PartialEq)]
pub enum YQuadrature {
    /// Counts `0, 1, ..., upto`, each with unit weight.
    Counts { upto: u64 },
    /// Trapezoid rule with `m` nodes on `[lo, hi]`.
    Trapezoid { lo: f64, hi: f64, m: usize },
}

impl YQuadrature {
    /// Counts up to the first `T` where the remaining mass of `f_true` falls
    /// below `tail_tol` (capped at `max_count`).
    pub fn counts_for(f_true: impl Fn(f64) -> f64, tail_tol: f64, max_count: u64) -> Self {
        let mut cum = 0.0;
        let mut t = 0;
        while t < max_count {
            cum += f_true(t as f64);
            if 1.0 - cum < tail_tol {
                break;
            }
            t += 1;
        }
        YQuadrature::Counts { upto: t }
    }

    /// 1000-node trapezoid over `center ± 8 sd`.
    pub fn continuous(center: f64, sd: f64) -> Self {
        YQuadrature::Trapezoid {
            lo: center - 8.0 * sd,
            hi: center + 8.0 * sd,
            m: 1000,
        }
    }

    pub fn nodes_and_weights(&self) -> (Vec<f64>, Vec<f64>) {
        match *self {
            YQuadrature::Counts { upto } => (
                (0..=upto).map(|y| y as f64).collect(),
                alloc::vec![1.0; upto as usize + 1],
            ),
            YQuadrature::Trapezoid { lo, hi, m } => {
                let m = m.max(2);
                let h = (hi - lo) / (m - 1) as f64;
                let nodes = (0..m).map(|j| lo + j as f64 * h).collect();
                let mut w = alloc::vec![h; m];
                w[0] *= 0.5;
                w[m - 1] *= 0.5;
                (nodes, w)
            }
        }
    }
}

/// `K(f_true, f_est) = ∫ f_true ln(f_true / f_est)` over `yq`, clipped at 0.
///
/// Returns `+inf` when `f_est` vanishes somewhere `f_true` does not.
pub fn kl_divergence(f_true: impl Fn(f64) -> f64, f_est: impl Fn(f64) -> f64, yq: &YQuadrature) -> f64 {
    let (nodes, weights) = yq.nodes_and_weights();
    let mut total = 0.0;
    for (&y, &w) in nodes.iter().zip(&weights) {
        let a = f_true(y);
        if !(a > 0.0) {
            continue;
        }
        let b = f_est(y);
        if !(b > 0.0) {
            return f64::INFINITY;
        }
        total += w * a * (math::ln(a) - math::ln(b));
    }
    total.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::normal_pdf;

    #[test]
    fn identical_densities() {
        let yq = YQuadrature::continuous(0.0, 1.0);
        assert!(kl_divergence(|y| normal_pdf(y, 0.0, 1.0), |y| normal_pdf(y, 0.0, 1.0), &yq).abs() < 1e-10);
    }

    #[test]
    fn shifted_gaussians_match_closed_form() {
        let yq = YQuadrature::Trapezoid {
            lo: -8.0,
            hi: 8.5,
            m: 1000,
        };
        let kl = kl_divergence(|y| normal_pdf(y, 0.0, 1.0), |y| normal_pdf(y, 0.5, 1.0), &yq);
        assert!((kl - 0.125).abs() < 1e-4, "{kl}");
    }

    #[test]
    fn vanishing_estimate_is_infinite() {
        let yq = YQuadrature::continuous(0.0, 1.0);
        let kl = kl_divergence(|y| normal_pdf(y, 0.0, 1.0), |y| if y > 0.0 { 1.0 } else { 0.0 }, &yq);
        assert_eq!(kl, f64::INFINITY);
    }

    #[test]
    fn count_truncation_tracks_tail_mass() {
        let pois = |lam: f64| move |y: f64| math::exp(y * math::ln(lam) - lam - math::ln_gamma(y + 1.0));
        let YQuadrature::Counts { upto } = YQuadrature::counts_for(pois(5.0), 1e-10, 10_000) else {
            panic!()
        };
        let tail: f64 = (upto + 1..upto + 200).map(|y| pois(5.0)(y as f64)).sum();
        assert!(tail < 1e-10);
        assert!(upto > 15 && upto < 40);
        let yq = YQuadrature::Counts { upto };
        // closed form for Poisson: λ1 ln(λ1/λ2) + λ2 - λ1
        let want = 5.0 * math::ln(5.0 / 4.0) + 4.0 - 5.0;
        assert!((kl_divergence(pois(5.0), pois(4.0), &yq) - want).abs() < 1e-9);
    }
}
