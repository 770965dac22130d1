//! Predictive recursion (PR) for nonparametric estimation of mixing densities.
//!
//! Data `Y_1, ..., Y_n` are modelled as iid draws from a mixture
//! `f(y) = ∫ k(y | u) p(u) ν(du)` and PR estimates the mixing density `p`
//! in a single recursive pass:
//!
//! ```text
//! p_i(u) = (1 - w_i) p_{i-1}(u) + w_i k(Y_i | u) p_{i-1}(u) / f_{i-1}(Y_i)
//! ```
//!
//! The latent domain is discretized once into a [`grid::MixingGrid`], which may
//! mix continuous quadrature nodes with discrete atoms, so the same recursion
//! handles densities with respect to Lebesgue measure, counting measure, or a
//! sum of the two.
//!
//! Beyond the plain recursion the crate provides:
//!
//! - [`semiparam`]: the PR marginal likelihood and structural-parameter search,
//! - [`twogroups`]: empirical-Bayes local false discovery rates,
//! - [`robust`]: linear regression with scale-mixture-of-normals errors,
//! - [`npmle`]: Fredholm fixed-point iteration and the NPMLE gradient check,
//! - [`copula`]: the mixing-free Gaussian-copula predictive recursion,
//! - [`sim`]: seeded simulators and convergence curves.
//!
//! The crate is `no_std` (with `alloc`); file formats and the command line
//! front end live in the `predrec` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod copula;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod kl;
pub mod linalg;
pub mod math;
pub mod npmle;
pub mod perm;
pub mod pr;
pub mod robust;
pub mod schedule;
pub mod semiparam;
pub mod sim;
pub mod twogroups;

pub use error::{Error, Result};
pub use grid::{GridSpec, MixingDensity, MixingGrid, QuadratureRule};
pub use kernel::{Kernel, Observation};
pub use pr::{pr_fit, pr_fit_averaged, pr_step, PrFit};
pub use schedule::WeightSchedule;
