//! Parallel replicates and permutation averaging.
//!
//! Work is spread over a rayon pool of `jobs` threads, and results are
//! always put back in a fixed order before they are combined, so output does
//! not depend on `jobs`.

use predrec_core::pr::pr_fit_ordered;
use predrec_core::{perm, Error, Kernel, MixingDensity, Observation, PrFit, WeightSchedule};
use rayon::prelude::*;

use crate::error::{CliError, Result};

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} worker threads: {e}")))
}

/// Run `f` for each seed of `base, base + 1, ..`, returning `(seed, value)`
/// pairs sorted by seed.
pub fn replicates<T, F>(base_seed: u64, reps: usize, jobs: usize, f: F) -> Result<Vec<(u64, T)>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let seeds = predrec_core::sim::seed_ladder(base_seed, reps);
    let mut out: Vec<(u64, T)> = pool(jobs)?.install(|| seeds.par_iter().map(|&s| (s, f(s))).collect());
    out.sort_by_key(|(s, _)| *s);
    Ok(out)
}

/// Same result as [`predrec_core::pr_fit_averaged`], with the orderings fitted
/// concurrently.
pub fn averaged_fit(
    data: &[Observation],
    kernel: &Kernel,
    p0: &MixingDensity,
    schedule: &WeightSchedule,
    n_perm: usize,
    seed: u64,
    jobs: usize,
) -> Result<PrFit> {
    if n_perm == 0 {
        return Err(Error::Parameter("need at least one permutation".into()).into());
    }
    let orders = perm::orderings(data.len(), n_perm, seed);
    let fits = pool(jobs)?.install(|| {
        orders
            .par_iter()
            .map(|order| pr_fit_ordered(data, order, kernel, p0, schedule))
            .collect::<std::result::Result<Vec<_>, _>>()
    })?;
    Ok(PrFit::average(&fits, Some(seed))?)
}
