//! Data orderings for permutation-averaged fits.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest `n` for which all `n!` orderings are enumerated.
pub const EXHAUSTIVE_MAX_N: usize = 5;

/// Seeded generator used for every random choice in the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// In-place Fisher–Yates shuffle.
pub fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Orderings of `0..n` to average over.
///
/// When `n ≤ 5` and `n_perm ≥ n!` every permutation is returned once, in
/// lexicographic order. Otherwise `n_perm` independent uniform shuffles are
/// drawn from `seed`.
pub fn orderings(n: usize, n_perm: usize, seed: u64) -> Vec<Vec<usize>> {
    if n <= EXHAUSTIVE_MAX_N && n_perm >= factorial(n) {
        return all_permutations(n);
    }
    let mut rng = rng(seed);
    (0..n_perm)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            shuffle(&mut order, &mut rng);
            order
        })
        .collect()
}

/// All permutations of `0..n` in lexicographic order.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = alloc::vec![current.clone()];
    while next_permutation(&mut current) {
        out.push(current.clone());
    }
    out
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
