//! Randomization inference for the sharp null of zero treatment effect.
//!
//! The test statistic is the mean absolute model residual over the treated
//! cells. Under the null, residuals carry no treatment signal, so their
//! distribution is (approximately) invariant to a family of rearrangements;
//! comparing the observed statistic against the rearranged ones yields a
//! finite-sample p-value. Two families are provided:
//!
//! * **moving block** — every unit's residual series is cyclically shifted
//!   by a common offset, preserving cross-sectional dependence and, up to
//!   wrap-around, serial dependence. Exactly `T` rearrangements exist.
//! * **iid** — a bijection of all `N·T` cells, appropriate when shocks are
//!   exchangeable across cells. The full family is `(NT)!` strong; it is
//!   enumerated when small enough and uniformly sampled otherwise, identity
//!   always included at index 0.
//!
//! Valid p-values require the fit to have *imposed the null*: the model must
//! be estimated on all cells as if no treatment occurred, so the treated
//! cells' residuals contain the (hypothesized) effect rather than an
//! arbitrary fit artifact.

use crate::error::{Error, Result};
use crate::estimator::{FitMode, FitResult};
use crate::panel::PanelData;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which rearrangement family drives the randomization distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationFamily {
    /// Common cyclic time shift across all units; `|Π| = T`.
    MovingBlock,
    /// Bijections of all cells; enumerated or sampled, identity included.
    Iid,
}

impl std::fmt::Display for PermutationFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PermutationFamily::MovingBlock => write!(f, "moving_block"),
            PermutationFamily::Iid => write!(f, "iid"),
        }
    }
}

/// A concrete, reproducible set of rearrangements for one panel shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub family: PermutationFamily,
    /// Number of rearrangements actually evaluated, identity included.
    pub count: usize,
    /// Seed for sampled iid bijections (unused by moving block).
    pub seed: u64,
    n_units: usize,
    n_periods: usize,
    /// True when `count` covers the entire `(NT)!` family, in which case
    /// indices enumerate bijections in lexicographic order.
    exhaustive: bool,
}

impl PermutationPlan {
    /// All `T` common cyclic shifts; index `s` shifts every row by `s`.
    pub fn moving_block(n_units: usize, n_periods: usize) -> Result<Self> {
        if n_units == 0 || n_periods == 0 {
            return Err(Error::config("permutation plan needs a nonempty panel"));
        }
        Ok(PermutationPlan {
            family: PermutationFamily::MovingBlock,
            count: n_periods,
            seed: 0,
            n_units,
            n_periods,
            exhaustive: true,
        })
    }

    /// Identity plus `n_perm` further bijections of the `N·T` cells. When
    /// the full family has at most `n_perm + 1` members it is enumerated
    /// exhaustively (lexicographic order, identity first); otherwise the
    /// non-identity slots hold uniform draws reproducible from `seed`.
    pub fn iid(n_units: usize, n_periods: usize, n_perm: usize, seed: u64) -> Result<Self> {
        if n_units == 0 || n_periods == 0 {
            return Err(Error::config("permutation plan needs a nonempty panel"));
        }
        if n_perm == 0 {
            return Err(Error::config("iid plan needs at least one non-identity draw"));
        }
        let requested = n_perm as u64 + 1;
        let (count, exhaustive) = match factorial_below(n_units * n_periods, requested) {
            Some(family_size) => (family_size, true),
            None => (requested, false),
        };
        Ok(PermutationPlan {
            family: PermutationFamily::Iid,
            count: count as usize,
            seed,
            n_units,
            n_periods,
            exhaustive,
        })
    }
}

/// `Some(n!)` when it does not exceed `cap`, `None` otherwise. Never
/// overflows: the product saturates long before wrapping.
fn factorial_below(n: usize, cap: u64) -> Option<u64> {
    let mut f = 1u64;
    for k in 2..=n as u64 {
        f = f.saturating_mul(k);
        if f > cap {
            return None;
        }
    }
    Some(f)
}

/// Mean absolute residual over the treated cells.
pub fn test_statistic(residuals: &Array2<f64>, treated: &[(usize, usize)]) -> Result<f64> {
    if treated.is_empty() {
        return Err(Error::NoTreatedCells { operation: "test statistic" });
    }
    let sum: f64 = treated.iter().map(|&(i, t)| residuals[(i, t)].abs()).sum();
    Ok(sum / treated.len() as f64)
}

/// Apply the plan's `index`-th rearrangement to a residual matrix.
pub fn permute_residuals(
    residuals: &Array2<f64>,
    plan: &PermutationPlan,
    index: usize,
) -> Result<Array2<f64>> {
    let (n, t) = residuals.dim();
    if (n, t) != (plan.n_units, plan.n_periods) {
        return Err(Error::shape("residual matrix", (plan.n_units, plan.n_periods), (n, t)));
    }
    if index >= plan.count {
        return Err(Error::config(format!(
            "permutation index {index} out of range (plan holds {})",
            plan.count
        )));
    }
    match plan.family {
        PermutationFamily::MovingBlock => {
            // Entry (i, t) reads from (i, (t + shift) mod T): a common
            // cyclic shift of every row.
            let shift = index;
            Ok(Array2::from_shape_fn((n, t), |(i, tt)| residuals[(i, (tt + shift) % t)]))
        }
        PermutationFamily::Iid => {
            let nt = n * t;
            let perm = if index == 0 {
                (0..nt).collect::<Vec<usize>>()
            } else if plan.exhaustive {
                unrank_permutation(index as u64, nt)
            } else {
                sampled_bijection(plan.seed, index as u64, nt)
            };
            let flat: Vec<f64> = residuals.iter().copied().collect();
            let rearranged: Vec<f64> = perm.iter().map(|&c| flat[c]).collect();
            Ok(Array2::from_shape_vec((n, t), rearranged).expect("permutation preserves length"))
        }
    }
}

/// The `rank`-th permutation of `0..n` in lexicographic order (factorial
/// number system). Rank 0 is the identity. Only reachable when `n! ≤ count`,
/// so `u64` arithmetic suffices.
fn unrank_permutation(mut rank: u64, n: usize) -> Vec<usize> {
    let mut fact = vec![1u64; n.max(1)];
    for k in 1..n {
        fact[k] = fact[k - 1] * k as u64;
    }
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for pos in (0..n).rev() {
        let f = fact[pos];
        let d = (rank / f) as usize;
        rank %= f;
        out.push(pool.remove(d));
    }
    out
}

/// Uniform random bijection of `0..n`, reproducible from `(seed, index)`.
/// Each index derives its own generator, so permutations can be produced on
/// demand in any order without materializing the whole family.
fn sampled_bijection(seed: u64, index: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, index));
    let mut perm: Vec<usize> = (0..n).collect();
    for j in (1..n).rev() {
        let r = rng.random_range(0..=j);
        perm.swap(j, r);
    }
    perm
}

/// SplitMix64 finalizer over `seed` advanced by `index` golden-ratio steps;
/// decorrelates the per-index generators.
pub(crate) fn derived_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Observed statistic, its randomization distribution, and the p-value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceResult {
    pub family: PermutationFamily,
    /// `S(Û)` at the identity rearrangement.
    pub statistic: f64,
    /// `S(Û_π)` for every planned rearrangement, in plan-index order
    /// (entry 0 is the identity).
    pub permuted_statistics: Vec<f64>,
    /// `1 − F̂(S)` where `F̂(x)` is the fraction of planned statistics
    /// strictly below `x`; always in `[1/|Π|, 1]`.
    pub p_value: f64,
}

/// Run the full randomization test on an imposed-null fit.
///
/// Control-only fits are rejected: their treated-cell residuals mix the
/// treatment effect with extrapolation error in a way the rearranged
/// statistics cannot mimic, so no valid p-value exists for them.
pub fn permutation_p_value(
    panel: &PanelData,
    fit: &FitResult,
    plan: &PermutationPlan,
) -> Result<InferenceResult> {
    if fit.mode != FitMode::ImposedNull {
        return Err(Error::InferenceRequiresImposedNull);
    }
    if (plan.n_units, plan.n_periods) != (panel.n_units(), panel.n_periods()) {
        return Err(Error::shape(
            "permutation plan shape",
            (panel.n_units(), panel.n_periods()),
            (plan.n_units, plan.n_periods),
        ));
    }
    let treated = panel.treated_cells();
    if treated.is_empty() {
        return Err(Error::NoTreatedCells { operation: "permutation test" });
    }
    let residuals = panel.residuals(&fit.params);
    let statistic = test_statistic(&residuals, treated)?;
    let permuted_statistics: Vec<f64> = (0..plan.count)
        .into_par_iter()
        .map(|index| {
            let permuted = permute_residuals(&residuals, plan, index)?;
            test_statistic(&permuted, treated)
        })
        .collect::<Result<_>>()?;
    let below = permuted_statistics.iter().filter(|s| **s < statistic).count();
    let p_value = 1.0 - below as f64 / plan.count as f64;
    Ok(InferenceResult { family: plan.family, statistic, permuted_statistics, p_value })
}
