//! Cross-validation over `(λ_L, λ_H, λ_β)`: fold construction, grid and
//! refinement search, and the two selection rules (CV-minimum and one
//! standard error).
//!
//! Folds are independent random subsets of the untreated cells `O`, each of
//! size `round(|O|·|O|/NT)` — the training share mirrors the overall share of
//! untreated observations, so every training problem looks like a shrunken
//! copy of the real one. A grid cell is fit with the loss restricted to the
//! training subset and scored by mean squared prediction error on the held
//! out untreated cells; treated cells never enter either side.

use crate::design::{CellMask, Design};
use crate::error::{Error, Result};
use crate::estimator::{lambda_max_with, LambdaMax, ZERO_CUTOFF};
use crate::panel::PanelData;
use crate::solver::{solve, BlockSet, SolveSettings};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One penalty configuration evaluated during the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaTriple {
    pub lambda_l: f64,
    pub lambda_h: f64,
    pub lambda_beta: f64,
}

/// Cross-validation folds: independent random training subsets of the
/// untreated cells and their complements.
#[derive(Debug, Clone)]
pub struct CvFolds {
    pub k: usize,
    /// Training subsets `O_k ⊂ O`, each sorted row-major.
    pub train_sets: Vec<Vec<(usize, usize)>>,
    /// Evaluation complements `O \ O_k`, each sorted row-major.
    pub eval_sets: Vec<Vec<(usize, usize)>>,
}

/// Draw `k` independent training subsets of the untreated cells, each of
/// size `round(|O|²/NT)`, uniformly without replacement; the evaluation set
/// is the complement within `O`. Reproducible from `seed`.
pub fn make_folds(panel: &PanelData, k: usize, seed: u64) -> Result<CvFolds> {
    if k < 2 {
        return Err(Error::config(format!("cross-validation needs at least 2 folds, got {k}")));
    }
    let obs = panel.observed_cells();
    if obs.len() < k {
        return Err(Error::config(format!(
            "cross-validation needs at least {k} untreated cells, got {}",
            obs.len()
        )));
    }
    let o = obs.len() as f64;
    let nt = panel.n_cells() as f64;
    let size = (o * o / nt).round() as usize;
    if size == 0 {
        return Err(Error::config("degenerate folds: training sets would be empty"));
    }
    if size >= obs.len() {
        return Err(Error::config(
            "degenerate folds: evaluation sets would be empty (does the panel have treated cells?)",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..obs.len()).collect();
    let mut train_sets = Vec::with_capacity(k);
    let mut eval_sets = Vec::with_capacity(k);
    for _ in 0..k {
        // Partial Fisher-Yates: after the loop the first `size` entries are
        // a uniform sample without replacement and the suffix is its
        // complement.
        for j in 0..size {
            let r = rng.random_range(j..idx.len());
            idx.swap(j, r);
        }
        let mut train: Vec<(usize, usize)> = idx[..size].iter().map(|&ix| obs[ix]).collect();
        let mut eval: Vec<(usize, usize)> = idx[size..].iter().map(|&ix| obs[ix]).collect();
        train.sort_unstable();
        eval.sort_unstable();
        train_sets.push(train);
        eval_sets.push(eval);
    }
    Ok(CvFolds { k, train_sets, eval_sets })
}

/// Grid layout for the penalty search.
///
/// Each axis runs log-spaced from the panel's penalty upper bound down to
/// `floor_ratio` times it, unless explicit axis values are supplied; zero is
/// appended to the interaction and covariate axes only. Axes are
/// canonicalized (sorted descending, deduplicated) before evaluation, so
/// results do not depend on enumeration order.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub points_l: usize,
    pub points_h: usize,
    pub points_beta: usize,
    /// Smallest nonzero grid value as a fraction of the upper bound.
    pub floor_ratio: f64,
    /// Explicit axis values override the log-spaced construction.
    pub axes: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { points_l: 10, points_h: 10, points_beta: 10, floor_ratio: 1e-4, axes: None }
    }
}

impl GridSpec {
    /// Uniform number of log-spaced points on every axis.
    pub fn with_points(g: usize) -> Self {
        GridSpec { points_l: g, points_h: g, points_beta: g, ..GridSpec::default() }
    }

    /// Evaluate exactly these axis values (plus canonicalization).
    pub fn explicit(axis_l: Vec<f64>, axis_h: Vec<f64>, axis_beta: Vec<f64>) -> Self {
        GridSpec { axes: Some((axis_l, axis_h, axis_beta)), ..GridSpec::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.axes.is_none() && (self.points_l == 0 || self.points_h == 0 || self.points_beta == 0) {
            return Err(Error::config("grid needs at least one point per axis"));
        }
        if !(self.floor_ratio > 0.0 && self.floor_ratio <= 1.0) {
            return Err(Error::config("grid floor ratio must lie in (0, 1]"));
        }
        if let Some((a, b, c)) = &self.axes {
            for v in a.iter().chain(b).chain(c) {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::config("explicit grid axes must be finite and nonnegative"));
                }
            }
            if a.is_empty() || b.is_empty() || c.is_empty() {
                return Err(Error::config("explicit grid axes must be nonempty"));
            }
        }
        Ok(())
    }

    fn build_axes(&self, bounds: &LambdaMax) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        match &self.axes {
            Some((a, b, c)) => (canonical_axis(a), canonical_axis(b), canonical_axis(c)),
            // Zero joins the coefficient axes (an unpenalized interaction or
            // covariate block is a legitimate candidate) but not the baseline
            // axis: an unpenalized baseline matrix interpolates the fitted
            // cells outright, is never competitive out of sample, and costs a
            // full-rank decomposition per iteration to discover that.
            None => (
                log_axis(bounds.lambda_l, self.points_l, self.floor_ratio, false),
                log_axis(bounds.lambda_h, self.points_h, self.floor_ratio, true),
                log_axis(bounds.lambda_beta, self.points_beta, self.floor_ratio, true),
            ),
        }
    }
}

/// Descending, deduplicated copy of an axis.
fn canonical_axis(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).expect("axes validated finite"));
    v.dedup();
    v
}

/// Cartesian product of the three axes in canonical order.
fn build_grid(axis_l: &[f64], axis_h: &[f64], axis_beta: &[f64]) -> Vec<LambdaTriple> {
    let mut grid = Vec::with_capacity(axis_l.len() * axis_h.len() * axis_beta.len());
    for &l in axis_l {
        for &h in axis_h {
            for &b in axis_beta {
                grid.push(LambdaTriple { lambda_l: l, lambda_h: h, lambda_beta: b });
            }
        }
    }
    grid
}

/// Log-spaced axis from `top` down to `top·floor_ratio`, with zero appended
/// when `include_zero` is set (a bound of zero always collapses to `[0]`).
pub(crate) fn log_axis(top: f64, points: usize, floor_ratio: f64, include_zero: bool) -> Vec<f64> {
    if top <= 0.0 {
        return vec![0.0];
    }
    let mut axis = Vec::with_capacity(points + 1);
    if points == 1 {
        axis.push(top);
    } else {
        let log_top = top.ln();
        let log_floor = (top * floor_ratio).ln();
        for g in 0..points {
            let f = g as f64 / (points - 1) as f64;
            axis.push((log_top + f * (log_floor - log_top)).exp());
        }
    }
    if include_zero {
        axis.push(0.0);
    }
    canonical_axis(&axis)
}

/// Which selection rule picks the reported triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionRule {
    /// The CV-error minimizer.
    #[serde(rename = "mse")]
    Mse,
    /// The most penalized triple within one standard error of the minimum.
    #[serde(rename = "1se")]
    OneSe,
}

impl std::fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelectionRule::Mse => write!(f, "mse"),
            SelectionRule::OneSe => write!(f, "1se"),
        }
    }
}

/// Full cross-validation surface plus both selected triples.
#[derive(Debug, Clone)]
pub struct CvResult {
    /// Evaluated triples in canonical order (each axis descending).
    pub grid: Vec<LambdaTriple>,
    /// Mean over folds of the per-fold held-out MSE, per triple.
    pub cv_error: Vec<f64>,
    /// Standard error over folds (sample SD / √K), per triple.
    pub cv_se: Vec<f64>,
    /// Per-fold held-out MSE, triple-major: `fold_mse[g][f]`.
    pub fold_mse: Vec<Vec<f64>>,
    /// Per-fold solver convergence flags, triple-major.
    pub converged: Vec<Vec<bool>>,
    /// Mean over folds of `‖H̃‖₀`, `‖β̃‖₀`, and rank of L, per triple.
    pub mean_support_h: Vec<f64>,
    pub mean_support_beta: Vec<f64>,
    pub mean_rank_l: Vec<f64>,
    /// Index of the CV-error minimizer.
    pub best_mse: usize,
    /// Index of the one-standard-error choice.
    pub best_1se: usize,
    /// Rule requested by the caller (reported by [`CvResult::selected`]).
    pub criterion: SelectionRule,
    /// Number of folds.
    pub k: usize,
    /// Penalty upper bounds the default grid was anchored at.
    pub bounds: LambdaMax,
}

impl CvResult {
    pub fn best_mse_triple(&self) -> LambdaTriple {
        self.grid[self.best_mse]
    }

    pub fn best_1se_triple(&self) -> LambdaTriple {
        self.grid[self.best_1se]
    }

    /// The triple chosen by the requested selection rule.
    pub fn selected(&self) -> LambdaTriple {
        match self.criterion {
            SelectionRule::Mse => self.best_mse_triple(),
            SelectionRule::OneSe => self.best_1se_triple(),
        }
    }
}

/// Grid search: fit every `(λ_L, λ_H, λ_β)` triple on each training subset
/// with the loss restricted to that subset, score on the held-out untreated
/// cells, and select by both rules.
///
/// Within a fold the cells are swept in canonical order with warm starts
/// chained from cell to cell. Folds run in parallel; results are reduced in
/// fold order, so the output is reproducible regardless of thread count.
/// Solver non-convergence on a cell is recorded in [`CvResult::converged`]
/// and never aborts the search.
pub fn cross_validate(
    panel: &PanelData,
    spec: &GridSpec,
    k: usize,
    seed: u64,
    criterion: SelectionRule,
) -> Result<CvResult> {
    spec.validate()?;
    let folds = make_folds(panel, k, seed)?;
    let design = Design::new(panel);
    let full_mask = CellMask::from_cells(panel.observed_cells());
    let bounds = lambda_max_with(panel, &design, &full_mask)?;
    let (axis_l, axis_h, axis_beta) = spec.build_axes(&bounds);
    let grid = build_grid(&axis_l, &axis_h, &axis_beta);
    evaluate_grid(panel, &design, &folds, &grid, criterion, bounds)
}

/// Evaluate a fixed list of triples on prebuilt folds. Shared by the grid
/// search and the refinement stage.
fn evaluate_grid(
    panel: &PanelData,
    design: &Design,
    folds: &CvFolds,
    grid: &[LambdaTriple],
    criterion: SelectionRule,
    bounds: LambdaMax,
) -> Result<CvResult> {

    struct FoldStats {
        mse: Vec<f64>,
        converged: Vec<bool>,
        support_h: Vec<usize>,
        support_beta: Vec<usize>,
        rank_l: Vec<usize>,
    }

    let per_fold: Vec<FoldStats> = folds
        .train_sets
        .par_iter()
        .zip(folds.eval_sets.par_iter())
        .map(|(train, eval)| {
            let mask = CellMask::from_cells(train);
            let mut stats = FoldStats {
                mse: Vec::with_capacity(grid.len()),
                converged: Vec::with_capacity(grid.len()),
                support_h: Vec::with_capacity(grid.len()),
                support_beta: Vec::with_capacity(grid.len()),
                rank_l: Vec::with_capacity(grid.len()),
            };
            let mut warm = None;
            for triple in grid {
                let settings = SolveSettings {
                    lambda_l: triple.lambda_l,
                    lambda_h: triple.lambda_h,
                    lambda_beta: triple.lambda_beta,
                    max_iterations: 500,
                    rel_tolerance: 1e-6,
                    blocks: BlockSet::Full,
                    rank_cap: None,
                    h_coords: None,
                    beta_coords: None,
                };
                let outcome = solve(panel, design, &mask, &settings, warm.as_ref());
                let sse: f64 = eval.iter().map(|&(i, t)| outcome.residual[(i, t)].powi(2)).sum();
                stats.mse.push(sse / eval.len() as f64);
                stats.converged.push(outcome.converged);
                stats
                    .support_h
                    .push(outcome.params.h.iter().filter(|v| v.abs() > ZERO_CUTOFF).count());
                stats
                    .support_beta
                    .push(outcome.params.beta.iter().filter(|v| v.abs() > ZERO_CUTOFF).count());
                stats.rank_l.push(outcome.l_sigma.iter().filter(|s| **s > ZERO_CUTOFF).count());
                warm = Some(outcome.params);
            }
            stats
        })
        .collect();

    let kf = folds.k as f64;
    let mut cv_error = Vec::with_capacity(grid.len());
    let mut cv_se = Vec::with_capacity(grid.len());
    let mut fold_mse = Vec::with_capacity(grid.len());
    let mut converged = Vec::with_capacity(grid.len());
    let mut mean_support_h = Vec::with_capacity(grid.len());
    let mut mean_support_beta = Vec::with_capacity(grid.len());
    let mut mean_rank_l = Vec::with_capacity(grid.len());
    for g in 0..grid.len() {
        let errs: Vec<f64> = per_fold.iter().map(|f| f.mse[g]).collect();
        let mean = errs.iter().sum::<f64>() / kf;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (kf - 1.0);
        cv_error.push(mean);
        cv_se.push((var / kf).sqrt());
        fold_mse.push(errs);
        converged.push(per_fold.iter().map(|f| f.converged[g]).collect());
        mean_support_h.push(per_fold.iter().map(|f| f.support_h[g] as f64).sum::<f64>() / kf);
        mean_support_beta.push(per_fold.iter().map(|f| f.support_beta[g] as f64).sum::<f64>() / kf);
        mean_rank_l.push(per_fold.iter().map(|f| f.rank_l[g] as f64).sum::<f64>() / kf);
    }

    let best_mse = argmin(&cv_error);
    let best_1se = one_se_index(grid, &cv_error, cv_error[best_mse] + cv_se[best_mse], grid[best_mse]);

    Ok(CvResult {
        grid: grid.to_vec(),
        cv_error,
        cv_se,
        fold_mse,
        converged,
        mean_support_h,
        mean_support_beta,
        mean_rank_l,
        best_mse,
        best_1se,
        criterion,
        k: folds.k,
        bounds,
    })
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// The one-standard-error choice: among triples whose error stays within the
/// band and that are component-wise at least as penalized as the minimizer,
/// prefer the largest `λ_H`, then `λ_β`, then `λ_L`. The sparsity penalties
/// get priority because shrinking the model is the point of the rule.
fn one_se_index(grid: &[LambdaTriple], cv_error: &[f64], band: f64, at_min: LambdaTriple) -> usize {
    let mut best: Option<usize> = None;
    for (i, t) in grid.iter().enumerate() {
        if cv_error[i] > band {
            continue;
        }
        if t.lambda_l < at_min.lambda_l
            || t.lambda_h < at_min.lambda_h
            || t.lambda_beta < at_min.lambda_beta
        {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let cur = grid[b];
                (t.lambda_h, t.lambda_beta, t.lambda_l) > (cur.lambda_h, cur.lambda_beta, cur.lambda_l)
            }
        };
        if better {
            best = Some(i);
        }
    }
    // The minimizer itself always qualifies, so the option is never empty.
    best.expect("band contains the minimizer")
}

/// Iterated coordinate refinement around the grid incumbent: after a coarse
/// grid pass, each round probes two interior points per axis between the
/// incumbent's grid neighbors (log-scale when both ends are positive) and
/// adopts improvements.
///
/// Experimental: the plain [`cross_validate`] grid is the reference
/// procedure; this search can land on a different local cell of the CV
/// surface even though each fit is convex.
pub fn hypercube_search(
    panel: &PanelData,
    spec: &GridSpec,
    k: usize,
    seed: u64,
    criterion: SelectionRule,
    rounds: usize,
) -> Result<CvResult> {
    spec.validate()?;
    let folds = make_folds(panel, k, seed)?;
    let design = Design::new(panel);
    let full_mask = CellMask::from_cells(panel.observed_cells());
    let bounds = lambda_max_with(panel, &design, &full_mask)?;
    let (axis_l, axis_h, axis_beta) = spec.build_axes(&bounds);
    let mut grid = build_grid(&axis_l, &axis_h, &axis_beta);
    let mut result = evaluate_grid(panel, &design, &folds, &grid, criterion, bounds)?;

    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    for _ in 0..rounds {
        let incumbent = result.grid[result.best_mse];
        let mut probes = Vec::new();
        for axis in 0..3 {
            let pick = |t: &LambdaTriple| match axis {
                0 => t.lambda_l,
                1 => t.lambda_h,
                _ => t.lambda_beta,
            };
            let center = pick(&incumbent);
            // Neighbors of the incumbent along this axis among evaluated
            // values (the other two coordinates held at the incumbent).
            let mut values: Vec<f64> = result.grid.iter().map(|t| pick(t)).collect();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            values.dedup();
            let pos = values.iter().position(|v| *v == center).unwrap_or(0);
            let lo = if pos > 0 { values[pos - 1] } else { center };
            let hi = if pos + 1 < values.len() { values[pos + 1] } else { center };
            for (a, b) in [(lo, center), (center, hi)] {
                if a == b {
                    continue;
                }
                let probe = if a > 0.0 {
                    // Interior golden-ratio point on the log scale.
                    (a.ln() + INV_PHI * (b.ln() - a.ln())).exp()
                } else {
                    a + INV_PHI * (b - a)
                };
                let mut t = incumbent;
                match axis {
                    0 => t.lambda_l = probe,
                    1 => t.lambda_h = probe,
                    _ => t.lambda_beta = probe,
                }
                probes.push(t);
            }
        }
        probes.retain(|p| !grid.iter().any(|g| g == p));
        if probes.is_empty() {
            break;
        }
        grid.extend(probes);
        // Canonical order keeps the warm-start sweep and the reported grid
        // deterministic after refinement.
        grid.sort_by(|x, y| {
            (y.lambda_l, y.lambda_h, y.lambda_beta)
                .partial_cmp(&(x.lambda_l, x.lambda_h, x.lambda_beta))
                .unwrap()
        });
        result = evaluate_grid(panel, &design, &folds, &grid, criterion, bounds)?;
    }
    Ok(result)
}
