//! Fitting the penalized panel model, penalty upper bounds, two-stage
//! relaxed refits, and optimality diagnostics.
//!
//! The solver minimizes, by block coordinate descent,
//!
//! ```text
//! J = (1/n)‖P(Y − L − XHZ − [V'β] − Γ1' − 1Δ')‖_F²
//!     + λ_L‖L‖_* + λ_H‖H‖₁ + λ_β‖β‖₁
//! ```
//!
//! where the projection `P` and the normalization `n` depend on the
//! [`FitMode`]: under [`FitMode::ImposedNull`] the loss runs over all `N·T`
//! cells (treating every cell as if untreated — the prerequisite for
//! permutation inference), under [`FitMode::ControlOnly`] only over control
//! cells. Covariates are standardized internally and coefficients reported
//! on the original scale; see the crate docs for the model itself.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::design::{CellMask, Design, StdParams};
use crate::error::{Error, Result};
use crate::panel::{ModelParams, PanelData, PenaltyConfig};
use crate::prox::{spectral_norm, svt, thin_svd};
use crate::solver::{solve, BlockSet, SolveOutcome, SolveSettings};

/// Which cells enter the squared-error loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Fit on all `N·T` cells under the no-effect null. Treated-cell
    /// residuals then estimate effects (diluted; see the rule-of-thumb
    /// correction) and are exchangeable under the null, which is what makes
    /// permutation p-values valid.
    ImposedNull,
    /// Fit on control cells only. Effect estimates are not diluted, but the
    /// residuals on treated cells embed the effect, so permutation inference
    /// is invalid.
    ControlOnly,
}

impl std::fmt::Display for FitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitMode::ImposedNull => write!(f, "imposed_null"),
            FitMode::ControlOnly => write!(f, "control_only"),
        }
    }
}

/// Entries with absolute value at or below this count as zero when reporting
/// supports and ranks (and are snapped to exact zero in returned params).
pub const ZERO_CUTOFF: f64 = 1e-10;

/// Safety inflation on the penalty upper bounds: one part in 10⁶ guards the
/// open boundary, so a fit exactly at the bound lands strictly inside the
/// all-zero region despite finite solver tolerance and roundoff.
const LAMBDA_MAX_SAFETY: f64 = 1.0 + 1e-6;

/// A fitted model with solver diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Fitted parameters on the original covariate scale.
    pub params: ModelParams,
    pub mode: FitMode,
    /// Penalty weights and solver controls used.
    pub penalties: PenaltyConfig,
    /// Objective value at initialization and after each outer iteration,
    /// for the standardized problem the solver actually minimizes.
    /// Nonincreasing.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub n_iterations: usize,
    /// Indices `(p, q)` of nonzero entries of `Ĥ` (row-major order).
    pub support_h: Vec<(usize, usize)>,
    /// Indices of nonzero entries of `β̂`.
    pub support_beta: Vec<usize>,
    /// Number of singular values of `L̂` above the zero cutoff.
    pub rank_l: usize,
    /// Non-fatal notes: dropped constant covariates, non-convergence.
    pub warnings: Vec<String>,
    /// Set for relaxed (post) refits: L was hard-truncated to this rank
    /// instead of soft-thresholded.
    pub hard_rank_cap: Option<usize>,
}

impl FitResult {
    /// Final objective value (standardized problem).
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace never empty")
    }
}

pub(crate) fn mode_mask(panel: &PanelData, mode: FitMode) -> CellMask {
    let (n, t) = (panel.n_units(), panel.n_periods());
    match mode {
        FitMode::ImposedNull => CellMask::all(n, t),
        FitMode::ControlOnly => CellMask::from_cells(panel.observed_cells()),
    }
}

/// Fit the penalized model on `panel` in the given mode.
///
/// Initialization is all-zero; the objective is convex, so the solution is
/// initialization-independent up to tolerance. Non-convergence within
/// `max_iterations` is reported via `converged = false` (best iterate
/// returned), not as an error.
pub fn fit(panel: &PanelData, penalties: &PenaltyConfig, mode: FitMode) -> Result<FitResult> {
    penalties.validate()?;
    let design = Design::new(panel);
    let mask = mode_mask(panel, mode);
    let settings = SolveSettings {
        lambda_l: penalties.lambda_l,
        lambda_h: penalties.lambda_h,
        lambda_beta: penalties.lambda_beta,
        max_iterations: penalties.max_iterations,
        rel_tolerance: penalties.rel_tolerance,
        blocks: BlockSet::Full,
        rank_cap: None,
        h_coords: None,
        beta_coords: None,
    };
    let outcome = solve(panel, &design, &mask, &settings, None);
    Ok(finish(&design, outcome, *penalties, mode, None))
}

/// Relaxed two-stage refit: drop the l1 penalties, restrict `H`/`β` to the
/// first stage's supports (everything outside pinned to zero), and constrain
/// `L` to the first stage's rank via hard-truncated SVD (no singular-value
/// shrinkage).
///
/// `mode` must match the first stage's mode. Supports and rank never grow.
pub fn fit_post(panel: &PanelData, first_stage: &FitResult, mode: FitMode) -> Result<FitResult> {
    if mode != first_stage.mode {
        return Err(Error::config(format!(
            "post refit mode {mode} does not match first-stage mode {}",
            first_stage.mode
        )));
    }
    let design = Design::new(panel);
    let h_coords = map_h_support(&design, &first_stage.support_h)?;
    let beta_coords = map_beta_support(&design, &first_stage.support_beta)?;
    let mask = mode_mask(panel, mode);
    let mut penalties = first_stage.penalties;
    penalties.lambda_l = 0.0;
    penalties.lambda_h = 0.0;
    penalties.lambda_beta = 0.0;
    let settings = SolveSettings {
        lambda_l: 0.0,
        lambda_h: 0.0,
        lambda_beta: 0.0,
        max_iterations: penalties.max_iterations,
        rel_tolerance: penalties.rel_tolerance,
        blocks: BlockSet::Full,
        rank_cap: Some(first_stage.rank_l),
        h_coords: Some(h_coords),
        beta_coords: Some(beta_coords),
    };
    let outcome = solve(panel, &design, &mask, &settings, None);
    Ok(finish(&design, outcome, penalties, mode, Some(first_stage.rank_l)))
}

fn map_h_support(design: &Design, support: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
    support
        .iter()
        .map(|&(p, q)| {
            let kp = design.x_kept.iter().position(|&orig| orig == p);
            let kq = design.z_kept.iter().position(|&orig| orig == q);
            match (kp, kq) {
                (Some(kp), Some(kq)) => Ok((kp, kq)),
                _ => Err(Error::config(format!(
                    "first-stage H support entry ({p}, {q}) refers to a dropped covariate"
                ))),
            }
        })
        .collect()
}

fn map_beta_support(design: &Design, support: &[usize]) -> Result<Vec<usize>> {
    support
        .iter()
        .map(|&j| {
            design
                .v_kept
                .iter()
                .position(|&orig| orig == j)
                .ok_or_else(|| Error::config(format!("first-stage β support entry {j} refers to a dropped covariate")))
        })
        .collect()
}

/// Snap sub-cutoff coefficients to exact zero, gather supports/rank, and
/// back-transform to the original scale.
fn finish(
    design: &Design,
    mut outcome: SolveOutcome,
    penalties: PenaltyConfig,
    mode: FitMode,
    hard_rank_cap: Option<usize>,
) -> FitResult {
    snap_to_zero(&mut outcome.params);
    let rank_l = outcome.l_sigma.iter().filter(|&&s| s > ZERO_CUTOFF).count();
    let params = design.restore(&outcome.params);
    let support_h = params.h_support();
    let support_beta = params.beta_support();
    let mut warnings = design.dropped.clone();
    if !outcome.converged {
        warnings.push(format!(
            "solver stopped at the iteration cap ({} iterations) before reaching rel_tolerance",
            outcome.n_iterations
        ));
    }
    FitResult {
        params,
        mode,
        penalties,
        objective_trace: outcome.objective_trace,
        converged: outcome.converged,
        n_iterations: outcome.n_iterations,
        support_h,
        support_beta,
        rank_l,
        warnings,
        hard_rank_cap,
    }
}

fn snap_to_zero(std: &mut StdParams) {
    std.h.mapv_inplace(|v| if v.abs() <= ZERO_CUTOFF { 0.0 } else { v });
    std.beta.mapv_inplace(|v| if v.abs() <= ZERO_CUTOFF { 0.0 } else { v });
}

/// The three penalty upper bounds: at or above these weights the respective
/// block is entirely zeroed out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaMax {
    pub lambda_l: f64,
    pub lambda_h: f64,
    pub lambda_beta: f64,
}

/// Compute all three penalty upper bounds for `panel` in `mode`.
///
/// Fixed effects (never penalized) are first fit alone to near-machine
/// precision; the bounds are then read off the masked residual `R`:
/// `(2/n)·σ_max(P(R))` for the nuclear norm and the largest absolute feature
/// correlation `(2/n)·|⟨feature, P(R)⟩|` for each l1 block, on standardized
/// covariates. Each bound is exact for its block in isolation and an upper
/// bound jointly.
pub fn lambda_max(panel: &PanelData, mode: FitMode) -> Result<LambdaMax> {
    let design = Design::new(panel);
    let mask = mode_mask(panel, mode);
    lambda_max_with(panel, &design, &mask)
}

pub(crate) fn lambda_max_with(panel: &PanelData, design: &Design, mask: &CellMask) -> Result<LambdaMax> {
    let settings = SolveSettings {
        lambda_l: 0.0,
        lambda_h: 0.0,
        lambda_beta: 0.0,
        max_iterations: crate::solver::FE_SOLVE_MAX_ITERATIONS,
        rel_tolerance: crate::solver::FE_SOLVE_TOLERANCE,
        blocks: BlockSet::FixedEffectsOnly,
        rank_cap: None,
        h_coords: None,
        beta_coords: None,
    };
    let outcome = solve(panel, design, mask, &settings, None);
    let n = mask.len() as f64;
    let mut masked = Array2::zeros(outcome.residual.dim());
    for &(i, t) in &mask.cells {
        masked[(i, t)] = outcome.residual[(i, t)];
    }
    let lambda_l = 2.0 / n * spectral_norm(&masked) * LAMBDA_MAX_SAFETY;

    let mut max_h: f64 = 0.0;
    for p in 0..design.p() {
        for q in 0..design.q() {
            let mut corr = 0.0;
            for &(i, t) in &mask.cells {
                corr += design.x[(i, p)] * design.z[(q, t)] * outcome.residual[(i, t)];
            }
            max_h = max_h.max(corr.abs());
        }
    }
    let lambda_h = 2.0 / n * max_h * LAMBDA_MAX_SAFETY;

    let mut max_b: f64 = 0.0;
    for slice in &design.v {
        let mut corr = 0.0;
        for &(i, t) in &mask.cells {
            corr += slice[(i, t)] * outcome.residual[(i, t)];
        }
        max_b = max_b.max(corr.abs());
    }
    let lambda_beta = 2.0 / n * max_b * LAMBDA_MAX_SAFETY;

    Ok(LambdaMax { lambda_l, lambda_h, lambda_beta })
}

/// Upper bound for `lambda_l` alone; see [`lambda_max`].
pub fn lambda_max_l(panel: &PanelData, mode: FitMode) -> Result<f64> {
    Ok(lambda_max(panel, mode)?.lambda_l)
}

/// Upper bound for `lambda_h` alone; see [`lambda_max`].
pub fn lambda_max_h(panel: &PanelData, mode: FitMode) -> Result<f64> {
    Ok(lambda_max(panel, mode)?.lambda_h)
}

/// Upper bound for `lambda_beta` alone; see [`lambda_max`].
pub fn lambda_max_beta(panel: &PanelData, mode: FitMode) -> Result<f64> {
    Ok(lambda_max(panel, mode)?.lambda_beta)
}

/// Subgradient optimality certificate for a converged fit.
///
/// All quantities are measured on the standardized problem the solver
/// minimizes, with `E = Y − prediction` recomputed from the returned
/// parameters:
///
/// * zero coefficients: the feature correlation `(2/n)⟨feature, P(E)⟩` may
///   not exceed λ in magnitude (`*_zero_max_excess` is the worst overshoot);
/// * nonzero coefficients: the correlation must equal `λ·sign(coef)`
///   (`*_nonzero_max_dev` is the worst deviation);
/// * `L`: must be a fixed point of the soft-impute step,
///   `L = svt(L + P(E), λ_L·n/2)` (hard truncation for post refits);
/// * fixed effects: masked residual row/column means must vanish.
///
/// `satisfied` gates on the regularized blocks only (the four subgradient
/// figures and the `L` fixed point). The fixed-effect means are reported but
/// not gated: the effects are re-solved in closed form at the *start* of
/// each iteration, so at the final iterate their residual means lag the last
/// `H`/`β`/`L` updates by one block pass and shrink with the solver
/// tolerance rather than matching it.
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    pub h_zero_max_excess: f64,
    pub h_nonzero_max_dev: f64,
    pub beta_zero_max_excess: f64,
    pub beta_nonzero_max_dev: f64,
    /// Max-abs entry difference between `L` and one soft-impute (or
    /// hard-truncation) step applied to it.
    pub l_fixed_point_gap: f64,
    /// Max absolute masked-residual row/column mean (diagnostic, not gated).
    pub fe_max_abs_mean: f64,
    pub tolerance: f64,
    pub satisfied: bool,
}

/// Evaluate the KKT certificate for `fit` at the given tolerance.
pub fn kkt_report(panel: &PanelData, fit: &FitResult, tolerance: f64) -> Result<KktReport> {
    let design = Design::new(panel);
    let mask = mode_mask(panel, fit.mode);
    let n = mask.len() as f64;
    let residual = panel.residuals(&fit.params);

    let mut h_zero_max_excess = 0.0f64;
    let mut h_nonzero_max_dev = 0.0f64;
    for (kp, &p) in design.x_kept.iter().enumerate() {
        for (kq, &q) in design.z_kept.iter().enumerate() {
            let mut corr = 0.0;
            for &(i, t) in &mask.cells {
                corr += design.x[(i, kp)] * design.z[(kq, t)] * residual[(i, t)];
            }
            corr *= 2.0 / n;
            let coef = fit.params.h[(p, q)];
            if coef == 0.0 {
                h_zero_max_excess = h_zero_max_excess.max(corr.abs() - fit.penalties.lambda_h);
            } else {
                h_nonzero_max_dev =
                    h_nonzero_max_dev.max((corr - fit.penalties.lambda_h * coef.signum()).abs());
            }
        }
    }

    let mut beta_zero_max_excess = 0.0f64;
    let mut beta_nonzero_max_dev = 0.0f64;
    for (kj, &j) in design.v_kept.iter().enumerate() {
        let mut corr = 0.0;
        for &(i, t) in &mask.cells {
            corr += design.v[kj][(i, t)] * residual[(i, t)];
        }
        corr *= 2.0 / n;
        let coef = fit.params.beta[j];
        if coef == 0.0 {
            beta_zero_max_excess = beta_zero_max_excess.max(corr.abs() - fit.penalties.lambda_beta);
        } else {
            beta_nonzero_max_dev =
                beta_nonzero_max_dev.max((corr - fit.penalties.lambda_beta * coef.signum()).abs());
        }
    }

    let mut target = fit.params.l.clone();
    for &(i, t) in &mask.cells {
        target[(i, t)] += residual[(i, t)];
    }
    let stepped = match fit.hard_rank_cap {
        Some(cap) => {
            let f = thin_svd(&target);
            let keep = f.sigma.iter().take(cap).filter(|&&s| s > 0.0).count();
            if keep == 0 {
                Array2::zeros(target.dim())
            } else {
                let sigma = f.sigma[..keep].to_vec();
                f.reconstruct_with(keep, &sigma)
            }
        }
        None => svt(&target, fit.penalties.lambda_l * n / 2.0).value,
    };
    let l_fixed_point_gap = fit
        .params
        .l
        .iter()
        .zip(stepped.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);

    let (n_units, n_periods) = (panel.n_units(), panel.n_periods());
    let mut row_sum = vec![0.0f64; n_units];
    let mut row_cnt = vec![0usize; n_units];
    let mut col_sum = vec![0.0f64; n_periods];
    let mut col_cnt = vec![0usize; n_periods];
    for &(i, t) in &mask.cells {
        row_sum[i] += residual[(i, t)];
        row_cnt[i] += 1;
        col_sum[t] += residual[(i, t)];
        col_cnt[t] += 1;
    }
    let mut fe_max_abs_mean = 0.0f64;
    for i in 0..n_units {
        if row_cnt[i] > 0 {
            fe_max_abs_mean = fe_max_abs_mean.max((row_sum[i] / row_cnt[i] as f64).abs());
        }
    }
    for t in 0..n_periods {
        if col_cnt[t] > 0 {
            fe_max_abs_mean = fe_max_abs_mean.max((col_sum[t] / col_cnt[t] as f64).abs());
        }
    }

    let satisfied = h_zero_max_excess <= tolerance
        && h_nonzero_max_dev <= tolerance
        && beta_zero_max_excess <= tolerance
        && beta_nonzero_max_dev <= tolerance
        && l_fixed_point_gap <= tolerance;

    Ok(KktReport {
        h_zero_max_excess,
        h_nonzero_max_dev,
        beta_zero_max_excess,
        beta_nonzero_max_dev,
        l_fixed_point_gap,
        fe_max_abs_mean,
        tolerance,
        satisfied,
    })
}
