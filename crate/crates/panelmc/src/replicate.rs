//! Simulation-study engine: runs the full estimate-select-infer pipeline on
//! many synthetic panels and aggregates the quantities behind the study
//! figures.
//!
//! Each run generates one panel, cross-validates the penalties once, and
//! fits six estimator variants that share that selection:
//!
//! - `no_reg`: covariates enter unregularized (their penalties pinned to 0);
//!   only the low-rank penalty is tuned, by its own one-dimensional search.
//! - `imp0`: the penalized fit with the no-effect null imposed on all cells,
//!   at the CV-error-minimizing penalties.
//! - `imp0_rot`: the same fit, reported with the rule-of-thumb rescaling.
//! - `imp0_post`: relaxed refit on `imp0`'s selected support and rank.
//! - `imp0_1se`: the imposed-null fit at the one-standard-error penalties.
//! - `not0`: the fit whose loss uses untreated cells only, at the shared
//!   CV-error-minimizing penalties (no inference available).
//!
//! Runs are seeded independently from a base seed by stable run index, so
//! results are reproducible for any worker count, and rows are emitted in
//! run order.

use crate::dgp::{generate, DgpConfig};
use crate::effects::estimate_atet;
use crate::error::{Error, Result};
use crate::estimator::{fit, fit_post, FitMode, FitResult};
use crate::inference::{derived_seed, permutation_p_value, PermutationPlan};
use crate::panel::PenaltyConfig;
use crate::selection::{cross_validate, log_axis, GridSpec, LambdaTriple, SelectionRule};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Six estimator variants compared throughout the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NoReg,
    Imp0,
    Imp0Rot,
    Imp0Post,
    Imp0OneSe,
    Not0,
}

pub const ALL_VARIANTS: [Variant; 6] = [
    Variant::NoReg,
    Variant::Imp0,
    Variant::Imp0Rot,
    Variant::Imp0Post,
    Variant::Imp0OneSe,
    Variant::Not0,
];

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Variant::NoReg => "no_reg",
            Variant::Imp0 => "imp0",
            Variant::Imp0Rot => "imp0_rot",
            Variant::Imp0Post => "imp0_post",
            Variant::Imp0OneSe => "imp0_1se",
            Variant::Not0 => "not0",
        };
        write!(f, "{name}")
    }
}

/// Replication targets: which figure's protocol to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// Treatment-effect estimates by sample size (boxplots).
    Fig3,
    /// Median indexed squared error by sample size.
    Fig4,
    /// Interaction model size ratio by sample size.
    Fig5,
    /// Median indexed squared error by signal-to-noise ratio.
    Fig8,
    /// Mean squared error of interaction coefficients by sample size.
    Fig9,
    /// Interaction model size ratio by signal-to-noise ratio.
    Fig10,
}

impl Target {
    pub const ALL: [Target; 6] =
        [Target::Fig3, Target::Fig4, Target::Fig5, Target::Fig8, Target::Fig9, Target::Fig10];

    /// The per-run quantity this figure aggregates.
    pub fn quantity(self) -> &'static str {
        match self {
            Target::Fig3 => "tau_hat",
            Target::Fig4 | Target::Fig8 => "indexed_sq_err",
            Target::Fig5 | Target::Fig10 => "h_size_ratio",
            Target::Fig9 => "h_mse",
        }
    }

    /// Variants whose aggregate is meaningful for this figure. Model-size
    /// figures skip the rescaled and relaxed variants (identical supports by
    /// construction); the coefficient-error figure skips only the rescaled
    /// one (identical coefficients).
    pub fn summary_variants(self) -> &'static [Variant] {
        match self {
            Target::Fig5 | Target::Fig10 => {
                &[Variant::NoReg, Variant::Imp0, Variant::Imp0OneSe, Variant::Not0]
            }
            Target::Fig9 => &[
                Variant::NoReg,
                Variant::Imp0,
                Variant::Imp0Post,
                Variant::Imp0OneSe,
                Variant::Not0,
            ],
            _ => &ALL_VARIANTS,
        }
    }

    /// Full-study replication count per cell.
    fn full_runs(self) -> usize {
        match self {
            Target::Fig3 | Target::Fig4 | Target::Fig5 | Target::Fig9 => 700,
            Target::Fig8 | Target::Fig10 => 1400,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Target::Fig3 => "fig3",
            Target::Fig4 => "fig4",
            Target::Fig5 => "fig5",
            Target::Fig8 => "fig8",
            Target::Fig9 => "fig9",
            Target::Fig10 => "fig10",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "fig3" => Ok(Target::Fig3),
            "fig4" => Ok(Target::Fig4),
            "fig5" => Ok(Target::Fig5),
            "fig8" => Ok(Target::Fig8),
            "fig9" => Ok(Target::Fig9),
            "fig10" => Ok(Target::Fig10),
            other => Err(Error::config(format!(
                "unknown replication target {other:?}; expected one of fig3, fig4, fig5, fig8, fig9, fig10"
            ))),
        }
    }
}

/// Controls for a replication run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateSettings {
    pub target: Target,
    /// Shrinks panel dimensions (linearly), the cell-covariate count
    /// (quadratically), and replication counts (cubically) for desk-scale
    /// runs. 1.0 reproduces the full study protocol.
    pub scale: f64,
    /// Overrides the scaled per-cell replication count.
    pub runs_override: Option<usize>,
    pub seed: u64,
    pub folds: usize,
    /// Log-spaced points per penalty axis in the selection grid (zero joins
    /// the interaction and covariate axes automatically). The default keeps
    /// desk-scale sweeps tractable; raise it for production-grade selection.
    pub grid_points: usize,
}

impl ReplicateSettings {
    pub fn new(target: Target) -> Self {
        ReplicateSettings {
            target,
            scale: 1.0,
            runs_override: None,
            seed: 0,
            folds: 5,
            grid_points: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::config(format!("scale must lie in (0, 1], got {}", self.scale)));
        }
        if self.grid_points == 0 {
            return Err(Error::config("grid needs at least one point per axis"));
        }
        Ok(())
    }
}

/// One experiment cell: a panel configuration and its replication count.
#[derive(Debug, Clone)]
pub struct CellPlan {
    pub config: DgpConfig,
    pub runs: usize,
    /// Global index of this cell's first run; run seeds derive from
    /// `seed_offset + run`, so plans are reproducible for any worker count.
    pub seed_offset: usize,
}

/// Scale a full-study count linearly, with a floor.
fn scale_count(base: usize, scale: f64, min: usize) -> usize {
    ((base as f64 * scale).round() as usize).max(min)
}

/// Build the default study configuration at `scale`, before any per-cell
/// overrides. Covariate counts shrink with the panel (the cell-covariate
/// count quadratically, since the full study uses far more of them than
/// cells would support at desk scale), activity probabilities are floored
/// at one expected active coefficient, and exact-count masks keep the true
/// model size identical across runs of a cell.
fn scaled_base_config(scale: f64) -> DgpConfig {
    let mut config = DgpConfig::default();
    config.n_units = scale_count(config.n_units, scale, 2);
    config.n_periods = scale_count(config.n_periods, scale, 6);
    config.n_unit_covariates = scale_count(config.n_unit_covariates, scale, 1);
    config.n_time_covariates = scale_count(config.n_time_covariates, scale, 1);
    config.n_cell_covariates = scale_count(config.n_cell_covariates, scale * scale, 1);
    config.rank_l = config.rank_l.min(config.n_units).min(config.n_periods);
    let pq = (config.n_unit_covariates * config.n_time_covariates) as f64;
    config.h_prob = config.h_prob.max(1.0 / pq);
    config.b_prob = config.b_prob.max(1.0 / config.n_cell_covariates as f64);
    config.exact_count_bernoulli = true;
    config
}

/// Lay out the experiment cells for `settings`: the sample-size figures
/// sweep the period count over the study grid (clamped, deduplicated); the
/// signal-strength figures sweep the shock SD over {4, 2, 1, 0.5}.
pub fn plan_cells(settings: &ReplicateSettings) -> Result<Vec<CellPlan>> {
    settings.validate()?;
    let base = scaled_base_config(settings.scale);
    let runs = settings
        .runs_override
        .unwrap_or_else(|| {
            let full = settings.target.full_runs() as f64;
            (full * settings.scale.powi(3)).round().max(4.0) as usize
        })
        .max(1);
    let mut configs = Vec::new();
    match settings.target {
        Target::Fig3 | Target::Fig4 | Target::Fig5 | Target::Fig9 => {
            let mut seen = Vec::new();
            for t_full in [10usize, 20, 40, 80, 160, 320, 640] {
                let t = scale_count(t_full, settings.scale, 6);
                if seen.contains(&t) {
                    continue;
                }
                seen.push(t);
                let mut config = base.clone();
                config.n_periods = t;
                config.rank_l = config.rank_l.min(t);
                configs.push(config);
            }
        }
        Target::Fig8 | Target::Fig10 => {
            for sigma in [4.0f64, 2.0, 1.0, 0.5] {
                let mut config = base.clone();
                config.sigma_eps = sigma;
                configs.push(config);
            }
        }
    }
    let mut cells = Vec::with_capacity(configs.len());
    let mut offset = 0;
    for config in configs {
        config.validate()?;
        cells.push(CellPlan { config, runs, seed_offset: offset });
        offset += runs;
    }
    Ok(cells)
}

/// One variant's outcome on one synthetic panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub target: String,
    pub n_units: usize,
    pub n_periods: usize,
    pub sigma_eps: f64,
    /// Run index within the cell.
    pub run: usize,
    /// Seed the panel was generated from.
    pub dgp_seed: u64,
    pub variant: Variant,
    pub tau_true: f64,
    /// The variant's headline estimate (rescaled for `imp0_rot`, raw
    /// otherwise).
    pub tau_hat: f64,
    pub tau_hat_raw: f64,
    pub tau_hat_rot: f64,
    pub sq_err: f64,
    /// `sq_err` divided by the same run's `imp0` squared error; absent when
    /// that baseline error is exactly zero.
    pub indexed_sq_err: Option<f64>,
    pub rank_l: usize,
    pub h_support: usize,
    pub beta_support: usize,
    pub h_true_support: usize,
    /// `h_support / h_true_support`; absent when the true model is empty.
    pub h_size_ratio: Option<f64>,
    /// Mean squared deviation of the interaction coefficients from truth.
    pub h_mse: f64,
    /// Moving-block permutation p-value; absent for fits whose loss skips
    /// treated cells (inference undefined there).
    pub p_value: Option<f64>,
    pub converged: bool,
    pub lambda_l: f64,
    pub lambda_h: f64,
    pub lambda_beta: f64,
}

/// Aggregate of one quantity over a cell's runs for one variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub target: String,
    pub n_units: usize,
    pub n_periods: usize,
    pub sigma_eps: f64,
    pub variant: Variant,
    pub quantity: String,
    /// Runs with a defined value of the quantity.
    pub n_runs: usize,
    pub q10: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q90: f64,
    pub mean: f64,
}

fn penalty_config(triple: LambdaTriple) -> PenaltyConfig {
    PenaltyConfig {
        lambda_l: triple.lambda_l,
        lambda_h: triple.lambda_h,
        lambda_beta: triple.lambda_beta,
        ..PenaltyConfig::default()
    }
}

/// Cross-validate once and fit all six variants on one generated panel.
fn run_once(
    target_label: &str,
    config: &DgpConfig,
    run: usize,
    run_seed: u64,
    folds: usize,
    grid_points: usize,
) -> Result<Vec<RunRecord>> {
    let mut cfg = config.clone();
    cfg.seed = derived_seed(run_seed, 0);
    let cv_seed = derived_seed(run_seed, 1);
    let gen = generate(&cfg)?;
    let panel = &gen.panel;

    let spec = GridSpec::with_points(grid_points);
    let cv = cross_validate(panel, &spec, folds, cv_seed, SelectionRule::Mse)?;
    // The unregularized variant tunes only the low-rank penalty, on the same
    // folds (same seed), with the covariate penalties pinned to zero. Its
    // axis reuses the shared upper bound as an anchor.
    let noreg_spec = GridSpec::explicit(
        log_axis(cv.bounds.lambda_l, grid_points, 1e-4, false),
        vec![0.0],
        vec![0.0],
    );
    let noreg_cv = cross_validate(panel, &noreg_spec, folds, cv_seed, SelectionRule::Mse)?;

    let fit_imp0 = fit(panel, &penalty_config(cv.best_mse_triple()), FitMode::ImposedNull)?;
    let fit_1se = fit(panel, &penalty_config(cv.best_1se_triple()), FitMode::ImposedNull)?;
    let fit_not0 = fit(panel, &penalty_config(cv.best_mse_triple()), FitMode::ControlOnly)?;
    let fit_noreg =
        fit(panel, &penalty_config(noreg_cv.best_mse_triple()), FitMode::ImposedNull)?;
    let fit_relaxed = fit_post(panel, &fit_imp0, FitMode::ImposedNull)?;

    let h_true_support = gen.truth.h.iter().filter(|v| **v != 0.0).count();
    let plan = PermutationPlan::moving_block(panel.n_units(), panel.n_periods())?;

    let mut records = Vec::with_capacity(ALL_VARIANTS.len());
    let mut baseline_sq_err = None;
    for variant in ALL_VARIANTS {
        let fit_ref: &FitResult = match variant {
            Variant::NoReg => &fit_noreg,
            Variant::Imp0 | Variant::Imp0Rot => &fit_imp0,
            Variant::Imp0Post => &fit_relaxed,
            Variant::Imp0OneSe => &fit_1se,
            Variant::Not0 => &fit_not0,
        };
        let effect = estimate_atet(panel, fit_ref)?;
        let tau_hat = match variant {
            Variant::Imp0Rot => effect.atet_rot,
            _ => effect.atet,
        };
        let sq_err = (tau_hat - gen.tau).powi(2);
        if variant == Variant::Imp0 {
            baseline_sq_err = Some(sq_err);
        }
        let p_value = match fit_ref.mode {
            FitMode::ImposedNull => Some(permutation_p_value(panel, fit_ref, &plan)?.p_value),
            FitMode::ControlOnly => None,
        };
        let h_mse = {
            let diff = &fit_ref.params.h - &gen.truth.h;
            let len = diff.len().max(1);
            diff.iter().map(|d| d * d).sum::<f64>() / len as f64
        };
        records.push(RunRecord {
            target: target_label.to_string(),
            n_units: cfg.n_units,
            n_periods: cfg.n_periods,
            sigma_eps: cfg.sigma_eps,
            run,
            dgp_seed: cfg.seed,
            variant,
            tau_true: gen.tau,
            tau_hat,
            tau_hat_raw: effect.atet,
            tau_hat_rot: effect.atet_rot,
            sq_err,
            indexed_sq_err: None,
            rank_l: fit_ref.rank_l,
            h_support: fit_ref.support_h.len(),
            beta_support: fit_ref.support_beta.len(),
            h_true_support,
            h_size_ratio: (h_true_support > 0)
                .then(|| fit_ref.support_h.len() as f64 / h_true_support as f64),
            h_mse,
            p_value,
            converged: fit_ref.converged,
            lambda_l: fit_ref.penalties.lambda_l,
            lambda_h: fit_ref.penalties.lambda_h,
            lambda_beta: fit_ref.penalties.lambda_beta,
        });
    }
    let baseline = baseline_sq_err.expect("imp0 always present");
    for record in &mut records {
        record.indexed_sq_err = (baseline > 0.0).then(|| record.sq_err / baseline);
    }
    Ok(records)
}

/// Execute one cell's runs in parallel, rows returned in run order.
fn run_cell(
    target_label: &str,
    cell: &CellPlan,
    base_seed: u64,
    folds: usize,
    grid_points: usize,
) -> Result<Vec<RunRecord>> {
    let results: Vec<Result<Vec<RunRecord>>> = (0..cell.runs)
        .into_par_iter()
        .map(|run| {
            let run_seed = derived_seed(base_seed, (cell.seed_offset + run) as u64);
            run_once(target_label, &cell.config, run, run_seed, folds, grid_points)
        })
        .collect();
    let mut rows = Vec::with_capacity(cell.runs * ALL_VARIANTS.len());
    for result in results {
        rows.extend(result?);
    }
    Ok(rows)
}

/// Linear-interpolation quantile of an unsorted sample.
fn quantile(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite aggregates"));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Aggregate `rows` into per-(cell, variant) quantile summaries of the
/// target's quantity, in cell-then-variant order.
pub fn summarize(target: Target, rows: &[RunRecord]) -> Vec<SummaryRecord> {
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for row in rows {
        let key = (row.n_units, row.n_periods, row.sigma_eps);
        if !cells.contains(&key) {
            cells.push(key);
        }
    }
    let quantity = target.quantity();
    let mut out = Vec::new();
    for (n_units, n_periods, sigma_eps) in cells {
        for &variant in target.summary_variants() {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| {
                    r.n_units == n_units
                        && r.n_periods == n_periods
                        && r.sigma_eps == sigma_eps
                        && r.variant == variant
                })
                .filter_map(|r| match target {
                    Target::Fig3 => Some(r.tau_hat),
                    Target::Fig4 | Target::Fig8 => r.indexed_sq_err,
                    Target::Fig5 | Target::Fig10 => r.h_size_ratio,
                    Target::Fig9 => Some(r.h_mse),
                })
                .collect();
            if values.is_empty() {
                continue;
            }
            out.push(SummaryRecord {
                target: target.to_string(),
                n_units,
                n_periods,
                sigma_eps,
                variant,
                quantity: quantity.to_string(),
                n_runs: values.len(),
                q10: quantile(&values, 0.10),
                q25: quantile(&values, 0.25),
                median: quantile(&values, 0.50),
                q75: quantile(&values, 0.75),
                q90: quantile(&values, 0.90),
                mean: values.iter().sum::<f64>() / values.len() as f64,
            });
        }
    }
    out
}

/// Rows plus aggregates for one replication invocation.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub rows: Vec<RunRecord>,
    pub summary: Vec<SummaryRecord>,
}

/// Run a figure's full protocol at the requested scale.
pub fn replicate(settings: &ReplicateSettings) -> Result<ReplicateOutcome> {
    let cells = plan_cells(settings)?;
    let label = settings.target.to_string();
    let mut rows = Vec::new();
    for cell in &cells {
        rows.extend(run_cell(&label, cell, settings.seed, settings.folds, settings.grid_points)?);
    }
    let summary = summarize(settings.target, &rows);
    Ok(ReplicateOutcome { rows, summary })
}

/// Controls for a free-form simulation (no figure protocol): one
/// configuration, many runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSettings {
    pub config: DgpConfig,
    pub runs: usize,
    pub seed: u64,
    pub folds: usize,
    pub grid_points: usize,
}

/// Run `runs` independent replications of one configuration; rows in run
/// order, all six variants per run.
pub fn simulate(settings: &SimulateSettings) -> Result<Vec<RunRecord>> {
    if settings.runs == 0 {
        return Err(Error::config("simulation needs at least one run"));
    }
    if settings.grid_points == 0 {
        return Err(Error::config("grid needs at least one point per axis"));
    }
    settings.config.validate()?;
    let cell = CellPlan { config: settings.config.clone(), runs: settings.runs, seed_offset: 0 };
    run_cell("simulate", &cell, settings.seed, settings.folds, settings.grid_points)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Write per-run rows as CSV (one row per run × variant).
pub fn write_runs_csv(path: &Path, rows: &[RunRecord]) -> Result<()> {
    let mut text = String::from(
        "target,n_units,n_periods,sigma_eps,run,dgp_seed,variant,tau_true,tau_hat,tau_hat_raw,tau_hat_rot,sq_err,indexed_sq_err,rank_l,h_support,beta_support,h_true_support,h_size_ratio,h_mse,p_value,converged,lambda_l,lambda_h,lambda_beta\n",
    );
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.target,
            r.n_units,
            r.n_periods,
            r.sigma_eps,
            r.run,
            r.dgp_seed,
            r.variant,
            r.tau_true,
            r.tau_hat,
            r.tau_hat_raw,
            r.tau_hat_rot,
            r.sq_err,
            fmt_opt(r.indexed_sq_err),
            r.rank_l,
            r.h_support,
            r.beta_support,
            r.h_true_support,
            fmt_opt(r.h_size_ratio),
            r.h_mse,
            fmt_opt(r.p_value),
            r.converged as u8,
            r.lambda_l,
            r.lambda_h,
            r.lambda_beta,
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

/// Write aggregated summaries as CSV.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRecord]) -> Result<()> {
    let mut text = String::from(
        "target,n_units,n_periods,sigma_eps,variant,quantity,n_runs,q10,q25,median,q75,q90,mean\n",
    );
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.target,
            r.n_units,
            r.n_periods,
            r.sigma_eps,
            r.variant,
            r.quantity,
            r.n_runs,
            r.q10,
            r.q25,
            r.median,
            r.q75,
            r.q90,
            r.mean,
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_scale_dimensions_and_run_counts() {
        let mut settings = ReplicateSettings::new(Target::Fig3);
        settings.scale = 0.2;
        settings.seed = 11;
        let cells = plan_cells(&settings).unwrap();
        // Period grid 10..640 scaled by 0.2, clamped at 6, deduplicated:
        // {6, 6, 8, 16, 32, 64, 128} -> {6, 8, 16, 32, 64, 128}.
        let periods: Vec<usize> = cells.iter().map(|c| c.config.n_periods).collect();
        assert_eq!(periods, vec![6, 8, 16, 32, 64, 128]);
        for cell in &cells {
            assert_eq!(cell.config.n_units, 20);
            assert_eq!(cell.config.n_unit_covariates, 10);
            assert_eq!(cell.config.n_time_covariates, 4);
            assert_eq!(cell.config.n_cell_covariates, 40);
            assert!(cell.config.exact_count_bernoulli);
            // 700 · 0.2³ = 5.6 -> 6 runs.
            assert_eq!(cell.runs, 6);
        }
        // Offsets tile the global run index space.
        let offsets: Vec<usize> = cells.iter().map(|c| c.seed_offset).collect();
        assert_eq!(offsets, vec![0, 6, 12, 18, 24, 30]);
    }

    #[test]
    fn signal_strength_plan_sweeps_the_shock_scale() {
        let mut settings = ReplicateSettings::new(Target::Fig10);
        settings.scale = 0.15;
        let cells = plan_cells(&settings).unwrap();
        let sigmas: Vec<f64> = cells.iter().map(|c| c.config.sigma_eps).collect();
        assert_eq!(sigmas, vec![4.0, 2.0, 1.0, 0.5]);
        // Activity floors keep at least one expected active coefficient.
        for cell in &cells {
            let pq = cell.config.n_unit_covariates * cell.config.n_time_covariates;
            assert!(cell.config.h_prob * pq as f64 >= 1.0 - 1e-12);
            assert!(cell.config.b_prob * cell.config.n_cell_covariates as f64 >= 1.0 - 1e-12);
        }
        // 1400 · 0.15³ ≈ 4.7 -> 5, above the floor of 4.
        assert_eq!(cells[0].runs, 5);
    }

    #[test]
    fn runs_override_wins_and_scale_is_validated() {
        let mut settings = ReplicateSettings::new(Target::Fig5);
        settings.scale = 0.2;
        settings.runs_override = Some(2);
        let cells = plan_cells(&settings).unwrap();
        assert!(cells.iter().all(|c| c.runs == 2));
        settings.scale = 0.0;
        assert!(plan_cells(&settings).is_err());
        settings.scale = 1.5;
        assert!(plan_cells(&settings).is_err());
    }

    #[test]
    fn simulate_emits_six_variants_per_run_deterministically() {
        let config = DgpConfig {
            n_units: 12,
            n_periods: 10,
            rank_l: 2,
            n_unit_covariates: 3,
            n_time_covariates: 2,
            n_cell_covariates: 2,
            h_prob: 0.2,
            b_prob: 0.5,
            exact_count_bernoulli: true,
            ..DgpConfig::default()
        };
        let settings = SimulateSettings { config, runs: 2, seed: 9, folds: 3, grid_points: 2 };
        let rows = simulate(&settings).unwrap();
        assert_eq!(rows.len(), 12);
        let variants: Vec<String> = rows[..6].iter().map(|r| r.variant.to_string()).collect();
        assert_eq!(variants, vec!["no_reg", "imp0", "imp0_rot", "imp0_post", "imp0_1se", "not0"]);
        // imp0 indexes itself at exactly 1.
        for row in rows.iter().filter(|r| r.variant == Variant::Imp0) {
            assert_eq!(row.indexed_sq_err, Some(1.0));
        }
        // The rescaled variant shares imp0's fit but reports the corrected
        // headline number.
        let imp0 = &rows[1];
        let rot = &rows[2];
        assert_eq!(imp0.h_support, rot.h_support);
        assert_eq!(rot.tau_hat, rot.tau_hat_rot);
        assert_eq!(imp0.tau_hat, imp0.tau_hat_raw);
        // Imposed-null variants carry a p-value; the control-only one does
        // not.
        assert!(rows[1].p_value.is_some());
        assert!(rows[5].p_value.is_none());
        // Determinism: a second invocation reproduces every field.
        let again = simulate(&settings).unwrap();
        assert_eq!(rows.len(), again.len());
        for (a, b) in rows.iter().zip(&again) {
            assert_eq!(a.tau_hat, b.tau_hat);
            assert_eq!(a.h_support, b.h_support);
            assert_eq!(a.p_value, b.p_value);
        }
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let values = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&values, 0.0), 1.0);
        assert_eq!(quantile(&values, 1.0), 4.0);
        assert_eq!(quantile(&values, 0.5), 2.5);
        assert!((quantile(&values, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn summaries_cover_cells_and_respect_variant_subsets() {
        let mut settings = ReplicateSettings::new(Target::Fig5);
        settings.scale = 0.08;
        settings.runs_override = Some(2);
        settings.grid_points = 2;
        settings.folds = 3;
        let outcome = replicate(&settings).unwrap();
        // Period grid at scale 0.08 clamps to {6, 6, 6, 6, 13, 26, 51}.
        let cells: Vec<usize> = {
            let mut seen = Vec::new();
            for row in &outcome.rows {
                if !seen.contains(&row.n_periods) {
                    seen.push(row.n_periods);
                }
            }
            seen
        };
        assert_eq!(cells, vec![6, 13, 26, 51]);
        assert_eq!(outcome.rows.len(), 4 * 2 * 6);
        // Model-size summaries only cover the four support-distinct variants.
        assert_eq!(outcome.summary.len(), 4 * 4);
        assert!(outcome.summary.iter().all(|s| s.quantity == "h_size_ratio"));
        assert!(outcome
            .summary
            .iter()
            .all(|s| s.variant != Variant::Imp0Rot && s.variant != Variant::Imp0Post));
    }
}
