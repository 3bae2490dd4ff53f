//! Command-line front end: CSV in, CSV/JSON artifacts out.
//!
//! Exit codes: 0 on success, 1 when the solver failed to converge (artifacts
//! are still written), 2 on usage or validation errors.

use clap::{Args, Parser, Subcommand};
use panelmc::dgp::DgpConfig;
use panelmc::effects::estimate_atet;
use panelmc::estimator::{fit, fit_post, FitMode, FitResult};
use panelmc::inference::{permutation_p_value, PermutationFamily, PermutationPlan};
use panelmc::io;
use panelmc::panel::{auto_names, PanelData, PenaltyConfig};
use panelmc::replicate::{
    replicate, simulate, write_runs_csv, write_summary_csv, ReplicateSettings, SimulateSettings,
    Target,
};
use panelmc::selection::{cross_validate, GridSpec, SelectionRule};
use panelmc::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "panelmc",
    version,
    about = "Matrix completion for causal panel data with l1 covariate selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the penalized model on CSV inputs and write parameter artifacts.
    Fit(FitArgs),
    /// Cross-validate the penalty triple on CSV inputs.
    Cv(CvArgs),
    /// Fit under the imposed null and run permutation inference.
    Infer(InferArgs),
    /// Generate synthetic panels and run the whole pipeline repeatedly.
    Simulate(SimulateArgs),
    /// Run a simulation-study figure protocol, optionally shrunk.
    Replicate(ReplicateArgs),
}

/// Input CSVs shared by fit, cv, and infer.
#[derive(Args)]
struct PanelArgs {
    /// Outcome matrix CSV: N x T dense, no header.
    #[arg(long)]
    y: PathBuf,
    /// Treatment indicator CSV: N x T dense 0/1, no header.
    #[arg(long)]
    w: PathBuf,
    /// Unit covariates CSV: N x P with a header row of names.
    #[arg(long)]
    x: Option<PathBuf>,
    /// Time covariates CSV: one row per covariate, leading name column.
    #[arg(long)]
    z: Option<PathBuf>,
    /// Cell covariates CSV: long format `unit,time,covariate,value`.
    #[arg(long)]
    v: Option<PathBuf>,
    /// Append identity blocks to X and Z so units and periods also enter
    /// the interaction matrix linearly.
    #[arg(long)]
    augment: bool,
}

impl PanelArgs {
    fn load(&self) -> Result<PanelData> {
        let y = io::read_dense_matrix(&self.y)?;
        let w = io::read_dense_matrix(&self.w)?;
        let (n, t) = y.dim();
        let mut panel = PanelData::from_outcomes(y, w)?;
        if let Some(path) = &self.x {
            let (x, names) = io::read_unit_covariates(path)?;
            panel = panel.with_unit_covariates(x, names)?;
        }
        if let Some(path) = &self.z {
            let (z, names) = io::read_time_covariates(path)?;
            panel = panel.with_time_covariates(z, names)?;
        }
        if let Some(path) = &self.v {
            let (v, names) = io::read_cell_covariates(path, n, t)?;
            panel = panel.with_cell_covariates(v, names)?;
        }
        if self.augment {
            panel = panel.augment_linear_terms();
        }
        Ok(panel)
    }

    fn manifest_json(&self) -> serde_json::Value {
        serde_json::json!({
            "y": self.y.display().to_string(),
            "w": self.w.display().to_string(),
            "x": self.x.as_ref().map(|p| p.display().to_string()),
            "z": self.z.as_ref().map(|p| p.display().to_string()),
            "v": self.v.as_ref().map(|p| p.display().to_string()),
            "augment": self.augment,
        })
    }
}

/// Penalty weights and solver controls; a flat `key = value` config file
/// supplies defaults, command-line flags override it.
#[derive(Args)]
struct PenaltyArgs {
    /// Flat `key = value` config file (keys: lambda_l, lambda_h,
    /// lambda_beta, max_iterations, rel_tolerance).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda_l: Option<f64>,
    #[arg(long)]
    lambda_h: Option<f64>,
    #[arg(long)]
    lambda_beta: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    rel_tolerance: Option<f64>,
}

impl PenaltyArgs {
    fn resolve(&self) -> Result<PenaltyConfig> {
        let mut penalties = PenaltyConfig::default();
        if let Some(path) = &self.config {
            let map = io::read_config_file(path)?;
            let ctx = path.display().to_string();
            if let Some(v) = io::config_value(&map, "lambda_l", &ctx)? {
                penalties.lambda_l = v;
            }
            if let Some(v) = io::config_value(&map, "lambda_h", &ctx)? {
                penalties.lambda_h = v;
            }
            if let Some(v) = io::config_value(&map, "lambda_beta", &ctx)? {
                penalties.lambda_beta = v;
            }
            if let Some(v) = io::config_value(&map, "max_iterations", &ctx)? {
                penalties.max_iterations = v;
            }
            if let Some(v) = io::config_value(&map, "rel_tolerance", &ctx)? {
                penalties.rel_tolerance = v;
            }
        }
        if let Some(v) = self.lambda_l {
            penalties.lambda_l = v;
        }
        if let Some(v) = self.lambda_h {
            penalties.lambda_h = v;
        }
        if let Some(v) = self.lambda_beta {
            penalties.lambda_beta = v;
        }
        if let Some(v) = self.max_iterations {
            penalties.max_iterations = v;
        }
        if let Some(v) = self.rel_tolerance {
            penalties.rel_tolerance = v;
        }
        Ok(penalties)
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[command(flatten)]
    penalties: PenaltyArgs,
    /// Loss mode: `imposed-null` evaluates the loss on every cell (enables
    /// inference); `control-only` restricts it to untreated cells.
    #[arg(long, default_value = "imposed-null")]
    mode: String,
    /// Relaxed second stage: refit without penalties on the support and
    /// rank selected by a previous fit.
    #[arg(long, requires = "stage1")]
    post: bool,
    /// Artifact directory of the first-stage fit (its fit.json supplies the
    /// selected support and rank).
    #[arg(long, requires = "post")]
    stage1: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "panelmc_fit")]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Log-spaced points per penalty axis (zero is always appended).
    #[arg(long, default_value_t = 10)]
    grid_points: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Selection rule the `selected` field reports: `mse` or `1se`.
    #[arg(long, default_value = "mse")]
    criterion: String,
    /// Output directory.
    #[arg(long, default_value = "panelmc_cv")]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[command(flatten)]
    penalties: PenaltyArgs,
    /// Rearrangement family: `moving-block` (cyclic time shifts, |Π| = T)
    /// or `iid` (cell bijections).
    #[arg(long, default_value = "moving-block")]
    family: String,
    /// Sampled rearrangements for `iid` (the identity is added on top).
    #[arg(long, default_value_t = 999)]
    n_perm: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "panelmc_infer")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Flat `key = value` config file with generator fields (n_units,
    /// n_periods, tau, rank_l, treat_prob, sigma_max, n_unit_covariates,
    /// n_time_covariates, h_size, h_prob, n_cell_covariates, b_size,
    /// b_prob, sigma_eps, zeta_l, exact_count_bernoulli) and run controls
    /// (runs, folds, grid_points, seed).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    n_units: Option<usize>,
    #[arg(long)]
    n_periods: Option<usize>,
    #[arg(long)]
    sigma_eps: Option<f64>,
    /// Number of independent replications.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Log-spaced points per penalty axis in the per-run selection grid.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "panelmc_simulate")]
    out: PathBuf,
}

#[derive(Args)]
struct ReplicateArgs {
    /// Figure protocol: fig3, fig4, fig5, fig8, fig9, or fig10.
    target: String,
    /// Shrinks dimensions linearly and replication counts cubically; 1.0
    /// runs the full protocol.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Overrides the scaled per-cell replication count.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Log-spaced points per penalty axis in the per-run selection grid.
    #[arg(long, default_value_t = 2)]
    grid_points: usize,
    /// Output directory.
    #[arg(long, default_value = "panelmc_replicate")]
    out: PathBuf,
}

fn parse_mode(raw: &str) -> Result<FitMode> {
    match raw.to_lowercase().replace('_', "-").as_str() {
        "imposed-null" => Ok(FitMode::ImposedNull),
        "control-only" => Ok(FitMode::ControlOnly),
        other => Err(Error::InvalidConfig {
            message: format!("unknown mode {other:?}; expected imposed-null or control-only"),
        }),
    }
}

fn parse_criterion(raw: &str) -> Result<SelectionRule> {
    match raw.to_lowercase().as_str() {
        "mse" => Ok(SelectionRule::Mse),
        "1se" => Ok(SelectionRule::OneSe),
        other => Err(Error::InvalidConfig {
            message: format!("unknown criterion {other:?}; expected mse or 1se"),
        }),
    }
}

fn parse_family(raw: &str) -> Result<PermutationFamily> {
    match raw.to_lowercase().replace('_', "-").as_str() {
        "moving-block" => Ok(PermutationFamily::MovingBlock),
        "iid" => Ok(PermutationFamily::Iid),
        other => Err(Error::InvalidConfig {
            message: format!("unknown family {other:?}; expected moving-block or iid"),
        }),
    }
}

/// Write the fitted parameters, summary, and manifest into `out`.
fn write_fit_artifacts(
    out: &Path,
    panel: &PanelData,
    result: &FitResult,
    mut manifest: io::RunManifest,
) -> Result<()> {
    io::ensure_dir(out)?;
    let effect = if panel.n_treated() > 0 { Some(estimate_atet(panel, result)?) } else { None };
    io::write_dense_matrix(&out.join("l.csv"), &result.params.l)?;
    io::write_sparse_interactions(
        &out.join("h.csv"),
        &result.params.h,
        panel.x_names(),
        panel.z_names(),
    )?;
    io::write_named_vector(&out.join("beta.csv"), panel.v_names(), &result.params.beta)?;
    io::write_named_vector(
        &out.join("gamma.csv"),
        &auto_names("unit_", panel.n_units()),
        &result.params.gamma,
    )?;
    io::write_named_vector(
        &out.join("delta.csv"),
        &auto_names("period_", panel.n_periods()),
        &result.params.delta,
    )?;
    io::write_json(&out.join("fit.json"), &io::FitSummary::new(result, effect))?;
    manifest.outputs = ["l.csv", "h.csv", "beta.csv", "gamma.csv", "delta.csv", "fit.json"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    io::write_manifest(out, manifest)?;

    println!("mode: {}", result.mode);
    println!("objective: {}", result.objective());
    println!(
        "rank_l: {}  h_support: {}  beta_support: {}",
        result.rank_l,
        result.support_h.len(),
        result.support_beta.len()
    );
    if let Some(e) = effect {
        println!("atet: {}  atet_rot: {}", e.atet, e.atet_rot);
    }
    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }
    println!("converged: {}  iterations: {}", result.converged, result.n_iterations);
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<u8> {
    let mode = parse_mode(&args.mode)?;
    let penalties = args.penalties.resolve()?;
    let panel = args.panel.load()?;
    let result = if args.post {
        let stage1_dir = args.stage1.as_ref().expect("clap enforces --stage1 with --post");
        let summary: io::FitSummary = io::read_json(&stage1_dir.join("fit.json"))?;
        let first_stage = summary.to_first_stage(&panel);
        fit_post(&panel, &first_stage, mode)?
    } else {
        fit(&panel, &penalties, mode)?
    };
    let manifest = io::RunManifest::new(
        if args.post { "fit --post" } else { "fit" },
        serde_json::json!({
            "panel": args.panel.manifest_json(),
            "mode": mode,
            "penalties": penalties,
            "stage1": args.stage1.as_ref().map(|p| p.display().to_string()),
        }),
        vec![],
    );
    write_fit_artifacts(&args.out, &panel, &result, manifest)?;
    Ok(if result.converged { 0 } else { 1 })
}

fn cmd_cv(args: &CvArgs) -> Result<u8> {
    let criterion = parse_criterion(&args.criterion)?;
    if args.grid_points == 0 {
        return Err(Error::InvalidConfig { message: "grid needs at least one point per axis".into() });
    }
    let panel = args.panel.load()?;
    let spec = GridSpec::with_points(args.grid_points);
    let cv = cross_validate(&panel, &spec, args.folds, args.seed, criterion)?;
    io::ensure_dir(&args.out)?;
    io::write_cv_summary(&args.out.join("cv_summary.csv"), &cv)?;
    io::write_cv_folds(&args.out.join("cv_folds.csv"), &cv)?;
    io::write_json(
        &args.out.join("selected.json"),
        &serde_json::json!({
            "criterion": criterion,
            "bounds": cv.bounds,
            "mse": cv.best_mse_triple(),
            "one_se": cv.best_1se_triple(),
            "selected": cv.selected(),
        }),
    )?;
    let mut manifest = io::RunManifest::new(
        "cv",
        serde_json::json!({
            "panel": args.panel.manifest_json(),
            "grid_points": args.grid_points,
            "folds": args.folds,
            "criterion": criterion,
        }),
        vec![args.seed],
    );
    manifest.outputs =
        ["cv_summary.csv", "cv_folds.csv", "selected.json"].iter().map(|s| s.to_string()).collect();
    io::write_manifest(&args.out, manifest)?;
    let chosen = cv.selected();
    println!(
        "selected ({criterion}): lambda_l = {}, lambda_h = {}, lambda_beta = {}",
        chosen.lambda_l, chosen.lambda_h, chosen.lambda_beta
    );
    Ok(0)
}

fn cmd_infer(args: &InferArgs) -> Result<u8> {
    let family = parse_family(&args.family)?;
    let penalties = args.penalties.resolve()?;
    let panel = args.panel.load()?;
    let result = fit(&panel, &penalties, FitMode::ImposedNull)?;
    let plan = match family {
        PermutationFamily::MovingBlock => {
            PermutationPlan::moving_block(panel.n_units(), panel.n_periods())?
        }
        PermutationFamily::Iid => {
            PermutationPlan::iid(panel.n_units(), panel.n_periods(), args.n_perm, args.seed)?
        }
    };
    let inference = permutation_p_value(&panel, &result, &plan)?;
    io::ensure_dir(&args.out)?;
    io::write_inference_table(&args.out.join("infer.csv"), &inference)?;
    io::write_json(
        &args.out.join("infer.json"),
        &serde_json::json!({
            "family": inference.family,
            "statistic": inference.statistic,
            "p_value": inference.p_value,
            "count": inference.permuted_statistics.len(),
        }),
    )?;
    let mut manifest = io::RunManifest::new(
        "infer",
        serde_json::json!({
            "panel": args.panel.manifest_json(),
            "penalties": penalties,
            "family": inference.family,
            "n_perm": args.n_perm,
        }),
        vec![args.seed],
    );
    manifest.outputs = ["infer.csv", "infer.json"].iter().map(|s| s.to_string()).collect();
    io::write_manifest(&args.out, manifest)?;
    println!(
        "statistic: {}  permutations: {}  p-value: {}",
        inference.statistic,
        inference.permuted_statistics.len(),
        inference.p_value
    );
    Ok(if result.converged { 0 } else { 1 })
}

/// Build the generator configuration from defaults, then the config file,
/// then flags.
fn resolve_simulation(args: &SimulateArgs) -> Result<SimulateSettings> {
    let mut config = DgpConfig::default();
    let mut runs = 100usize;
    let mut seed = 0u64;
    let mut folds = 5usize;
    let mut grid_points = 3usize;
    if let Some(path) = &args.config {
        let map = io::read_config_file(path)?;
        let ctx = path.display().to_string();
        macro_rules! take {
            ($field:ident, $key:literal) => {
                if let Some(v) = io::config_value(&map, $key, &ctx)? {
                    config.$field = v;
                }
            };
        }
        take!(n_units, "n_units");
        take!(n_periods, "n_periods");
        take!(tau, "tau");
        take!(rank_l, "rank_l");
        take!(treat_prob, "treat_prob");
        take!(sigma_max, "sigma_max");
        take!(n_unit_covariates, "n_unit_covariates");
        take!(n_time_covariates, "n_time_covariates");
        take!(h_size, "h_size");
        take!(h_prob, "h_prob");
        take!(n_cell_covariates, "n_cell_covariates");
        take!(b_size, "b_size");
        take!(b_prob, "b_prob");
        take!(sigma_eps, "sigma_eps");
        take!(zeta_l, "zeta_l");
        take!(exact_count_bernoulli, "exact_count_bernoulli");
        if let Some(v) = io::config_value(&map, "runs", &ctx)? {
            runs = v;
        }
        if let Some(v) = io::config_value(&map, "seed", &ctx)? {
            seed = v;
        }
        if let Some(v) = io::config_value(&map, "folds", &ctx)? {
            folds = v;
        }
        if let Some(v) = io::config_value(&map, "grid_points", &ctx)? {
            grid_points = v;
        }
    }
    if let Some(v) = args.tau {
        config.tau = v;
    }
    if let Some(v) = args.n_units {
        config.n_units = v;
    }
    if let Some(v) = args.n_periods {
        config.n_periods = v;
    }
    if let Some(v) = args.sigma_eps {
        config.sigma_eps = v;
    }
    if let Some(v) = args.runs {
        runs = v;
    }
    if let Some(v) = args.seed {
        seed = v;
    }
    if let Some(v) = args.folds {
        folds = v;
    }
    if let Some(v) = args.grid_points {
        grid_points = v;
    }
    Ok(SimulateSettings { config, runs, seed, folds, grid_points })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let settings = resolve_simulation(args)?;
    let rows = simulate(&settings)?;
    io::ensure_dir(&args.out)?;
    write_runs_csv(&args.out.join("runs.csv"), &rows)?;
    let mut manifest = io::RunManifest::new(
        "simulate",
        serde_json::to_value(&settings)?,
        vec![settings.seed],
    );
    manifest.outputs = vec!["runs.csv".to_string()];
    io::write_manifest(&args.out, manifest)?;
    let rejected = rows
        .iter()
        .filter(|r| r.p_value.map(|p| p <= 0.1).unwrap_or(false))
        .count();
    println!(
        "runs: {}  rows: {}  p-values <= 0.1: {rejected}",
        settings.runs,
        rows.len()
    );
    Ok(0)
}

fn cmd_replicate(args: &ReplicateArgs) -> Result<u8> {
    let target: Target = args.target.parse()?;
    let settings = ReplicateSettings {
        target,
        scale: args.scale,
        runs_override: args.runs,
        seed: args.seed,
        folds: args.folds,
        grid_points: args.grid_points,
    };
    let outcome = replicate(&settings)?;
    io::ensure_dir(&args.out)?;
    write_runs_csv(&args.out.join("runs.csv"), &outcome.rows)?;
    write_summary_csv(&args.out.join("summary.csv"), &outcome.summary)?;
    let mut manifest =
        io::RunManifest::new("replicate", serde_json::to_value(&settings)?, vec![args.seed]);
    manifest.outputs = vec!["runs.csv".to_string(), "summary.csv".to_string()];
    io::write_manifest(&args.out, manifest)?;
    println!(
        "target: {target}  cells x runs: {} rows  summary rows: {}",
        outcome.rows.len(),
        outcome.summary.len()
    );
    Ok(0)
}

/// Honor the worker-count override before any parallel region spins up.
fn configure_workers() {
    if let Ok(raw) = std::env::var("PANELMC_WORKERS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_workers();
    let outcome = match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Replicate(args) => cmd_replicate(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
