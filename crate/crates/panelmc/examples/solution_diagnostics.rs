//! Certify a fit with its stationarity report.
//!
//! A converged block-coordinate fit should satisfy the first-order
//! optimality conditions of the penalized objective: subgradient bounds on
//! the zeroed l1 coefficients, stationarity on the active ones, and a
//! fixed-point property for the shrunken baseline. The report quantifies
//! each violation (plus the residual row/column means of the unpenalized
//! effects, which lag the last block update and are reported without being
//! gated), so an iteration cap that bit too early shows up as a number
//! rather than a silently wrong estimate.
//!
//! Run with `cargo run --example solution_diagnostics`.

use panelmc::dgp::{generate, DgpConfig};
use panelmc::estimator::{fit, kkt_report, lambda_max, FitMode};
use panelmc::panel::PenaltyConfig;
use panelmc::Result;

fn main() -> Result<()> {
    let config = DgpConfig {
        n_units: 30,
        n_periods: 24,
        rank_l: 2,
        n_unit_covariates: 6,
        n_time_covariates: 4,
        h_prob: 0.15,
        n_cell_covariates: 8,
        b_prob: 0.2,
        sigma_eps: 0.5,
        seed: 17,
        ..DgpConfig::default()
    };
    let generated = generate(&config)?;
    let panel = &generated.panel;

    let bounds = lambda_max(panel, FitMode::ImposedNull)?;
    let penalties = PenaltyConfig {
        lambda_l: 0.05 * bounds.lambda_l,
        lambda_h: 0.2 * bounds.lambda_h,
        lambda_beta: 0.2 * bounds.lambda_beta,
        ..PenaltyConfig::default()
    };

    for (label, tweak) in [
        (
            "tight tolerance",
            PenaltyConfig { rel_tolerance: 1e-12, max_iterations: 5000, ..penalties },
        ),
        ("capped at 3 iterations", PenaltyConfig { max_iterations: 3, ..penalties }),
    ] {
        let result = fit(panel, &tweak, FitMode::ImposedNull)?;
        let report = kkt_report(panel, &result, 1e-6)?;
        println!("{label} (converged: {}, iterations: {}):", result.converged, result.n_iterations);
        println!("  zeroed interactions, max subgradient excess: {:.2e}", report.h_zero_max_excess);
        println!("  active interactions, max stationarity gap:  {:.2e}", report.h_nonzero_max_dev);
        println!("  zeroed cell coefs, max subgradient excess:  {:.2e}", report.beta_zero_max_excess);
        println!("  active cell coefs, max stationarity gap:    {:.2e}", report.beta_nonzero_max_dev);
        println!("  baseline fixed-point gap:                   {:.2e}", report.l_fixed_point_gap);
        println!("  residual means (ungated diagnostic):        {:.2e}", report.fe_max_abs_mean);
        println!("  satisfied at 1e-6: {}\n", report.satisfied);
    }
    Ok(())
}
