//! Select the penalty triple by masked cross-validation.
//!
//! Generates a synthetic panel with a low-rank baseline and sparse covariate
//! effects, scans a log-spaced penalty grid by refitting on random subsets of
//! the control cells, and compares the minimum-error selection with the more
//! conservative one-standard-error rule.
//!
//! Run with `cargo run --example cross_validation`.

use panelmc::dgp::{generate, DgpConfig};
use panelmc::estimator::{fit, FitMode};
use panelmc::panel::PenaltyConfig;
use panelmc::selection::{cross_validate, GridSpec, SelectionRule};
use panelmc::Result;

fn main() -> Result<()> {
    let config = DgpConfig {
        n_units: 30,
        n_periods: 24,
        rank_l: 1,
        // Mean singular value 1/zeta_l = 50: with orthonormal directions the
        // baseline's entries scale like sigma / sqrt(N*T), so the default
        // rate would bury it under the fixed effects at this panel size.
        zeta_l: 0.02,
        n_unit_covariates: 6,
        n_time_covariates: 4,
        h_prob: 0.15,
        h_size: 3.0,
        n_cell_covariates: 8,
        b_prob: 0.2,
        b_size: 1.5,
        sigma_eps: 0.8,
        seed: 42,
        exact_count_bernoulli: true,
        ..DgpConfig::default()
    };
    let generated = generate(&config)?;
    let panel = &generated.panel;
    println!(
        "panel: {} units x {} periods, true rank {}, true interaction support {}",
        panel.n_units(),
        panel.n_periods(),
        config.rank_l,
        generated.truth.h_support().len()
    );

    // Four log points on the baseline axis and three on each coefficient
    // axis, spread over two decades; zero joins the coefficient axes
    // automatically. Five folds, each holding out a random control subset
    // sized like the missing share.
    let spec = GridSpec {
        points_l: 4,
        points_h: 3,
        points_beta: 3,
        floor_ratio: 1e-2,
        ..GridSpec::default()
    };
    let cv = cross_validate(panel, &spec, 5, 7, SelectionRule::Mse)?;
    println!("grid evaluated: {} penalty triples", cv.grid.len());

    let mse = cv.best_mse_triple();
    let one_se = cv.best_1se_triple();
    println!("\nminimum cv error:");
    println!("  lambda_l = {:.5}, lambda_h = {:.5}, lambda_beta = {:.5}", mse.lambda_l, mse.lambda_h, mse.lambda_beta);
    println!("one-standard-error rule (never smaller on any axis):");
    println!("  lambda_l = {:.5}, lambda_h = {:.5}, lambda_beta = {:.5}", one_se.lambda_l, one_se.lambda_h, one_se.lambda_beta);

    for (label, triple) in [("mse", mse), ("1se", one_se)] {
        let penalties = PenaltyConfig::new(triple.lambda_l, triple.lambda_h, triple.lambda_beta);
        let result = fit(panel, &penalties, FitMode::ImposedNull)?;
        let truth = generated.truth.h_support();
        let recovered = truth.iter().filter(|e| result.support_h.contains(e)).count();
        println!(
            "\nrefit at {label}: rank {}, interaction support {} ({} of {} true entries included)",
            result.rank_l,
            result.support_h.len(),
            recovered,
            truth.len()
        );
    }

    // Prediction-optimal penalties overfit the structure: the minimum-error
    // refit keeps a few spurious baseline directions and interactions around
    // the true ones, which is what nuclear-norm and l1 tuning by held-out
    // error does. The one-standard-error rule trades a statistically
    // negligible amount of fit for the most penalized neighbor, trimming the
    // support to the true model size — at the cost of the weakest true entry
    // here, the usual bias-variance bargain. The relaxed second stage (see
    // two_stage_refit) then removes the shrinkage bias on what survives.
    Ok(())
}
