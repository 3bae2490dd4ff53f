//! Matrix-completion estimation for causal panel data.
//!
//! `panelmc` fits a low-rank-plus-covariates model to an `N x T` outcome panel
//! in which some unit/time cells received a binary treatment. The model
//!
//! ```text
//! Y ≈ L + X H Z + [V'β] + Γ 1' + 1 Δ'
//! ```
//!
//! combines a nuclear-norm-regularized low-rank matrix `L`, an l1-regularized
//! interaction matrix `H` between unit covariates `X` and time covariates `Z`,
//! an l1-regularized coefficient vector `β` on unit-time varying covariates
//! `V`, and unregularized two-way fixed effects `Γ`, `Δ`. The fitted model
//! imputes untreated potential outcomes for the treated cells; treatment
//! effects are read off as differences between observed and imputed outcomes.
//!
//! Two estimation modes are supported ([`estimator::FitMode`]): fitting the
//! squared-error loss over *all* cells under an imposed no-effect null
//! (enables permutation-based p-values) or over *control cells only*
//! (unbiased effect estimates, no valid permutation inference).
//!
//! The crate is organized around a small set of composable pieces:
//!
//! * [`prox`] — proximal operators (soft-thresholding, singular value
//!   thresholding) used by the solver.
//! * [`panel`] — panel containers and model parameters.
//! * [`estimator`] — the block coordinate descent solver, penalty-weight
//!   upper bounds, two-stage relaxed refits, and optimality diagnostics.
//! * [`selection`] — random-subset cross-validation over a 3-d penalty grid
//!   with minimum-error and most-parsimonious (one-standard-error) rules.
//! * [`inference`] — permutation p-values under the imposed null, with
//!   moving-block and iid permutation families.
//! * [`effects`] — average treatment effect on the treated, with a
//!   rule-of-thumb scaling correction for imposed-null fits.
//! * [`dgp`] — a seeded synthetic panel generator for calibration studies.
//! * [`io`] — CSV panel formats and flat key=value run configuration.
//! * [`replicate`] — batch simulation drivers behind the `simulate` and
//!   `replicate` commands of the bundled CLI.
//!
//! The `examples/` directory walks through each major capability end to end;
//! a thin command-line binary (`panelmc`) exposes the same pipelines for
//! file-based use.

pub mod dgp;
pub mod effects;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod panel;
pub mod prox;
pub mod replicate;
pub mod selection;

mod design;
mod solver;

pub use error::{Error, Result};
