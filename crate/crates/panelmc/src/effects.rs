//! Treatment-effect estimation on the treated cells, with the rule-of-thumb
//! rescaling for imposed-null fits.
//!
//! An imposed-null fit spreads the treatment signal over all `N·T` cells, so
//! the raw treated-cell mean understates the effect by roughly the untreated
//! share; multiplying by `NT/|O|` undoes that dilution. Control-only fits
//! never absorb treated cells into the loss, so their estimate needs no
//! correction and the rescaled field simply mirrors the raw one.

use crate::error::{Error, Result};
use crate::estimator::{FitMode, FitResult};
use crate::panel::PanelData;
use serde::{Deserialize, Serialize};

/// Point estimate of the average treatment effect on the treated.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EffectEstimate {
    /// Mean of `Y − Ŷ(0)` over the treated cells.
    pub atet: f64,
    /// Rule-of-thumb rescaling `atet · NT/|O|` for imposed-null fits;
    /// equal to `atet` for control-only fits.
    pub atet_rot: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub mode: FitMode,
}

/// Average the fit's counterfactual residual over the treated cells and
/// apply the mode-appropriate rescaling.
pub fn estimate_atet(panel: &PanelData, fit: &FitResult) -> Result<EffectEstimate> {
    let treated = panel.treated_cells();
    if treated.is_empty() {
        return Err(Error::NoTreatedCells { operation: "treatment effect estimation" });
    }
    let n_control = panel.n_observed();
    if n_control == 0 {
        return Err(Error::NoControlCells { operation: "treatment effect estimation" });
    }
    let prediction = panel.predict_y0(&fit.params);
    let sum: f64 = treated.iter().map(|&(i, t)| panel.y()[(i, t)] - prediction[(i, t)]).sum();
    let atet = sum / treated.len() as f64;
    let atet_rot = match fit.mode {
        FitMode::ImposedNull => atet * panel.n_cells() as f64 / n_control as f64,
        FitMode::ControlOnly => atet,
    };
    Ok(EffectEstimate {
        atet,
        atet_rot,
        n_treated: treated.len(),
        n_control,
        mode: fit.mode,
    })
}
