//! Parameter estimation from review logs.
//!
//! - [`fit_halflife_regression`]: global `alpha`, `beta` (and `omega` for the
//!   power-law curve) with one initial forgetting rate per item, by squared
//!   loss against observed recall scores.
//! - [`fit_binned_alpha_beta`]: the same fit with `alpha`, `beta` allowed to
//!   differ across review-gap bins, plus bootstrap Welch tests.
//! - [`fit_q_mle`], [`fit_mu_mle`], [`fit_threshold_mle`]: schedule
//!   parameters by maximum likelihood.
//! - [`predictive_metrics`]: MAE, AUC and half-life correlation.

mod binned;
mod hlr;
mod metrics;
mod mle;
mod observations;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::memory::{ItemParams, MemoryState, ModelKind, ReviewSequence};

pub use binned::{fit_binned_alpha_beta, BinnedFit};
pub use hlr::{fit_halflife_regression, FitConfig};
pub use metrics::{
    constant_predictor_mae, predictive_metrics, PredictiveMetrics, HALF_LIFE_MAX, HALF_LIFE_MIN,
};
pub use mle::{
    fit_mu_mle, fit_q_mle, fit_threshold_mle, memorize_statistics, one_minus_recall_integral,
    ProfilePoint, ThresholdAnchoring, ThresholdFit,
};

/// Predictions are clamped to this range before any loss or metric.
pub const P_MIN: f64 = 1e-4;
pub const P_MAX: f64 = 0.9999;

pub fn clamp_p(p: f64) -> f64 {
    p.clamp(P_MIN, P_MAX)
}

/// Optimiser trace and data summary of a fit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Training loss after every accepted step (first entry: initial loss).
    pub loss_curve: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Selected L2 weight on the log-update coefficients.
    pub lambda: f64,
    /// Validation loss for every candidate weight, in grid order.
    pub validation: Vec<(f64, f64)>,
    pub observations: usize,
    /// Observations whose prediction hit the clamp at the final parameters.
    pub clamped_predictions: usize,
    /// Events with a zero gap, used for counts but not as observations.
    pub skipped_zero_gap: usize,
    /// Parameters without data signal, left at their prior.
    pub unidentified: Vec<String>,
}

/// Fitted memory model.
///
/// JSON fields: `model` (`{"kind":"exponential"}` or
/// `{"kind":"power_law","omega":..}`), `alpha`, `beta`, `n0` (item id to
/// initial forgetting rate, per day), `default_n0` (used for unseen items),
/// `diagnostics`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub model: ModelKind,
    pub alpha: f64,
    pub beta: f64,
    pub n0: BTreeMap<String, f64>,
    pub default_n0: f64,
    #[serde(default)]
    pub diagnostics: FitDiagnostics,
}

impl FittedModel {
    /// Model with known parameters and the same `n0` for every item.
    pub fn fixed(model: ModelKind, params: ItemParams) -> Self {
        FittedModel {
            model,
            alpha: params.alpha,
            beta: params.beta,
            n0: BTreeMap::new(),
            default_n0: params.n0,
            diagnostics: FitDiagnostics::default(),
        }
    }

    pub fn n0_for(&self, item: &str) -> f64 {
        self.n0.get(item).copied().unwrap_or(self.default_n0)
    }

    pub fn params_for(&self, item: &str) -> ItemParams {
        ItemParams {
            alpha: self.alpha,
            beta: self.beta,
            n0: self.n0_for(item),
        }
    }

    /// Memory states along a sequence (see [`ReviewSequence::state_path`]).
    pub fn state_path(&self, seq: &ReviewSequence) -> Result<Vec<MemoryState>> {
        let params = self.params_for(&seq.item);
        seq.state_path(params.n0, &params, self.model)
    }
}
