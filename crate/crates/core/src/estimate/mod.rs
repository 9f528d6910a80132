//! Depth and intensity estimation from sketches, plus the histogram-domain
//! baselines they are compared against.

mod baseline;
mod circular;
mod covariance;
mod optim;
mod smle;

pub use baseline::{
    coarse_bin, coarse_bin_histogram, coarse_em_fit, coarse_matched_filter, em_fit, ifft_estimate,
    matched_filter, max_peak, CoarseHistogram, CoarseReadout, EmFit, EmOptions, LOG_FLOOR,
};
pub use circular::{circular_mean, circular_mean_irf};
pub use covariance::covariance;
pub use smle::{
    smle_fit, smle_fit_from, smle_loss, smle_loss_gradient, FitOptions, InitStrategy, Weighting,
};

pub(crate) use covariance::{
    cf_table, cf_table_derivatives, covariance_from_table, regularize, stacked_at,
};

use crate::model::ModelParams;

/// Where an optimizer started.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    CircularMean,
    Grid,
    /// Circular mean was undefined (`|z_1| ≈ 0`); the grid was used instead.
    GridFallback,
    Supplied,
    /// Matched filter for the first surface, likelihood scan for the rest.
    Greedy,
}

impl InitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitMethod::CircularMean => "circular-mean",
            InitMethod::Grid => "grid",
            InitMethod::GridFallback => "grid-fallback",
            InitMethod::Supplied => "supplied",
            InitMethod::Greedy => "greedy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    /// Final objective value (negative log-likelihood for EM).
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Starting point.
    pub init: ModelParams,
    pub init_method: InitMethod,
    /// Largest absolute gradient component in the optimizer's coordinates
    /// (NaN for EM).
    pub grad_norm: f64,
}
