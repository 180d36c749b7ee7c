//! Spliced lognormal + generalized Pareto severity models fitted over a grid of
//! candidate thresholds, combined by error-integration Bayesian model averaging,
//! with the optimal threshold read off the point where tail-weighted weights
//! overtake the unweighted ones.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the `f64` instantiations used by the simulation harness and CLI.

pub mod bma;
pub mod dist;
pub mod error;
pub mod metrics;
pub mod mixture;
pub mod quantile_boot;
pub mod sample;
pub mod scalar;
pub mod sim;
pub mod special;

mod optim;

pub use error::{Error, FitDiagnostics, Result};
pub use scalar::Scalar;

pub type GpdParams = dist::GpdParams<f64>;
pub type LognormalParams = dist::LognormalParams<f64>;
pub type GevParams = dist::GevParams<f64>;
pub type SkewNormalParams = dist::SkewNormalParams<f64>;
pub type LossSample = sample::LossSample<f64>;
pub type MixtureModel = mixture::MixtureModel<f64>;
pub type GroupedMixture = mixture::GroupedMixture<f64>;
pub type QuantileGrid = quantile_boot::QuantileGrid<f64>;
pub type QuantileErrorModel = quantile_boot::QuantileErrorModel<f64>;
pub type CandidateSet = bma::CandidateSet<f64>;
pub type WeightReport = bma::WeightReport<f64>;
pub type MrlCurve = metrics::MrlCurve<f64>;

pub type GpdParamsF32 = dist::GpdParams<f32>;
pub type LognormalParamsF32 = dist::LognormalParams<f32>;
pub type MixtureModelF32 = mixture::MixtureModel<f32>;
