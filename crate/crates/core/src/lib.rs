//! Runs of consecutive daily precipitation extremes.
//!
//! The windowed minimum `Y_j = min(X_j, ..., X_{j+k-1})` turns "k consecutive
//! extreme days" into a single extreme of `Y`. Yearly maxima of `Y` are
//! fitted with a GEV whose location and scale depend linearly on the
//! Southern Oscillation Index and station geography; the crate also
//! estimates the extremal index of the daily series, selects among nested
//! covariate models, checks goodness of fit and turns fitted models into
//! return levels and exceedance probabilities under SOI scenarios.
//!
//! Modules follow the data flow: [`ingest`] → [`functionals`] →
//! [`extremal`] / [`fit`] → [`select`] → [`diagnostics`] → [`returns`],
//! with [`synthetic`] providing generators with known answers and
//! [`pipeline`] running everything end to end.

pub mod diagnostics;
pub mod error;
pub mod extremal;
pub mod fit;
pub mod format;
pub mod functionals;
pub mod gev;
pub mod ingest;
pub mod link;
pub mod optim;
pub mod pipeline;
pub mod returns;
pub mod rng;
pub mod select;
pub mod special;
pub mod synthetic;

pub use error::{Error, Result};
pub use fit::{fit_mle, fit_stationary, FitOptions, FitResult};
pub use functionals::{block_maxima, windowed_min, BlockMaximaRow, BlockMaximaTable, WindowedSeries};
pub use gev::{gev_cdf, gev_quantile, nll_stationary, GevParams};
pub use ingest::{CovariateRow, Covariates, DailySeries, SoiSeries, StationMeta};
pub use link::{nll_linked, CovariateMask, LinkModel, Regressor};
pub use diagnostics::{anderson_darling_gumbel, mann_kendall, quantile_plot_data, standardize, StandardizedSample, TestResult};
pub use extremal::{ferro_segers, EstimatorForm, ExceedanceRecord, ExtremalIndexEstimate};
pub use format::NumberFormat;
pub use pipeline::{run_pipeline, Dataset, ModelChoice, RunConfig};
pub use returns::{aggregated_quantile, exceedance_probability, return_level, simulate_soi, ReturnSpec, SoiScenario};
pub use select::{build_ladder, likelihood_ratio, select, ModelLadder, SelectionReport};
pub use synthetic::{sample_iid_gev, sample_linked_gev, sample_moving_maximum, GeneratorSpec};
