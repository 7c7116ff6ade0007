//! Stratification-variable subset selection for stratified sampling in
//! online controlled experiments.
//!
//! The crate is organised around the sampling pipeline:
//!
//! * [`frame`] and [`stats`] hold the population data model, CSV ingestion,
//!   preprocessing and per-stratum summary statistics.
//! * [`kmeans`] stratifies a population by K-means on a covariate subset.
//! * [`allocation`] splits a total sample size across strata.
//! * [`variance`] evaluates the closed-form sampling variances.
//! * [`search`] runs the sequential forward search over covariates.
//! * [`baselines`] implements CUPED, covariate-ordered systematic sampling and
//!   simple random sampling.
//! * [`synth`] generates correlated linear-model populations.
//! * [`harness`] estimates sampling variances by Monte Carlo and compares
//!   methods against simple random sampling.
//! * [`config`] and [`cli`] drive everything from declarative run configs.

pub mod allocation;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod error;
pub mod frame;
pub mod harness;
pub mod kmeans;
pub mod rng;
pub mod search;
pub mod stats;
pub mod synth;
pub mod variance;

pub use allocation::{AllocationBounds, AllocationMethod, AllocationPlan};
pub use error::{Error, Result};
pub use frame::{PopulationFrame, Table};
pub use harness::EvaluationReport;
pub use kmeans::StratumPartition;
pub use search::SelectionResult;
pub use stats::StratumStats;
