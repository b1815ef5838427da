//! Quantify how uniquely a professional-network member can be singled out by
//! AND-combining publicly listed location and skills.
//!
//! The pipeline: a [`population`] (synthetic or ingested) is indexed by the
//! [`oracle`], which answers audience-size queries with a reporting floor.
//! [`methodology`] turns per-member nested skill selections into per-N
//! audience samples and quantile vectors; [`estimator`] fits the censored
//! log-linear decay and bootstraps the cutpoint; [`risk`] inverts cutpoints
//! into success probabilities; [`campaign`] simulates ad delivery under a
//! minimum-audience policy.

pub mod campaign;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod manifest;
pub mod methodology;
pub mod oracle;
pub mod population;
pub mod risk;
pub mod seed;

pub use error::{Error, FitError, Result};
