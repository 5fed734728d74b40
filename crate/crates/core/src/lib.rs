//! Counterfactual concentration indexes for income-related health inequality.
//!
//! The crate estimates `G(e)`, the concentration index that would be observed
//! if everybody received exposure level `e`, and the contrasts
//! `theta(e) = G(e) - G(0)`. Three estimators are provided on top of a common
//! set of nuisance fits: the plug-in estimator, the one-step estimator that
//! adds the mean of the fitted efficient influence function, and the
//! estimating-equation estimator. Standard errors come from the sample
//! variance of the fitted influence function.
//!
//! Modules:
//! - [`glm`]: linear, binary (logit/probit) and multinomial regression.
//! - [`nuisance`]: propensities, outcome means, pairwise rank models and the
//!   counterfactual income CDF.
//! - [`estimators`]: naive index, plug-in, influence functions, one-step,
//!   estimating equation, contrasts.
//! - [`simulation`]: the three-level synthetic design, truth approximation and
//!   the Monte Carlo harness.
//! - [`io`] and [`cli`]: CSV ingestion, reports and the command line.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod glm;
pub mod io;
pub mod nuisance;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Exec;
