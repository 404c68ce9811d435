//! Item response theory estimation and benchmark diagnosis.
//!
//! Binary response matrices go in ([`dataset`]); item banks come out of
//! either the network estimator ([`psn`]) or joint maximum likelihood
//! ([`mle`]). Banks feed benchmark reports ([`analysis`]), item-subset
//! selection ([`selection`]) and reliability studies ([`metrics`]).
//! [`synth`] generates matrices with known parameters.

pub mod analysis;
pub mod bank;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod irt;
pub mod link;
pub mod metrics;
pub mod mle;
pub mod nn;
pub mod psn;
pub mod selection;
pub mod synth;

pub use bank::{FitMethod, FitSettings, FittedBank};
pub use dataset::{ItemKey, ResponseMatrix, SplitAssignment};
pub use error::{Error, Result};
pub use irt::{AbilityEstimate, ItemParams, ModelFamily};
