//! Interpretable behavior-policy modeling for sequential decision logs.
//!
//! The crate turns per-patient decision trajectories into fixed-size state
//! representations (current context, previous action, truncated windows and
//! history aggregates), fits probabilistic policy models on them (logistic
//! regression, CART trees, integer risk scores and small MLPs) and evaluates
//! the fitted policies with stratified AUROC, calibration error, patient-level
//! bootstrap intervals and inverse-probability diagnostics.
//!
//! A synthetic cohort generator with a known ground-truth policy is included
//! so every stage of the pipeline can be checked against an oracle.

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod models;
pub mod ope;
pub mod runner;
pub mod staterep;
pub mod strata;
pub mod svg;
pub mod synthgen;
pub mod util;

pub use error::{Error, Result};
