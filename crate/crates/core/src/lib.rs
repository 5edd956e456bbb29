//! Gradient-estimator laboratory for N-sample additive Monte-Carlo objectives.
//!
//! The crate provides the score-function (SF), path-wise (PW) and linearized
//! score-function (LSF) estimators together with their generalized variants,
//! a family of 1-D Gaussian toy objectives, a tabular meta-RL stack built on a
//! softmax policy, brute-force enumeration oracles for small MDPs, streaming
//! statistics, and an experiment harness that writes row-oriented CSV.
//!
//! Estimators are selected by name through [`estimators::EstimatorRegistry`]
//! (generic objectives) and [`metarl::MetaEstimatorRegistry`] (meta-RL).

pub mod error;
pub mod estimators;
pub mod harness;
pub mod mdp;
pub mod metarl;
pub mod objective;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod toy;

pub use error::{Error, Result};
pub use objective::{AdditiveMcObjective, EstimatorKind, GradSample, Reparam};
