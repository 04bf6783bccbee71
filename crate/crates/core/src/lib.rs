//! Open set recognition through parameter-perturbation uncertainty and
//! two-stage unknown detection.
//!
//! A trained classifier is copied `B` times with per-layer Gaussian parameter
//! noise; the divergence between the ensemble's mean prediction and the base
//! prediction, measured in logit space, scores each sample's predictive
//! uncertainty. Low-uncertainty samples are rejected as unknown outright, and
//! two learned detectors (a subclass discriminant model with a naive-Bayes
//! head, then a decision tree) refine the remaining boundary cases. Survivors
//! keep the base classifier's label.
//!
//! Modules follow that flow: [`nn`] trains the base model, [`perturb`] builds
//! the ensemble, [`uncertainty`] scores and thresholds, [`isda`] and [`tree`]
//! are the two refinement stages, [`pipeline`] orchestrates them, and
//! [`data`] / [`metrics`] supply datasets and evaluation.

pub mod data;
pub mod error;
pub mod gmm;
pub mod isda;
pub mod metrics;
pub mod nn;
pub mod perturb;
pub mod pipeline;
pub mod seed;
pub mod tree;
pub mod uncertainty;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
