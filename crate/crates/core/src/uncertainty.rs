//! Predictive uncertainty from prediction divergence under perturbation.
//!
//! The score for a sample is the Euclidean norm, in logit space, of the gap
//! between the ensemble's mean probability vector and the base model's
//! probability vector. Samples scoring at or below a threshold are flagged
//! unknown.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::NetworkParams;
use crate::perturb::{PerturbConfig, PerturbedEnsemble};

/// Probabilities are clamped into [EPS, 1 - EPS] before the logit map,
/// which is undefined at the endpoints.
const LOGIT_CLAMP: f64 = 1e-7;

/// Per-sample uncertainty score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub sample_id: usize,
    pub mu: f64,
}

/// Rejection threshold; samples with `mu <= mu_star` are flagged unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub mu_star: f64,
}

impl ThresholdConfig {
    pub fn new(mu_star: f64) -> Result<Self> {
        if !mu_star.is_finite() {
            return Err(Error::InvalidConfig("mu_star must be finite".into()));
        }
        Ok(Self { mu_star })
    }
}

/// Elementwise logit map `log(p) - log(1 - p)` with endpoint clamping.
pub fn logit_transform(p: &[f64]) -> Vec<f64> {
    p.iter()
        .map(|&v| {
            let c = v.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
            c.ln() - (1.0 - c).ln()
        })
        .collect()
}

impl PerturbedEnsemble {
    /// Rebuilds an ensemble from explicit parts, validating member shapes.
    /// `make_ensemble` is the usual constructor; this exists for replaying
    /// stored members and for tests that script exact perturbations.
    pub fn from_parts(
        base: crate::nn::ClassifierModel,
        members: Vec<NetworkParams>,
        config: PerturbConfig,
    ) -> Result<Self> {
        for member in &members {
            if !member.conforms_to(base.spec()) {
                return Err(Error::InvalidConfig(
                    "ensemble member shape does not match base model".into(),
                ));
            }
        }
        Ok(Self::assemble(base, members, config))
    }
}

/// Predictive uncertainty of one sample under the ensemble.
///
/// The member probabilities are averaged per output dimension in ascending
/// value order, so the score is bit-exactly invariant to member reordering.
pub fn predictive_uncertainty(ensemble: &PerturbedEnsemble, x: &[f64]) -> Result<f64> {
    let base_probs = ensemble.base().forward(x)?.probs;
    let k = base_probs.len();
    let b = ensemble.members().len();

    let mut member_probs = Vec::with_capacity(b);
    for i in 0..b {
        member_probs.push(ensemble.member_forward(i, x)?.probs);
    }

    let mut mean_probs = vec![0.0; k];
    let mut column = vec![0.0; b];
    for (dim, mean) in mean_probs.iter_mut().enumerate() {
        for (i, probs) in member_probs.iter().enumerate() {
            column[i] = probs[dim];
        }
        column.sort_by(|a, b| a.partial_cmp(b).expect("probabilities are finite"));
        *mean = column.iter().sum::<f64>() / b as f64;
    }

    let g_mean = logit_transform(&mean_probs);
    let g_base = logit_transform(&base_probs);
    let mu = g_mean
        .iter()
        .zip(&g_base)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(mu)
}

/// Scores every sample of an open set; record ids are the sample indices.
pub fn score_open_set(
    ensemble: &PerturbedEnsemble,
    xs: &[Vec<f64>],
) -> Result<Vec<UncertaintyRecord>> {
    xs.iter()
        .enumerate()
        .map(|(sample_id, x)| {
            Ok(UncertaintyRecord {
                sample_id,
                mu: predictive_uncertainty(ensemble, x)?,
            })
        })
        .collect()
}

/// Splits records into (at-or-below-threshold ids, above-threshold ids).
/// The partition is exhaustive and disjoint; input order is preserved.
pub fn threshold_split(
    records: &[UncertaintyRecord],
    cfg: &ThresholdConfig,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut seen = std::collections::HashSet::with_capacity(records.len());
    let mut low = Vec::new();
    let mut high = Vec::new();
    for rec in records {
        if !seen.insert(rec.sample_id) {
            return Err(Error::DuplicateSampleId(rec.sample_id));
        }
        if rec.mu <= cfg.mu_star {
            low.push(rec.sample_id);
        } else {
            high.push(rec.sample_id);
        }
    }
    Ok((low, high))
}
