//! End-to-end open-set detection: threshold split on predictive uncertainty,
//! stage-1 refinement (subclass discriminant detector), stage-2 refinement
//! (decision tree), and final labeling of the survivors by the base model.
//!
//! The orchestration skeleton takes the two refinement stages as injectable
//! callbacks so it can be exercised against scripted stand-ins; the real
//! stages are wired in by [`run_pipeline`] / [`ablate`]. Rejections are
//! monotone: once a sample is flagged unknown it is never re-examined, and
//! known-class labels only ever come from the base classifier.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isda::{fit_isda, predict_isda, DetectorSample, FeatureSource, IsdaModel};
use crate::nn::ClassifierModel;
use crate::perturb::{make_ensemble, PerturbConfig, PerturbedEnsemble};
use crate::tree::{fit_tree, DtConfig};
use crate::uncertainty::{
    predictive_uncertainty, score_open_set, threshold_split, ThresholdConfig, UncertaintyRecord,
};

/// What the stage-2 tree consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Features {
    /// Low-dimensional probability-space vector:
    /// [stage-1 unknown posterior, mu, base-model max softmax probability].
    ProbabilitySpace,
    /// The same feature vectors the stage-1 detector saw.
    Raw,
}

/// Everything the detection run needs beyond the trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub perturb: PerturbConfig,
    pub mu_star: f64,
    pub h1: usize,
    pub h2: usize,
    /// Relative ridge for the discriminant projection.
    pub gamma: f64,
    pub dt: DtConfig,
    pub feature_source: FeatureSource,
    pub stage2_features: Stage2Features,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h1 == 0 || self.h2 == 0 {
            return Err(Error::InvalidConfig("h1 and h2 must be >= 1".into()));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(Error::InvalidConfig("gamma must be finite and > 0".into()));
        }
        if !self.mu_star.is_finite() {
            return Err(Error::InvalidConfig("mu_star must be finite".into()));
        }
        if self.dt.max_depth == 0 || self.dt.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig(
                "decision tree config must have positive depth and leaf size".into(),
            ));
        }
        Ok(())
    }
}

/// Which part of the cascade produced a final label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Rejected by the uncertainty threshold.
    Threshold,
    /// Rejected by the stage-1 discriminant detector.
    Isda,
    /// Rejected by the stage-2 tree.
    Tree,
    /// Survived the cascade; labeled by the base classifier.
    Known,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Threshold => "threshold",
            Provenance::Isda => "isda",
            Provenance::Tree => "tree",
            Provenance::Known => "known",
        }
    }
}

/// Final decision for one open-set sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub sample_id: usize,
    /// 1..=K for knowns, K+1 for unknowns.
    pub final_label: usize,
    pub provenance: Provenance,
    pub mu: f64,
}

/// Where a merged-pool row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergedOrigin {
    Train,
    ThresholdReject,
    Stage1Reject,
}

/// One row of the growing binary-labeled pool the detectors train on.
#[derive(Debug, Clone)]
pub struct MergedEntry {
    /// Stage feature vector (embedding or raw, per config).
    pub features: Vec<f64>,
    /// Binary label: train rows are known (false), rejects unknown (true).
    pub unknown: bool,
    pub origin: MergedOrigin,
    /// Original 1-based class id, for train rows only.
    pub class_id: Option<usize>,
    /// Index into the training set (train rows) or the open set (rejects).
    pub source_index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct MergedDataset {
    pub entries: Vec<MergedEntry>,
}

impl MergedDataset {
    pub fn to_detector_samples(&self) -> Vec<DetectorSample> {
        self.entries
            .iter()
            .map(|e| DetectorSample {
                features: e.features.clone(),
                unknown: e.unknown,
                known_class: e.class_id,
            })
            .collect()
    }
}

/// A refinement candidate handed to a stage callback.
#[derive(Debug, Clone)]
pub struct StageCandidate {
    pub open_index: usize,
    pub features: Vec<f64>,
}

/// A stage callback fits on the merged pool and flags each candidate
/// (true = unknown). Flags align with the candidate slice.
pub type StageFn<'a> = &'a mut dyn FnMut(&MergedDataset, &[StageCandidate]) -> Result<Vec<bool>>;

/// Structured warnings surfaced by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PipelineWarning {
    /// Too few threshold rejects to fit the stage-1 mixture; the run fell
    /// back to threshold-only detection.
    DegenerateThresholdSet { rejected: usize, required: usize },
}

/// Detection output: one result per open sample plus scores and warnings.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub results: Vec<DetectionResult>,
    pub records: Vec<UncertaintyRecord>,
    pub warnings: Vec<PipelineWarning>,
}

/// Ablation switches mirroring the cascade's components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    PerturbationOnly,
    NoIsda,
    NoDt,
}

/// The cascade skeleton with injectable stages.
///
/// Every open sample appears exactly once in the output, ordered by id:
/// threshold rejects, then stage-1 rejects, then stage-2 rejects, then
/// base-model labels for the survivors.
#[allow(clippy::too_many_arguments)] // mirrors the cascade's full input contract
pub fn detect_with_stages(
    train: &[(Vec<f64>, usize)],
    open: &[Vec<f64>],
    records: &[UncertaintyRecord],
    mu_star: f64,
    num_known: usize,
    mut stage1: Option<StageFn>,
    mut stage2: Option<StageFn>,
    known_label: &mut dyn FnMut(usize) -> Result<usize>,
) -> Result<Vec<DetectionResult>> {
    if records.len() != open.len() {
        return Err(Error::DimensionMismatch {
            expected: open.len(),
            got: records.len(),
            context: "uncertainty records",
        });
    }
    for rec in records {
        if rec.sample_id >= open.len() {
            return Err(Error::DuplicateSampleId(rec.sample_id));
        }
    }
    let unknown_label = num_known + 1;
    let mut mu_of = vec![0.0; open.len()];
    for rec in records {
        mu_of[rec.sample_id] = rec.mu;
    }

    let cfg = ThresholdConfig::new(mu_star)?;
    let (mut rejected, mut candidates) = threshold_split(records, &cfg)?;
    rejected.sort_unstable();
    candidates.sort_unstable();

    let mut results: Vec<DetectionResult> = rejected
        .iter()
        .map(|&id| DetectionResult {
            sample_id: id,
            final_label: unknown_label,
            provenance: Provenance::Threshold,
            mu: mu_of[id],
        })
        .collect();

    let mut merged = MergedDataset::default();
    for (i, (x, class)) in train.iter().enumerate() {
        merged.entries.push(MergedEntry {
            features: x.clone(),
            unknown: false,
            origin: MergedOrigin::Train,
            class_id: Some(*class),
            source_index: i,
        });
    }
    for &id in &rejected {
        merged.entries.push(MergedEntry {
            features: open[id].clone(),
            unknown: true,
            origin: MergedOrigin::ThresholdReject,
            class_id: None,
            source_index: id,
        });
    }

    // Stage 1: refine the threshold survivors.
    let mut survivors = candidates;
    if let Some(stage) = stage1.as_mut() {
        if !survivors.is_empty() {
            let cands: Vec<StageCandidate> = survivors
                .iter()
                .map(|&id| StageCandidate {
                    open_index: id,
                    features: open[id].clone(),
                })
                .collect();
            let flags = stage(&merged, &cands)?;
            if flags.len() != cands.len() {
                return Err(Error::DimensionMismatch {
                    expected: cands.len(),
                    got: flags.len(),
                    context: "stage-1 flags",
                });
            }
            let mut remaining = Vec::new();
            for (cand, flag) in cands.iter().zip(&flags) {
                if *flag {
                    results.push(DetectionResult {
                        sample_id: cand.open_index,
                        final_label: unknown_label,
                        provenance: Provenance::Isda,
                        mu: mu_of[cand.open_index],
                    });
                    merged.entries.push(MergedEntry {
                        features: cand.features.clone(),
                        unknown: true,
                        origin: MergedOrigin::Stage1Reject,
                        class_id: None,
                        source_index: cand.open_index,
                    });
                } else {
                    remaining.push(cand.open_index);
                }
            }
            survivors = remaining;
        }
    }

    // Stage 2: refine the residual candidates.
    if let Some(stage) = stage2.as_mut() {
        if !survivors.is_empty() {
            let cands: Vec<StageCandidate> = survivors
                .iter()
                .map(|&id| StageCandidate {
                    open_index: id,
                    features: open[id].clone(),
                })
                .collect();
            let flags = stage(&merged, &cands)?;
            if flags.len() != cands.len() {
                return Err(Error::DimensionMismatch {
                    expected: cands.len(),
                    got: flags.len(),
                    context: "stage-2 flags",
                });
            }
            let mut remaining = Vec::new();
            for (cand, flag) in cands.iter().zip(&flags) {
                if *flag {
                    results.push(DetectionResult {
                        sample_id: cand.open_index,
                        final_label: unknown_label,
                        provenance: Provenance::Tree,
                        mu: mu_of[cand.open_index],
                    });
                } else {
                    remaining.push(cand.open_index);
                }
            }
            survivors = remaining;
        }
    }

    // Survivors keep their base-model class labels.
    for &id in &survivors {
        let label = known_label(id)?;
        if label == 0 || label > num_known {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: num_known,
            });
        }
        results.push(DetectionResult {
            sample_id: id,
            final_label: label,
            provenance: Provenance::Known,
            mu: mu_of[id],
        });
    }

    results.sort_by_key(|r| r.sample_id);
    debug_assert_eq!(results.len(), open.len());
    Ok(results)
}

/// Runs the full cascade on an open set.
///
/// `train` holds standardized raw features with 1-based labels; `open` the
/// standardized raw open-set features. Stage feature vectors (embedding or
/// raw) are derived here per the config.
pub fn run_pipeline(
    model: &ClassifierModel,
    train: &[(Vec<f64>, usize)],
    open: &[Vec<f64>],
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    ablate(model, train, open, cfg, AblationMode::Full)
}

/// [`run_pipeline`] with stage ablation switches.
pub fn ablate(
    model: &ClassifierModel,
    train: &[(Vec<f64>, usize)],
    open: &[Vec<f64>],
    cfg: &PipelineConfig,
    mode: AblationMode,
) -> Result<PipelineRun> {
    cfg.validate()?;
    let num_known = model.spec().num_classes;
    for (_, label) in train {
        if *label == 0 || *label > num_known {
            return Err(Error::LabelOutOfRange {
                label: *label,
                num_classes: num_known,
            });
        }
    }

    let ensemble = make_ensemble(model, &cfg.perturb);
    let records = score_open_set(&ensemble, open)?;

    let stage_features = |x: &[f64]| -> Result<Vec<f64>> {
        match cfg.feature_source {
            FeatureSource::Embedding => Ok(model.forward(x)?.embedding),
            FeatureSource::Raw => Ok(x.to_vec()),
        }
    };
    let train_stage: Vec<(Vec<f64>, usize)> = train
        .iter()
        .map(|(x, label)| Ok((stage_features(x)?, *label)))
        .collect::<Result<_>>()?;
    let open_stage: Vec<Vec<f64>> = open
        .iter()
        .map(|x| stage_features(x))
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let mut mode = mode;
    let wants_stage1 = matches!(mode, AblationMode::Full | AblationMode::NoDt);
    if wants_stage1 {
        let rejected = records.iter().filter(|r| r.mu <= cfg.mu_star).count();
        let required = cfg.h1.max(2);
        if rejected < required {
            log::warn!(
                "only {rejected} threshold rejects (< {required}); falling back to threshold-only detection"
            );
            warnings.push(PipelineWarning::DegenerateThresholdSet { rejected, required });
            mode = AblationMode::PerturbationOnly;
        }
    }

    // Probability-space inputs for the stage-2 tree, by merged-pool source.
    let use_prob_space = cfg.stage2_features == Stage2Features::ProbabilitySpace;
    let needs_stage2 = matches!(mode, AblationMode::Full | AblationMode::NoIsda);
    let max_prob = |x: &[f64]| -> Result<f64> {
        let probs = model.forward(x)?.probs;
        Ok(probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    };
    let (train_mu, train_max_prob, open_max_prob) = if needs_stage2 && use_prob_space {
        let mut tmu = Vec::with_capacity(train.len());
        let mut tmp = Vec::with_capacity(train.len());
        for (x, _) in train {
            tmu.push(predictive_uncertainty(&ensemble, x)?);
            tmp.push(max_prob(x)?);
        }
        let omp: Vec<f64> = open.iter().map(|x| max_prob(x)).collect::<Result<_>>()?;
        (tmu, tmp, omp)
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    let mu_of: Vec<f64> = {
        let mut v = vec![0.0; open.len()];
        for rec in &records {
            v[rec.sample_id] = rec.mu;
        }
        v
    };

    let isda_slot: RefCell<Option<IsdaModel>> = RefCell::new(None);

    let mut stage1_fn = |merged: &MergedDataset, cands: &[StageCandidate]| -> Result<Vec<bool>> {
        let samples = merged.to_detector_samples();
        let fitted = fit_isda(
            &samples,
            cfg.h1,
            cfg.h2,
            cfg.gamma,
            cfg.seed,
            cfg.feature_source,
        )?;
        let flags = cands
            .iter()
            .map(|c| predict_isda(&fitted, &c.features).map(|(label, _)| label == 1))
            .collect::<Result<Vec<bool>>>()?;
        *isda_slot.borrow_mut() = Some(fitted);
        Ok(flags)
    };

    let mut stage2_fn = |merged: &MergedDataset, cands: &[StageCandidate]| -> Result<Vec<bool>> {
        let isda = isda_slot.borrow();
        // Probability-space row: [stage-1 posterior (when fitted), mu, max prob].
        let prob_row = |stage_feat: &[f64], mu: f64, maxp: f64| -> Result<Vec<f64>> {
            let mut row = Vec::with_capacity(3);
            if let Some(model) = isda.as_ref() {
                let (_, posterior) = predict_isda(model, stage_feat)?;
                row.push(posterior);
            }
            row.push(mu);
            row.push(maxp);
            Ok(row)
        };
        let mut rows: Vec<(Vec<f64>, u8)> = Vec::with_capacity(merged.entries.len());
        for entry in &merged.entries {
            let features = if use_prob_space {
                match entry.origin {
                    MergedOrigin::Train => prob_row(
                        &entry.features,
                        train_mu[entry.source_index],
                        train_max_prob[entry.source_index],
                    )?,
                    _ => prob_row(
                        &entry.features,
                        mu_of[entry.source_index],
                        open_max_prob[entry.source_index],
                    )?,
                }
            } else {
                entry.features.clone()
            };
            rows.push((features, u8::from(entry.unknown)));
        }
        let tree = fit_tree(&rows, &cfg.dt)?;
        cands
            .iter()
            .map(|c| {
                let features = if use_prob_space {
                    prob_row(
                        &c.features,
                        mu_of[c.open_index],
                        open_max_prob[c.open_index],
                    )?
                } else {
                    c.features.clone()
                };
                Ok(tree.predict(&features)? == 1)
            })
            .collect()
    };

    let mut known_label = |id: usize| model.predict(&open[id]);

    let (s1, s2): (Option<StageFn>, Option<StageFn>) = match mode {
        AblationMode::Full => (Some(&mut stage1_fn), Some(&mut stage2_fn)),
        AblationMode::PerturbationOnly => (None, None),
        AblationMode::NoIsda => (None, Some(&mut stage2_fn)),
        AblationMode::NoDt => (Some(&mut stage1_fn), None),
    };

    let results = detect_with_stages(
        &train_stage,
        &open_stage,
        &records,
        cfg.mu_star,
        num_known,
        s1,
        s2,
        &mut known_label,
    )?;

    Ok(PipelineRun {
        results,
        records,
        warnings,
    })
}

/// Ensemble accessor for callers that score extra samples with the exact
/// ensemble a run used (density plots, grids).
pub fn build_ensemble(model: &ClassifierModel, cfg: &PipelineConfig) -> PerturbedEnsemble {
    make_ensemble(model, &cfg.perturb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{NetworkSpec, TrainConfig};
    use crate::testutil::two_blobs;
    use crate::tree::DtConfig;

    fn base_config(mu_star: f64) -> PipelineConfig {
        PipelineConfig {
            perturb: PerturbConfig::new(5, 0.5, 7).unwrap(),
            mu_star,
            h1: 2,
            h2: 1,
            gamma: 1e-4,
            dt: DtConfig::default(),
            feature_source: FeatureSource::Embedding,
            stage2_features: Stage2Features::ProbabilitySpace,
            seed: 3,
        }
    }

    fn scripted_records(mus: &[f64]) -> Vec<UncertaintyRecord> {
        mus.iter()
            .enumerate()
            .map(|(sample_id, &mu)| UncertaintyRecord { sample_id, mu })
            .collect()
    }

    #[test]
    fn all_below_threshold_short_circuits() {
        let train = vec![(vec![0.0], 1usize), (vec![1.0], 2)];
        let open = vec![vec![0.5], vec![0.6], vec![0.7]];
        let records = scripted_records(&[1.0, 2.0, 3.0]);
        let mut stage_called = false;
        let mut stage = |_: &MergedDataset, cands: &[StageCandidate]| {
            stage_called = true;
            Ok(vec![false; cands.len()])
        };
        let mut known = |_: usize| Ok(1usize);
        let results = detect_with_stages(
            &train,
            &open,
            &records,
            10.0,
            2,
            Some(&mut stage),
            None,
            &mut known,
        )
        .unwrap();
        assert!(
            !stage_called,
            "stages must be vacuous when everything is rejected"
        );
        assert_eq!(results.len(), 3);
        for r in &results {
            assert_eq!(r.final_label, 3);
            assert_eq!(r.provenance, Provenance::Threshold);
        }
    }

    #[test]
    fn hand_traced_cascade_matches() {
        // 6 open samples with scripted scores; threshold 2.0 rejects {0, 1};
        // the scripted stage 1 rejects open index 2, stage 2 rejects 4;
        // survivors 3 and 5 get scripted class labels 2 and 1.
        let train = vec![(vec![-1.0], 1usize), (vec![1.0], 2)];
        let open: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let records = scripted_records(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

        let mut stage1 = |merged: &MergedDataset, cands: &[StageCandidate]| {
            // Merged pool at this point: 2 train rows + threshold rejects {0, 1}.
            assert_eq!(merged.entries.len(), 4);
            assert_eq!(
                merged
                    .entries
                    .iter()
                    .filter(|e| e.origin == MergedOrigin::ThresholdReject)
                    .map(|e| e.source_index)
                    .collect::<Vec<_>>(),
                vec![0, 1]
            );
            assert!(merged
                .entries
                .iter()
                .all(|e| e.unknown == (e.origin != MergedOrigin::Train)));
            let ids: Vec<usize> = cands.iter().map(|c| c.open_index).collect();
            assert_eq!(ids, vec![2, 3, 4, 5]);
            Ok(ids.iter().map(|&id| id == 2).collect())
        };
        let mut stage2 = |merged: &MergedDataset, cands: &[StageCandidate]| {
            // Now also contains the stage-1 reject {2}.
            assert_eq!(merged.entries.len(), 5);
            assert_eq!(
                merged
                    .entries
                    .iter()
                    .filter(|e| e.origin == MergedOrigin::Stage1Reject)
                    .map(|e| e.source_index)
                    .collect::<Vec<_>>(),
                vec![2]
            );
            let ids: Vec<usize> = cands.iter().map(|c| c.open_index).collect();
            assert_eq!(ids, vec![3, 4, 5]);
            Ok(ids.iter().map(|&id| id == 4).collect())
        };
        let mut known = |id: usize| Ok(if id == 3 { 2 } else { 1 });

        let results = detect_with_stages(
            &train,
            &open,
            &records,
            2.0,
            2,
            Some(&mut stage1),
            Some(&mut stage2),
            &mut known,
        )
        .unwrap();

        let expected = vec![
            (0, 3, Provenance::Threshold),
            (1, 3, Provenance::Threshold),
            (2, 3, Provenance::Isda),
            (3, 2, Provenance::Known),
            (4, 3, Provenance::Tree),
            (5, 1, Provenance::Known),
        ];
        for (r, (id, label, prov)) in results.iter().zip(expected) {
            assert_eq!(r.sample_id, id);
            assert_eq!(r.final_label, label);
            assert_eq!(r.provenance, prov);
        }
    }

    #[test]
    fn perturbation_only_uses_threshold_and_classifier() {
        let train = vec![(vec![-1.0], 1usize), (vec![1.0], 2)];
        let open: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let records = scripted_records(&[1.0, 5.0, 1.5, 9.0]);
        let mut known = |id: usize| Ok(if id == 1 { 2 } else { 1 });
        let results =
            detect_with_stages(&train, &open, &records, 2.0, 2, None, None, &mut known).unwrap();
        let labels: Vec<usize> = results.iter().map(|r| r.final_label).collect();
        assert_eq!(labels, vec![3, 2, 3, 1]);
        assert_eq!(results[3].provenance, Provenance::Known);
    }

    type TrainedSetup = (ClassifierModel, Vec<(Vec<f64>, usize)>, Vec<Vec<f64>>);

    /// Shared fixture: a trained two-class model plus a disjoint unknown blob.
    fn trained_setup() -> TrainedSetup {
        let train = two_blobs(80, 41);
        let spec = NetworkSpec::new(2, vec![16, 8], 2).unwrap();
        let model = ClassifierModel::init(spec, 1);
        let cfg = TrainConfig::new(40, 32, 0.01, 5).unwrap();
        let model = crate::nn::train(model, &train, &cfg).unwrap().model;

        let mut open: Vec<Vec<f64>> = Vec::new();
        // Known-class test points plus an unknown cluster off to the side.
        open.extend(two_blobs(20, 99).into_iter().map(|(x, _)| x));
        let mut rng = crate::seed::rng_from_seed(7);
        use rand_distr::{Distribution, StandardNormal};
        for _ in 0..40 {
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            open.push(vec![6.0 + 0.5 * dx, -6.0 + 0.5 * dy]);
        }
        (model, train, open)
    }

    #[test]
    fn full_mode_equals_run_pipeline() {
        let (model, train, open) = trained_setup();
        let cfg = base_config(1.0);
        let a = run_pipeline(&model, &train, &open, &cfg).unwrap();
        let b = ablate(&model, &train, &open, &cfg, AblationMode::Full).unwrap();
        assert_eq!(a.results, b.results);
    }

    #[test]
    fn output_partitions_the_open_set() {
        let (model, train, open) = trained_setup();
        let cfg = base_config(1.0);
        for mode in [
            AblationMode::Full,
            AblationMode::PerturbationOnly,
            AblationMode::NoIsda,
            AblationMode::NoDt,
        ] {
            let run = ablate(&model, &train, &open, &cfg, mode).unwrap();
            assert_eq!(run.results.len(), open.len());
            let mut ids: Vec<usize> = run.results.iter().map(|r| r.sample_id).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), open.len());
            for r in &run.results {
                let is_unknown = r.final_label == 3;
                assert_eq!(is_unknown, r.provenance != Provenance::Known);
            }
        }
    }

    #[test]
    fn run_is_deterministic() {
        let (model, train, open) = trained_setup();
        let cfg = base_config(1.0);
        let a = run_pipeline(&model, &train, &open, &cfg).unwrap();
        let b = run_pipeline(&model, &train, &open, &cfg).unwrap();
        assert_eq!(a.results, b.results);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.mu.to_bits(), y.mu.to_bits());
        }
    }

    #[test]
    fn degenerate_threshold_set_falls_back() {
        let (model, train, open) = trained_setup();
        // Impossible threshold: nothing gets rejected, so stage 1 cannot fit.
        let cfg = base_config(-1.0);
        let run = run_pipeline(&model, &train, &open, &cfg).unwrap();
        assert_eq!(run.warnings.len(), 1);
        assert!(matches!(
            run.warnings[0],
            PipelineWarning::DegenerateThresholdSet { rejected: 0, .. }
        ));
        // Fallback behaves exactly like the threshold-only mode.
        let po = ablate(&model, &train, &open, &cfg, AblationMode::PerturbationOnly).unwrap();
        assert_eq!(run.results, po.results);
    }

    #[test]
    fn tuned_reference_settings_run_end_to_end() {
        let (model, train, open) = trained_setup();
        let cfg = PipelineConfig {
            perturb: PerturbConfig::new(7, 0.3, 11).unwrap(),
            mu_star: 4.5,
            h1: 2,
            h2: 1,
            gamma: 1e-4,
            dt: DtConfig::default(),
            feature_source: FeatureSource::Embedding,
            stage2_features: Stage2Features::ProbabilitySpace,
            seed: 0,
        };
        let run = run_pipeline(&model, &train, &open, &cfg).unwrap();
        assert_eq!(run.results.len(), open.len());
    }

    #[test]
    fn known_labels_come_from_the_classifier() {
        let (model, train, open) = trained_setup();
        let cfg = base_config(1.0);
        let run = run_pipeline(&model, &train, &open, &cfg).unwrap();
        for r in run
            .results
            .iter()
            .filter(|r| r.provenance == Provenance::Known)
        {
            assert_eq!(r.final_label, model.predict(&open[r.sample_id]).unwrap());
        }
    }
}
