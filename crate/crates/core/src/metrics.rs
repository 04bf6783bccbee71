//! Evaluation over the K+1-way open-set decision: accuracy, macro
//! precision/recall/F1, and the unknown-class recall (true detection rate),
//! plus a rank-based separation score for uncertainty diagnostics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric bundle plus the confusion matrix it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Recall of the unknown class.
    pub tdr: f64,
    /// Sorted distinct labels observed in truth or prediction.
    pub labels: Vec<usize>,
    /// `confusion[t][p]` counts samples of truth label `labels[t]`
    /// predicted as `labels[p]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Computes the metric bundle. Labels are arbitrary positive ids; the macro
/// averages run over every class observed in truth or prediction, and
/// `unknown_label` names the class whose recall is reported as TDR.
/// Zero-denominator precision/recall/F1 terms count as 0.
pub fn evaluate(truth: &[usize], predicted: &[usize], unknown_label: usize) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::EmptyInput("evaluation labels"));
    }
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predicted.len(),
            context: "prediction labels",
        });
    }

    let labels: Vec<usize> = truth
        .iter()
        .chain(predicted)
        .cloned()
        .collect::<BTreeSet<usize>>()
        .into_iter()
        .collect();
    let index_of = |label: usize| labels.binary_search(&label).expect("label in set");

    let k = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[index_of(t)][index_of(p)] += 1;
    }

    let total: usize = truth.len();
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let accuracy = correct as f64 / total as f64;

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut tdr = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let tp = confusion[i][i] as f64;
        let truth_count: usize = confusion[i].iter().sum();
        let pred_count: usize = (0..k).map(|t| confusion[t][i]).sum();
        let precision = if pred_count > 0 {
            tp / pred_count as f64
        } else {
            0.0
        };
        let recall = if truth_count > 0 {
            tp / truth_count as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        precision_sum += precision;
        recall_sum += recall;
        f1_sum += f1;
        if label == unknown_label {
            tdr = recall;
        }
    }

    Ok(EvalReport {
        accuracy,
        precision: precision_sum / k as f64,
        recall: recall_sum / k as f64,
        f1: f1_sum / k as f64,
        tdr,
        labels,
        confusion,
    })
}

/// Probability that a random known-sample score exceeds a random
/// unknown-sample score, ties counting one half (computed from midranks).
pub fn separation_auc(mu_known: &[f64], mu_unknown: &[f64]) -> Result<f64> {
    if mu_known.is_empty() || mu_unknown.is_empty() {
        return Err(Error::EmptyInput("separation groups"));
    }
    let n_k = mu_known.len();
    let n_u = mu_unknown.len();
    let mut combined: Vec<(f64, bool)> = mu_known
        .iter()
        .map(|&m| (m, true))
        .chain(mu_unknown.iter().map(|&m| (m, false)))
        .collect();
    combined.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores are finite"));

    // Midranks over tied runs, 1-based.
    let total = combined.len();
    let mut rank_sum_known = 0.0;
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && combined[j + 1].0 == combined[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for item in &combined[i..=j] {
            if item.1 {
                rank_sum_known += midrank;
            }
        }
        i = j + 1;
    }

    let u = rank_sum_known - (n_k * (n_k + 1)) as f64 / 2.0;
    Ok(u / (n_k as f64 * n_u as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one() {
        let truth = vec![1, 2, 3, 3, 1];
        let report = evaluate(&truth, &truth, 3).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.tdr, 1.0);
    }

    #[test]
    fn tdr_counts_detected_unknowns() {
        // 4 true unknowns (label 3), 3 detected.
        let truth = vec![3, 3, 3, 3, 1, 2];
        let predicted = vec![3, 3, 3, 1, 1, 2];
        let report = evaluate(&truth, &predicted, 3).unwrap();
        assert!((report.tdr - 0.75).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_six_sample_instance() {
        let truth = vec![1, 1, 2, 2, 3, 3];
        let predicted = vec![1, 2, 2, 2, 3, 1];
        let report = evaluate(&truth, &predicted, 3).unwrap();
        assert!((report.accuracy - 4.0 / 6.0).abs() <= 1e-9);
        assert!((report.precision - 13.0 / 18.0).abs() <= 1e-9);
        assert!((report.recall - 2.0 / 3.0).abs() <= 1e-9);
        assert!((report.f1 - 59.0 / 90.0).abs() <= 1e-9);
        assert!((report.tdr - 0.5).abs() <= 1e-9);
        assert_eq!(report.confusion[0], vec![1, 1, 0]);
        assert_eq!(report.confusion[1], vec![0, 2, 0]);
        assert_eq!(report.confusion[2], vec![1, 0, 1]);
    }

    #[test]
    fn confusion_rows_sum_to_truth_counts() {
        let truth = vec![1, 1, 1, 2, 3, 3];
        let predicted = vec![2, 1, 3, 2, 3, 3];
        let report = evaluate(&truth, &predicted, 3).unwrap();
        for (i, &label) in report.labels.iter().enumerate() {
            let row_sum: usize = report.confusion[i].iter().sum();
            let truth_count = truth.iter().filter(|&&t| t == label).count();
            assert_eq!(row_sum, truth_count);
        }
    }

    #[test]
    fn metrics_invariant_under_label_permutation() {
        let truth = vec![1, 2, 2, 3, 3, 3, 1];
        let predicted = vec![1, 2, 3, 3, 1, 3, 2];
        let a = evaluate(&truth, &predicted, 3).unwrap();
        // Permutation 1 -> 5, 2 -> 1, 3 -> 9.
        let map = |l: usize| match l {
            1 => 5,
            2 => 1,
            _ => 9,
        };
        let pt: Vec<usize> = truth.iter().map(|&l| map(l)).collect();
        let pp: Vec<usize> = predicted.iter().map(|&l| map(l)).collect();
        let b = evaluate(&pt, &pp, 9).unwrap();
        assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        assert!((a.precision - b.precision).abs() < 1e-12);
        assert!((a.recall - b.recall).abs() < 1e-12);
        assert!((a.f1 - b.f1).abs() < 1e-12);
        assert!((a.tdr - b.tdr).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            evaluate(&[1, 2], &[1], 2),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(evaluate(&[], &[], 1), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn auc_extremes_and_ties() {
        assert_eq!(separation_auc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(separation_auc(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(separation_auc(&[1.0, 3.0], &[2.0]).unwrap(), 0.5);
        assert!(matches!(
            separation_auc(&[], &[1.0]),
            Err(Error::EmptyInput(_))
        ));
    }

    /// Naive O(n*m) pair counting, the oracle for the rank-based routine.
    fn pair_count_auc(known: &[f64], unknown: &[f64]) -> f64 {
        let mut score = 0.0;
        for &k in known {
            for &u in unknown {
                if k > u {
                    score += 1.0;
                } else if k == u {
                    score += 0.5;
                }
            }
        }
        score / (known.len() * unknown.len()) as f64
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn score_vec() -> impl Strategy<Value = Vec<f64>> {
            // Coarse grid of values so ties actually occur.
            proptest::collection::vec((0..20u8).prop_map(|v| v as f64 / 4.0), 1..25)
        }

        proptest! {
            #[test]
            fn auc_matches_pair_counting(a in score_vec(), b in score_vec()) {
                let fast = separation_auc(&a, &b).unwrap();
                let slow = pair_count_auc(&a, &b);
                prop_assert!((fast - slow).abs() <= 1e-12);
            }

            #[test]
            fn auc_is_antisymmetric(a in score_vec(), b in score_vec()) {
                let ab = separation_auc(&a, &b).unwrap();
                let ba = separation_auc(&b, &a).unwrap();
                prop_assert_eq!(ab + ba, 1.0);
            }

            #[test]
            fn evaluate_matches_naive_counting(
                pairs in proptest::collection::vec((1..5usize, 1..5usize), 1..50)
            ) {
                let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
                let predicted: Vec<usize> = pairs.iter().map(|p| p.1).collect();
                let report = evaluate(&truth, &predicted, 4).unwrap();
                let correct = truth.iter().zip(&predicted).filter(|(t, p)| t == p).count();
                prop_assert!((report.accuracy - correct as f64 / truth.len() as f64).abs() <= 1e-12);
                // Per-class recall oracle.
                for (i, &label) in report.labels.iter().enumerate() {
                    let tp = truth
                        .iter()
                        .zip(&predicted)
                        .filter(|(&t, &p)| t == label && p == label)
                        .count();
                    let denom = truth.iter().filter(|&&t| t == label).count();
                    let recall = if denom > 0 { tp as f64 / denom as f64 } else { 0.0 };
                    let row_tp = report.confusion[i][i];
                    prop_assert_eq!(row_tp, tp);
                    if label == 4 {
                        prop_assert!((report.tdr - recall).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
