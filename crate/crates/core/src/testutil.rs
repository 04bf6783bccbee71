//! Helpers shared by the unit tests. Oracles here stay independent of the
//! implementation paths they check: the finite-difference probe only ever
//! calls the forward pass.

use rand_distr::{Distribution, StandardNormal};

use crate::nn::{gradients, mean_loss, ClassifierModel};
use crate::seed::rng_from_seed;

/// Two well-separated 2-D Gaussian blobs, `n` samples per class, labels 1/2.
pub fn two_blobs(n: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(2 * n);
    for (label, center) in [(1usize, [-2.0, -2.0]), (2usize, [2.0, 2.0])] {
        for _ in 0..n {
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            data.push((vec![center[0] + 0.5 * dx, center[1] + 0.5 * dy], label));
        }
    }
    data
}

/// Central finite differences on the batch loss, compared parameter by
/// parameter against the analytic gradient.
///
/// Relative error uses an absolute floor of 1 in the denominator so that
/// near-zero gradients (dead ReLU units) compare on an absolute scale.
pub fn finite_diff_check(model: &ClassifierModel, batch: &[(Vec<f64>, usize)], h: f64, tol: f64) {
    let analytic = gradients(model, batch).unwrap();
    let spec = model.spec().clone();
    for l in 0..analytic.layers.len() {
        let n_weights = analytic.layers[l].weights.len();
        for p in 0..n_weights + analytic.layers[l].bias.len() {
            let probe = |delta: f64| {
                let mut params = model.params().clone();
                if p < n_weights {
                    params.layers[l].weights[p] += delta;
                } else {
                    params.layers[l].bias[p - n_weights] += delta;
                }
                let perturbed = ClassifierModel::new(spec.clone(), params).unwrap();
                mean_loss(&perturbed, batch).unwrap()
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h);
            let a = if p < n_weights {
                analytic.layers[l].weights[p]
            } else {
                analytic.layers[l].bias[p - n_weights]
            };
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            assert!(
                rel <= tol,
                "layer {l} param {p}: analytic {a} vs numeric {numeric} (rel {rel})"
            );
        }
    }
}
