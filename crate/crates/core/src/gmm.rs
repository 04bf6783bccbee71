//! Diagonal-covariance Gaussian mixture fitted by EM.
//!
//! Used for probabilistic soft subclass assignment: responsibilities replace
//! hard cluster memberships so downstream scatter estimates vary smoothly.
//! All log-density work happens in log space with log-sum-exp normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Variance floor applied every M-step.
pub const VARIANCE_FLOOR: f64 = 1e-6;
const EM_TOL: f64 = 1e-6;
const EM_MAX_ITERS: usize = 100;

/// A fitted mixture: component weights, means, and diagonal variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl GmmModel {
    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// Log density of one diagonal Gaussian component at `x`.
    fn component_log_density(&self, j: usize, x: &[f64]) -> f64 {
        const LN_2PI: f64 = 1.837877066409345;
        let mut acc = 0.0;
        for ((&xd, &md), &vd) in x.iter().zip(&self.means[j]).zip(&self.variances[j]) {
            let diff = xd - md;
            acc += -0.5 * (LN_2PI + vd.ln()) - diff * diff / (2.0 * vd);
        }
        acc
    }

    /// Joint log densities `ln(w_j) + ln N(x; m_j, v_j)` for all components.
    fn joint_log_densities(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_components())
            .map(|j| self.weights[j].max(f64::MIN_POSITIVE).ln() + self.component_log_density(j, x))
            .collect()
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Posterior component memberships of `x`; sums to 1.
pub fn responsibilities(gmm: &GmmModel, x: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), gmm.dim(), "responsibilities: dimension mismatch");
    let joint = gmm.joint_log_densities(x);
    let norm = log_sum_exp(&joint);
    joint.iter().map(|&l| (l - norm).exp()).collect()
}

/// Mean per-sample log-likelihood is sometimes useful too, but the EM loop
/// and the tests track the total.
pub fn log_likelihood(gmm: &GmmModel, xs: &[Vec<f64>]) -> f64 {
    xs.iter()
        .map(|x| log_sum_exp(&gmm.joint_log_densities(x)))
        .sum()
}

/// Fits an `h`-component mixture by EM.
///
/// Means start at farthest-point seeds drawn from the data (first pick is
/// random given `seed`), weights start uniform, variances start at the
/// per-dimension data variance. Iterates until the log-likelihood gain drops
/// below 1e-6 or 100 iterations.
pub fn fit_gmm(xs: &[Vec<f64>], h: usize, seed: u64) -> Result<GmmModel> {
    fit_gmm_traced(xs, h, seed).map(|(model, _)| model)
}

/// `fit_gmm` plus the log-likelihood value at the start of every iteration.
pub fn fit_gmm_traced(xs: &[Vec<f64>], h: usize, seed: u64) -> Result<(GmmModel, Vec<f64>)> {
    if h == 0 {
        return Err(Error::InvalidConfig("component count must be >= 1".into()));
    }
    if xs.len() < h {
        return Err(Error::InsufficientSamples {
            have: xs.len(),
            need: h,
            context: "mixture fit",
        });
    }
    let dim = xs[0].len();
    if dim == 0 || xs.iter().any(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: xs.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(0),
            context: "mixture samples",
        });
    }

    let mut gmm = init_gmm(xs, h, dim, seed);
    let n = xs.len();
    let mut resp = vec![vec![0.0; h]; n];
    let mut ll_prev = f64::NEG_INFINITY;
    let mut trace = Vec::new();

    for iter in 0..EM_MAX_ITERS {
        // E step at the current parameters; also yields the log-likelihood.
        let mut ll = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let joint = gmm.joint_log_densities(x);
            let norm = log_sum_exp(&joint);
            ll += norm;
            for j in 0..h {
                resp[i][j] = (joint[j] - norm).exp();
            }
        }
        trace.push(ll);
        if iter > 0 && ll - ll_prev < EM_TOL {
            break;
        }
        ll_prev = ll;

        // M step.
        for j in 0..h {
            let nj: f64 = resp.iter().map(|r| r[j]).sum();
            if nj < 1e-12 {
                // Collapsed component: keep its parameters, only its weight decays.
                gmm.weights[j] = nj / n as f64;
                continue;
            }
            gmm.weights[j] = nj / n as f64;
            let mean = &mut gmm.means[j];
            mean.iter_mut().for_each(|m| *m = 0.0);
            for (x, r) in xs.iter().zip(&resp) {
                for (m, &xd) in mean.iter_mut().zip(x) {
                    *m += r[j] * xd;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nj);

            let var = &mut gmm.variances[j];
            var.iter_mut().for_each(|v| *v = 0.0);
            for (x, r) in xs.iter().zip(&resp) {
                for ((v, &xd), &md) in var.iter_mut().zip(x).zip(gmm.means[j].iter()) {
                    let diff = xd - md;
                    *v += r[j] * diff * diff;
                }
            }
            var.iter_mut()
                .for_each(|v| *v = (*v / nj).max(VARIANCE_FLOOR));
        }
    }

    Ok((gmm, trace))
}

fn init_gmm(xs: &[Vec<f64>], h: usize, dim: usize, seed: u64) -> GmmModel {
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    let n = xs.len();

    // Farthest-point seeding: random first pick, then repeatedly the sample
    // farthest from its nearest chosen center (lowest index on ties).
    let mut centers = vec![rng.random_range(0..n)];
    while centers.len() < h {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, x) in xs.iter().enumerate() {
            let nearest = centers
                .iter()
                .map(|&c| sq_dist(x, &xs[c]))
                .fold(f64::INFINITY, f64::min);
            if nearest > best.1 {
                best = (i, nearest);
            }
        }
        centers.push(best.0);
    }

    let mut data_var = vec![0.0; dim];
    let mut data_mean = vec![0.0; dim];
    for x in xs {
        for (m, &xd) in data_mean.iter_mut().zip(x) {
            *m += xd;
        }
    }
    data_mean.iter_mut().for_each(|m| *m /= n as f64);
    for x in xs {
        for ((v, &xd), &md) in data_var.iter_mut().zip(x).zip(&data_mean) {
            let diff = xd - md;
            *v += diff * diff;
        }
    }
    data_var
        .iter_mut()
        .for_each(|v| *v = (*v / n as f64).max(VARIANCE_FLOOR));

    GmmModel {
        weights: vec![1.0 / h as f64; h],
        means: centers.iter().map(|&c| xs[c].clone()).collect(),
        variances: vec![data_var; h],
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
