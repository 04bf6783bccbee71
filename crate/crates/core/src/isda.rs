//! Stage-1 unknown detector: subclass discriminant analysis with soft GMM
//! assignment and a Gaussian naive-Bayes head.
//!
//! Each known class is modeled by `h2` mixture components and the unknown
//! pool by `h1`; component responsibilities weight the within/between scatter
//! matrices, whose generalized eigenvectors give the discriminant projection.
//! A binary naive-Bayes classifier trained on the projected features produces
//! unknown posteriors for the next stage.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{fit_gmm, responsibilities, GmmModel};
use crate::seed::derive_seed;

/// Which feature space the detector sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Penultimate activations of the base classifier (default).
    Embedding,
    /// The raw standardized input features.
    Raw,
}

/// One row of the merged detector-training pool.
#[derive(Debug, Clone)]
pub struct DetectorSample {
    pub features: Vec<f64>,
    /// Binary label: true = unknown (1), false = known (0).
    pub unknown: bool,
    /// Original class id (1-based) for known rows; None for unknown rows.
    pub known_class: Option<usize>,
}

/// Binary Gaussian naive Bayes over projected features.
/// Index 0 = known, 1 = unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnbModel {
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
}

/// The fitted stage-1 detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsdaModel {
    pub h1: usize,
    pub h2: usize,
    /// Discriminant projection, `feature_dim x d`; columns are unit length.
    pub projection: DMatrix<f64>,
    pub gnb: GnbModel,
    pub feature_source: FeatureSource,
}

impl IsdaModel {
    pub fn feature_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn projected_dim(&self) -> usize {
        self.projection.ncols()
    }
}

/// Soft within-class and between-class scatter.
///
/// `subclass_resp[i]` assigns sample `i` a responsibility over every subclass
/// of every class (rows sum to 1). Subclasses with total responsibility below
/// 1e-8 are dropped from both sums.
pub fn scatter_matrices(
    features: &[Vec<f64>],
    subclass_resp: &[Vec<f64>],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if features.is_empty() {
        return Err(Error::EmptyInput("scatter features"));
    }
    if features.len() != subclass_resp.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: subclass_resp.len(),
            context: "per-sample responsibilities",
        });
    }
    let dim = features[0].len();
    let num_subclasses = subclass_resp[0].len();
    let n = features.len();

    // Global mean over all samples.
    let mut global = DVector::zeros(dim);
    for x in features {
        for (g, &xd) in global.iter_mut().zip(x) {
            *g += xd;
        }
    }
    global /= n as f64;

    let mut s_w = DMatrix::zeros(dim, dim);
    let mut s_b = DMatrix::zeros(dim, dim);

    for j in 0..num_subclasses {
        let nj: f64 = subclass_resp.iter().map(|r| r[j]).sum();
        if nj < 1e-8 {
            continue;
        }
        let mut mean = DVector::zeros(dim);
        for (x, r) in features.iter().zip(subclass_resp) {
            for (m, &xd) in mean.iter_mut().zip(x) {
                *m += r[j] * xd;
            }
        }
        mean /= nj;

        for (x, r) in features.iter().zip(subclass_resp) {
            let rij = r[j];
            if rij == 0.0 {
                continue;
            }
            for p in 0..dim {
                let dp = x[p] - mean[p];
                for q in 0..dim {
                    let dq = x[q] - mean[q];
                    s_w[(p, q)] += rij * dp * dq;
                }
            }
        }

        let diff = &mean - &global;
        for p in 0..dim {
            for q in 0..dim {
                s_b[(p, q)] += nj * diff[p] * diff[q];
            }
        }
    }

    Ok((s_w, s_b))
}

/// Top-`d` generalized eigenvectors of `(S_w + gamma I)^-1 S_b`.
///
/// Solved as a symmetric problem through the Cholesky factor of the ridged
/// within-scatter. Columns come back unit length, ordered by eigenvalue
/// descending, each with its largest-magnitude entry made positive.
pub fn fit_projection(
    s_w: &DMatrix<f64>,
    s_b: &DMatrix<f64>,
    gamma: f64,
    d: usize,
) -> Result<DMatrix<f64>> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::InvalidConfig("gamma must be finite and > 0".into()));
    }
    if d == 0 {
        return Err(Error::DegenerateProjection);
    }
    let dim = s_w.nrows();
    let d = d.min(dim);

    // Fully degenerate between-scatter: no discriminant directions exist.
    // Return the leading canonical basis vectors so callers can proceed.
    if s_b.amax() == 0.0 {
        log::warn!("between-class scatter is zero; projection falls back to the canonical basis");
        let mut w = DMatrix::zeros(dim, d);
        for j in 0..d {
            w[(j, j)] = 1.0;
        }
        return Ok(w);
    }

    // Cholesky of the ridged within-scatter; escalate the ridge if floating
    // point noise makes the matrix indefinite.
    let mut ridge = gamma;
    let chol = loop {
        let a = s_w + DMatrix::identity(dim, dim) * ridge;
        match a.cholesky() {
            Some(c) => break c,
            None if ridge < gamma * 1e6 => {
                ridge *= 10.0;
                log::warn!("within-scatter not positive definite; ridge raised to {ridge}");
            }
            None => {
                return Err(Error::InvalidConfig(
                    "within-class scatter is not positive definite even with ridge".into(),
                ))
            }
        }
    };

    // M = L^-1 S_b L^-T, symmetric with the same generalized spectrum.
    let l = chol.l();
    let t = l
        .solve_lower_triangular(s_b)
        .ok_or_else(|| Error::InvalidConfig("singular Cholesky factor".into()))?;
    let m = l
        .solve_lower_triangular(&t.transpose())
        .ok_or_else(|| Error::InvalidConfig("singular Cholesky factor".into()))?
        .transpose();
    let m = (&m + m.transpose()) * 0.5;

    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let lt = l.transpose();
    let mut w = DMatrix::zeros(dim, d);
    for (col, &idx) in order.iter().take(d).enumerate() {
        let v = eig.eigenvectors.column(idx).into_owned();
        // w = L^-T v, then normalized with a fixed sign convention.
        let mut wi = lt
            .solve_upper_triangular(&v)
            .ok_or_else(|| Error::InvalidConfig("singular Cholesky factor".into()))?;
        let norm = wi.norm();
        if norm > 0.0 {
            wi /= norm;
        }
        let lead = (0..dim)
            .max_by(|&a, &b| {
                wi[a]
                    .abs()
                    .partial_cmp(&wi[b].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.cmp(&a))
            })
            .unwrap_or(0);
        if wi[lead] < 0.0 {
            wi = -wi;
        }
        w.set_column(col, &wi);
    }
    Ok(w)
}

/// Fits the binary Gaussian naive Bayes head. `labels[i]` is true for
/// unknown. Variances get smoothed by 1e-9 times the largest per-dimension
/// variance of the pooled data.
pub fn fit_gnb(xs: &[Vec<f64>], labels: &[bool]) -> Result<GnbModel> {
    if xs.is_empty() || xs.len() != labels.len() {
        return Err(Error::EmptyInput("naive-Bayes training data"));
    }
    let dim = xs[0].len();
    let n = xs.len() as f64;

    let mut pooled_mean = vec![0.0; dim];
    for x in xs {
        for (m, &xd) in pooled_mean.iter_mut().zip(x) {
            *m += xd;
        }
    }
    pooled_mean.iter_mut().for_each(|m| *m /= n);
    let mut pooled_var = vec![0.0; dim];
    for x in xs {
        for ((v, &xd), &md) in pooled_var.iter_mut().zip(x).zip(&pooled_mean) {
            let diff = xd - md;
            *v += diff * diff;
        }
    }
    pooled_var.iter_mut().for_each(|v| *v /= n);
    let smoothing = 1e-9 * pooled_var.iter().cloned().fold(0.0f64, f64::max);

    let mut priors = [0.0; 2];
    let mut means = [vec![0.0; dim], vec![0.0; dim]];
    let mut variances = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0usize; 2];

    for (x, &lab) in xs.iter().zip(labels) {
        let c = lab as usize;
        counts[c] += 1;
        for (m, &xd) in means[c].iter_mut().zip(x) {
            *m += xd;
        }
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::InvalidConfig(
            "naive Bayes needs both binary labels present".into(),
        ));
    }
    for c in 0..2 {
        priors[c] = counts[c] as f64 / n;
        means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
    }
    for (x, &lab) in xs.iter().zip(labels) {
        let c = lab as usize;
        for ((v, &xd), &md) in variances[c].iter_mut().zip(x).zip(&means[c]) {
            let diff = xd - md;
            *v += diff * diff;
        }
    }
    for c in 0..2 {
        variances[c]
            .iter_mut()
            .for_each(|v| *v = (*v / counts[c] as f64 + smoothing).max(1e-30));
    }

    Ok(GnbModel {
        priors,
        means,
        variances,
    })
}

/// Posterior over (known, unknown) for a projected feature vector.
pub fn gnb_posterior(gnb: &GnbModel, z: &[f64]) -> [f64; 2] {
    const LN_2PI: f64 = 1.837877066409345;
    let mut log_joint = [0.0f64; 2];
    for (c, slot) in log_joint.iter_mut().enumerate() {
        let mut acc = gnb.priors[c].max(f64::MIN_POSITIVE).ln();
        for ((&zd, &md), &vd) in z.iter().zip(&gnb.means[c]).zip(&gnb.variances[c]) {
            let diff = zd - md;
            acc += -0.5 * (LN_2PI + vd.ln()) - diff * diff / (2.0 * vd);
        }
        *slot = acc;
    }
    // Two-class softmax in a stable form.
    let max = log_joint[0].max(log_joint[1]);
    let e0 = (log_joint[0] - max).exp();
    let e1 = (log_joint[1] - max).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}

/// Fits the full stage-1 detector on the merged pool.
///
/// Component counts shrink to the available sample count per group when a
/// group is smaller than its configured count (with a warning). `gamma` is a
/// relative ridge: the projection uses `gamma * trace(S_w) / feature_dim`.
pub fn fit_isda(
    merged: &[DetectorSample],
    h1: usize,
    h2: usize,
    gamma: f64,
    seed: u64,
    feature_source: FeatureSource,
) -> Result<IsdaModel> {
    if h1 == 0 || h2 == 0 {
        return Err(Error::InvalidConfig("h1 and h2 must be >= 1".into()));
    }
    let unknown_pool: Vec<Vec<f64>> = merged
        .iter()
        .filter(|s| s.unknown)
        .map(|s| s.features.clone())
        .collect();
    let mut known_by_class: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for s in merged.iter().filter(|s| !s.unknown) {
        let class = s.known_class.ok_or_else(|| {
            Error::InvalidConfig("known detector sample without a class id".into())
        })?;
        known_by_class
            .entry(class)
            .or_default()
            .push(s.features.clone());
    }
    if unknown_pool.is_empty() {
        return Err(Error::EmptyInput("unknown-labeled pool"));
    }
    if known_by_class.is_empty() {
        return Err(Error::EmptyInput("known-labeled pool"));
    }
    let dim = merged[0].features.len();

    // Per-group mixtures; order is fixed: known classes ascending, unknown last.
    let mut group_models: Vec<GmmModel> = Vec::new();
    let mut group_of_sample: Vec<usize> = Vec::new(); // parallel to `merged`
    let mut offsets: Vec<usize> = Vec::new();
    let mut total_subclasses = 0usize;

    let mut group_index: BTreeMap<Option<usize>, usize> = BTreeMap::new();
    for (class, xs) in &known_by_class {
        let h = h2.min(xs.len());
        if h < h2 {
            log::warn!(
                "class {class}: only {} samples, reducing subclasses {h2} -> {h}",
                xs.len()
            );
        }
        let gmm = fit_gmm(xs, h, derive_seed(seed, 1, *class as u64))?;
        group_index.insert(Some(*class), group_models.len());
        offsets.push(total_subclasses);
        total_subclasses += gmm.num_components();
        group_models.push(gmm);
    }
    {
        let h = h1.min(unknown_pool.len());
        if h < h1 {
            log::warn!(
                "unknown pool: only {} samples, reducing subclasses {h1} -> {h}",
                unknown_pool.len()
            );
        }
        let gmm = fit_gmm(&unknown_pool, h, derive_seed(seed, 0, 0))?;
        group_index.insert(None, group_models.len());
        offsets.push(total_subclasses);
        total_subclasses += gmm.num_components();
        group_models.push(gmm);
    }

    for s in merged {
        let key = if s.unknown { None } else { s.known_class };
        group_of_sample.push(group_index[&key]);
    }

    // Responsibilities over all subclasses: zero outside the sample's own group.
    let features: Vec<Vec<f64>> = merged.iter().map(|s| s.features.clone()).collect();
    let resp: Vec<Vec<f64>> = merged
        .iter()
        .zip(&group_of_sample)
        .map(|(s, &g)| {
            let mut row = vec![0.0; total_subclasses];
            let local = responsibilities(&group_models[g], &s.features);
            row[offsets[g]..offsets[g] + local.len()].copy_from_slice(&local);
            row
        })
        .collect();

    let (s_w, s_b) = scatter_matrices(&features, &resp)?;
    let d = dim.min(total_subclasses.saturating_sub(1));
    if d == 0 {
        return Err(Error::DegenerateProjection);
    }
    let mut ridge = gamma * s_w.trace() / dim as f64;
    if !ridge.is_finite() || ridge <= 0.0 {
        ridge = gamma.max(1e-12);
    }
    let projection = fit_projection(&s_w, &s_b, ridge, d)?;

    let projected: Vec<Vec<f64>> = features.iter().map(|x| project(&projection, x)).collect();
    let labels: Vec<bool> = merged.iter().map(|s| s.unknown).collect();
    let gnb = fit_gnb(&projected, &labels)?;

    Ok(IsdaModel {
        h1,
        h2,
        projection,
        gnb,
        feature_source,
    })
}

fn project(w: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let xv = DVector::from_column_slice(x);
    (w.transpose() * xv).as_slice().to_vec()
}

/// Binary prediction plus the unknown posterior. Posterior ties go to known.
pub fn predict_isda(model: &IsdaModel, x: &[f64]) -> Result<(u8, f64)> {
    if x.len() != model.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim(),
            got: x.len(),
            context: "detector input",
        });
    }
    let z = project(&model.projection, x);
    let posterior = gnb_posterior(&model.gnb, &z);
    let label = u8::from(posterior[1] > posterior[0]);
    Ok((label, posterior[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn cloud(center: &[f64], std: f64, n: usize, rng: &mut impl rand::Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|&c| {
                        let z: f64 = StandardNormal.sample(rng);
                        c + std * z
                    })
                    .collect()
            })
            .collect()
    }

    /// Classical hard-assignment LDA scatter, written as plain loops.
    fn classical_scatter(
        features: &[Vec<f64>],
        classes: &[usize],
        num_classes: usize,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let dim = features[0].len();
        let n = features.len();
        let mut global = vec![0.0; dim];
        for x in features {
            for d in 0..dim {
                global[d] += x[d] / n as f64;
            }
        }
        let mut s_w = vec![vec![0.0; dim]; dim];
        let mut s_b = vec![vec![0.0; dim]; dim];
        for c in 0..num_classes {
            let members: Vec<&Vec<f64>> = features
                .iter()
                .zip(classes)
                .filter(|(_, &cls)| cls == c)
                .map(|(x, _)| x)
                .collect();
            if members.is_empty() {
                continue;
            }
            let nc = members.len() as f64;
            let mut mean = vec![0.0; dim];
            for x in &members {
                for d in 0..dim {
                    mean[d] += x[d] / nc;
                }
            }
            for x in &members {
                for p in 0..dim {
                    for q in 0..dim {
                        s_w[p][q] += (x[p] - mean[p]) * (x[q] - mean[q]);
                    }
                }
            }
            for p in 0..dim {
                for q in 0..dim {
                    s_b[p][q] += nc * (mean[p] - global[p]) * (mean[q] - global[q]);
                }
            }
        }
        (s_w, s_b)
    }

    #[test]
    fn single_subclass_has_zero_between_scatter() {
        let features = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.0, 0.5]];
        let resp = vec![vec![1.0]; 3];
        let (_, s_b) = scatter_matrices(&features, &resp).unwrap();
        assert!(s_b.amax() <= 1e-12);
    }

    #[test]
    fn hard_assignment_matches_classical_lda() {
        // 6-point 2-D instance with two classes of three points each.
        let features = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.5],
            vec![0.5, -0.5],
            vec![4.0, 3.0],
            vec![5.0, 2.5],
            vec![4.5, 3.5],
        ];
        let classes = vec![0, 0, 0, 1, 1, 1];
        let resp: Vec<Vec<f64>> = classes
            .iter()
            .map(|&c| {
                let mut r = vec![0.0, 0.0];
                r[c] = 1.0;
                r
            })
            .collect();
        let (s_w, s_b) = scatter_matrices(&features, &resp).unwrap();
        let (cw, cb) = classical_scatter(&features, &classes, 2);
        for p in 0..2 {
            for q in 0..2 {
                assert!((s_w[(p, q)] - cw[p][q]).abs() <= 1e-9);
                assert!((s_b[(p, q)] - cb[p][q]).abs() <= 1e-9);
            }
        }
        // Hard assignments: S_w + S_b equals the total scatter.
        let n = features.len() as f64;
        let gm: Vec<f64> = (0..2)
            .map(|d| features.iter().map(|x| x[d]).sum::<f64>() / n)
            .collect();
        for p in 0..2 {
            for q in 0..2 {
                let total: f64 = features
                    .iter()
                    .map(|x| (x[p] - gm[p]) * (x[q] - gm[q]))
                    .sum();
                assert!((s_w[(p, q)] + s_b[(p, q)] - total).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn scatter_is_symmetric() {
        let mut rng = crate::seed::rng_from_seed(2);
        use rand::Rng;
        let features: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let resp: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let a: f64 = rng.random_range(0.0..1.0);
                vec![a, 1.0 - a]
            })
            .collect();
        let (s_w, s_b) = scatter_matrices(&features, &resp).unwrap();
        for m in [&s_w, &s_b] {
            for p in 0..4 {
                for q in 0..4 {
                    assert!((m[(p, q)] - m[(q, p)]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn projection_finds_the_separating_axis() {
        // Two subclasses separated along the first axis. With two subclasses
        // the between-scatter is rank one, so the analytic discriminant
        // direction is (S_w + gamma I)^-1 (m1 - m0), solvable by hand in 2-D.
        let mut rng = crate::seed::rng_from_seed(6);
        let mut features = cloud(&[-5.0, 0.0], 0.5, 100, &mut rng);
        features.extend(cloud(&[5.0, 0.0], 0.5, 100, &mut rng));
        let resp: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                if i < 100 {
                    vec![1.0, 0.0]
                } else {
                    vec![0.0, 1.0]
                }
            })
            .collect();
        let (s_w, s_b) = scatter_matrices(&features, &resp).unwrap();
        let gamma = 1e-6 * s_w.trace();
        let w = fit_projection(&s_w, &s_b, gamma, 1).unwrap();

        let mean = |half: &[Vec<f64>]| {
            let n = half.len() as f64;
            [
                half.iter().map(|x| x[0]).sum::<f64>() / n,
                half.iter().map(|x| x[1]).sum::<f64>() / n,
            ]
        };
        let (m0, m1) = (mean(&features[..100]), mean(&features[100..]));
        let dm = [m1[0] - m0[0], m1[1] - m0[1]];
        // 2x2 solve of (S_w + gamma I) v = dm by Cramer's rule.
        let (a, b, c, d) = (
            s_w[(0, 0)] + gamma,
            s_w[(0, 1)],
            s_w[(1, 0)],
            s_w[(1, 1)] + gamma,
        );
        let det = a * d - b * c;
        let v = [(d * dm[0] - b * dm[1]) / det, (a * dm[1] - c * dm[0]) / det];
        let v_norm = (v[0] * v[0] + v[1] * v[1]).sqrt();

        let cos = (w.column(0)[0] * v[0] + w.column(0)[1] * v[1]).abs() / v_norm;
        let angle = cos.min(1.0).acos();
        assert!(angle <= 1e-3, "angle = {angle}");
        // And it is indeed roughly the first axis.
        assert!(w.column(0)[0].abs() > 0.99, "direction = {:?}", w.column(0));
    }

    #[test]
    fn zero_between_scatter_falls_back_to_basis() {
        let s_w = DMatrix::identity(3, 3);
        let s_b = DMatrix::zeros(3, 3);
        let w = fit_projection(&s_w, &s_b, 1e-4, 2).unwrap();
        assert_eq!(w.ncols(), 2);
        // Orthonormal columns.
        let gram = w.transpose() * &w;
        assert!((gram - DMatrix::identity(2, 2)).amax() <= 1e-12);
    }

    #[test]
    fn zero_projection_dim_is_an_error() {
        let s = DMatrix::identity(2, 2);
        assert!(matches!(
            fit_projection(&s, &s, 1e-4, 0),
            Err(Error::DegenerateProjection)
        ));
    }

    #[test]
    fn projection_beats_random_directions() {
        let mut rng = crate::seed::rng_from_seed(14);
        let mut features = cloud(&[-2.0, 1.0, 0.0], 1.0, 80, &mut rng);
        features.extend(cloud(&[2.0, -1.0, 0.5], 1.0, 80, &mut rng));
        let resp: Vec<Vec<f64>> = (0..160)
            .map(|i| {
                if i < 80 {
                    vec![1.0, 0.0]
                } else {
                    vec![0.0, 1.0]
                }
            })
            .collect();
        let (s_w, s_b) = scatter_matrices(&features, &resp).unwrap();
        let ridge = 1e-4 * s_w.trace() / 3.0;
        let w = fit_projection(&s_w, &s_b, ridge, 1).unwrap();
        let ratio = |w: &DMatrix<f64>| {
            let num = (w.transpose() * &s_b * w).trace();
            let den = (w.transpose() * &s_w * w).trace();
            num / den
        };
        let fitted = ratio(&w);
        for _ in 0..20 {
            let mut r = DMatrix::from_fn(3, 1, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            });
            let norm = r.column(0).norm();
            r /= norm;
            assert!(
                fitted >= ratio(&r),
                "fitted {fitted} < random {}",
                ratio(&r)
            );
        }
    }

    fn merged_blobs(rng: &mut impl rand::Rng) -> Vec<DetectorSample> {
        let mut merged = Vec::new();
        for (class, center) in [(1usize, [-4.0, 0.0]), (2, [0.0, 4.0]), (3, [4.0, 0.0])] {
            for x in cloud(&center, 0.5, 40, rng) {
                merged.push(DetectorSample {
                    features: x,
                    unknown: false,
                    known_class: Some(class),
                });
            }
        }
        for x in cloud(&[0.0, -6.0], 0.5, 60, rng) {
            merged.push(DetectorSample {
                features: x,
                unknown: true,
                known_class: None,
            });
        }
        merged
    }

    #[test]
    fn subclass_count_arithmetic() {
        let mut rng = crate::seed::rng_from_seed(31);
        let merged = merged_blobs(&mut rng);
        // h1 = 2, h2 = 1, 3 known classes: 5 subclasses, d = min(2, 4) = 2.
        let model = fit_isda(&merged, 2, 1, 1e-4, 0, FeatureSource::Raw).unwrap();
        assert_eq!(model.projected_dim(), 2);
        assert_eq!(model.feature_dim(), 2);
    }

    #[test]
    fn subclass_count_options_accepted() {
        let mut rng = crate::seed::rng_from_seed(32);
        let merged = merged_blobs(&mut rng);
        for h2 in [2usize, 1, 5] {
            let model = fit_isda(&merged, 2, h2, 1e-4, 0, FeatureSource::Raw).unwrap();
            assert_eq!(model.h2, h2);
        }
    }

    #[test]
    fn separable_pool_is_learned() {
        let mut rng = crate::seed::rng_from_seed(33);
        let merged = merged_blobs(&mut rng);
        let model = fit_isda(&merged, 2, 1, 1e-4, 7, FeatureSource::Raw).unwrap();
        let hits = merged
            .iter()
            .filter(|s| {
                let (label, _) = predict_isda(&model, &s.features).unwrap();
                (label == 1) == s.unknown
            })
            .count();
        let acc = hits as f64 / merged.len() as f64;
        assert!(acc >= 0.99, "training accuracy = {acc}");
    }

    #[test]
    fn small_groups_shrink_component_counts() {
        let merged = vec![
            DetectorSample {
                features: vec![0.0, 0.0],
                unknown: false,
                known_class: Some(1),
            },
            DetectorSample {
                features: vec![0.2, 0.1],
                unknown: false,
                known_class: Some(1),
            },
            DetectorSample {
                features: vec![5.0, 5.0],
                unknown: true,
                known_class: None,
            },
            DetectorSample {
                features: vec![5.2, 4.9],
                unknown: true,
                known_class: None,
            },
        ];
        // h1 = 4 and h2 = 3 exceed the group sizes; the fit must still succeed.
        let model = fit_isda(&merged, 4, 3, 1e-4, 0, FeatureSource::Raw).unwrap();
        assert!(model.projected_dim() >= 1);
    }

    #[test]
    fn far_unknown_is_flagged() {
        let mut rng = crate::seed::rng_from_seed(34);
        let merged = merged_blobs(&mut rng);
        let model = fit_isda(&merged, 2, 1, 1e-4, 0, FeatureSource::Raw).unwrap();
        let (label, posterior) = predict_isda(&model, &[0.0, -6.0]).unwrap();
        assert_eq!(label, 1);
        assert!(posterior > 0.5);
    }

    #[test]
    fn gnb_matches_brute_force_bayes() {
        // 8 points, 3-D, 2 classes; oracle computes densities directly.
        let mut rng = crate::seed::rng_from_seed(35);
        use rand::Rng;
        for _trial in 0..20 {
            let xs: Vec<Vec<f64>> = (0..8)
                .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let labels = [false, false, false, true, true, true, false, true];
            let gnb = fit_gnb(&xs, &labels).unwrap();
            let probe: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let posterior = gnb_posterior(&gnb, &probe);

            let density = |c: usize| {
                let mut p = gnb.priors[c];
                for (d, &x) in probe.iter().enumerate() {
                    let var = gnb.variances[c][d];
                    let diff = x - gnb.means[c][d];
                    p *= (-diff * diff / (2.0 * var)).exp()
                        / (2.0 * std::f64::consts::PI * var).sqrt();
                }
                p
            };
            let (d0, d1) = (density(0), density(1));
            let expected = d1 / (d0 + d1);
            assert!(
                (posterior[1] - expected).abs() <= 1e-9,
                "{} vs {}",
                posterior[1],
                expected
            );
        }
    }

    #[test]
    fn symmetric_tie_prefers_known() {
        let gnb = GnbModel {
            priors: [0.5, 0.5],
            means: [vec![-1.0], vec![1.0]],
            variances: [vec![1.0], vec![1.0]],
        };
        let model = IsdaModel {
            h1: 1,
            h2: 1,
            projection: DMatrix::identity(1, 1),
            gnb,
            feature_source: FeatureSource::Raw,
        };
        let (label, posterior) = predict_isda(&model, &[0.0]).unwrap();
        assert!((posterior - 0.5).abs() <= 1e-9);
        assert_eq!(label, 0);
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = crate::seed::rng_from_seed(36);
        let merged = merged_blobs(&mut rng);
        let a = fit_isda(&merged, 2, 2, 1e-4, 5, FeatureSource::Raw).unwrap();
        let b = fit_isda(&merged, 2, 2, 1e-4, 5, FeatureSource::Raw).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_serialization_round_trips_bit_exactly() {
        let mut rng = crate::seed::rng_from_seed(37);
        let merged = merged_blobs(&mut rng);
        let model = fit_isda(&merged, 2, 1, 1e-4, 3, FeatureSource::Embedding).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let loaded: IsdaModel = serde_json::from_str(&json).unwrap();
        assert_eq!(loaded, model);
        // Bit-exact on the projection entries, not just PartialEq.
        for (a, b) in model.projection.iter().zip(loaded.projection.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
