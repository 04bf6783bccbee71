//! Dataset ingestion, the open-set partition protocol, and synthetic blob
//! generation with a controllable inter-class overlap knob.
//!
//! Splits are pure functions of (dataset, fraction, seed) and every split
//! writes enough provenance (a manifest of row indices) to be reconstructed
//! exactly. Feature standardization is deferred until the split so the
//! statistics come from the training portion only.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

const MANIFEST_VERSION: u32 = 1;

/// A labeled tabular dataset with dense 1-based class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: BTreeMap<usize, String>,
    pub feature_dim: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: BTreeMap<usize, String>,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        let feature_dim = features[0].len();
        Self::from_parts(features, labels, class_names, feature_dim)
    }

    /// Like [`LabeledDataset::new`] but permits empty datasets, which arise
    /// as degenerate validation/test portions of very small classes.
    pub fn from_parts(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: BTreeMap<usize, String>,
        feature_dim: usize,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                got: labels.len(),
                context: "labels",
            });
        }
        if feature_dim == 0 || features.iter().any(|f| f.len() != feature_dim) {
            return Err(Error::InvalidConfig(
                "all feature vectors must share one positive length".into(),
            ));
        }
        let num_classes = class_names.len();
        for &l in &labels {
            if l == 0 || l > num_classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    num_classes,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            class_names,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// (features, label) pairs, cloned, for the training APIs.
    pub fn rows(&self) -> Vec<(Vec<f64>, usize)> {
        self.features
            .iter()
            .cloned()
            .zip(self.labels.iter().cloned())
            .collect()
    }
}

/// Reads a CSV with numeric feature columns and one label column.
/// Features stay raw here; standardization happens at split time.
/// Lines starting with '#' are ignored.
pub fn load_csv(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::InvalidConfig(format!("label column '{label_column}' not found")))?;

    let mut features = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (col_idx, cell) in record.iter().enumerate() {
            if col_idx == label_idx {
                if cell.trim().is_empty() {
                    return Err(Error::Parse {
                        row: row_idx + 1,
                        column: label_column.to_string(),
                        message: "missing label".into(),
                    });
                }
                raw_labels.push(cell.trim().to_string());
            } else {
                let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    row: row_idx + 1,
                    column: headers.get(col_idx).unwrap_or("?").to_string(),
                    message: format!("'{cell}' is not numeric"),
                })?;
                row.push(value);
            }
        }
        if raw_labels.len() != features.len() + 1 {
            return Err(Error::Parse {
                row: row_idx + 1,
                column: label_column.to_string(),
                message: "missing label".into(),
            });
        }
        features.push(row);
    }
    if features.is_empty() {
        return Err(Error::EmptyInput("csv dataset"));
    }

    // Dense ids from sorted distinct labels; numeric sort when every label
    // parses as a number, lexicographic otherwise.
    let mut distinct: Vec<String> = raw_labels.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.iter().all(|l| l.parse::<f64>().is_ok()) {
        distinct.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .partial_cmp(&b.parse::<f64>().unwrap())
                .unwrap()
        });
    }
    let id_of: BTreeMap<&str, usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, name)| (name.as_str(), i + 1))
        .collect();
    let labels: Vec<usize> = raw_labels.iter().map(|l| id_of[l.as_str()]).collect();
    let class_names: BTreeMap<usize, String> = distinct
        .into_iter()
        .enumerate()
        .map(|(i, name)| (i + 1, name))
        .collect();

    LabeledDataset::new(features, labels, class_names)
}

/// Writes a dataset as `f0,...,f{d-1},label` with a version comment line.
/// Labels are written as their original class names so a reload reproduces
/// the same dataset.
pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# osr dataset v1")?;
    let mut writer = csv::Writer::from_writer(file);
    let mut header: Vec<String> = (0..ds.feature_dim).map(|d| format!("f{d}")).collect();
    header.push("label".to_string());
    writer.write_record(&header)?;
    for (x, &label) in ds.features.iter().zip(&ds.labels) {
        let mut record: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        record.push(ds.class_names[&label].clone());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Per-dimension z-score statistics fitted on the training split.
/// Zero-variance dimensions keep scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyInput("standardizer fit"));
        }
        let dim = features[0].len();
        let n = features.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in features {
            for (m, &v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; dim];
        for x in features {
            for ((s, &v), &m) in std.iter_mut().zip(x).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }

    pub fn apply_all(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| self.apply(x)).collect()
    }
}

/// Records exactly how a split was drawn, so it can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub version: u32,
    pub seed: u64,
    pub unknown_fraction: f64,
    /// Original (pre-remap) class ids.
    pub known_class_ids: Vec<usize>,
    pub unknown_class_ids: Vec<usize>,
    /// Row indices into the source dataset.
    pub train_rows: Vec<usize>,
    pub val_known_rows: Vec<usize>,
    pub test_known_rows: Vec<usize>,
    pub val_unknown_rows: Vec<usize>,
    pub test_unknown_rows: Vec<usize>,
}

/// The open-set experiment material: known classes relabeled densely to
/// 1..K, unknown-class samples kept as unlabeled feature pools, everything
/// standardized with training statistics.
#[derive(Debug, Clone)]
pub struct OpenSplit {
    pub train: LabeledDataset,
    pub val_known: LabeledDataset,
    pub test_known: LabeledDataset,
    pub val_unknown: Vec<Vec<f64>>,
    pub test_unknown: Vec<Vec<f64>>,
    pub known_class_ids: Vec<usize>,
    pub unknown_class_ids: Vec<usize>,
    pub standardizer: Standardizer,
    pub manifest: SplitManifest,
}

impl OpenSplit {
    pub fn num_known_classes(&self) -> usize {
        self.known_class_ids.len()
    }
}

/// Draws `round(unknown_fraction * C)` classes as unknown, splits known
/// samples 3:1:1 into train/val/test and unknown samples 1:4 into val/test,
/// all per-class stratified with remainders going to train.
pub fn make_open_split(ds: &LabeledDataset, unknown_fraction: f64, seed: u64) -> Result<OpenSplit> {
    if ds.num_classes() < 2 {
        return Err(Error::InvalidConfig(
            "need at least 2 classes to split".into(),
        ));
    }
    if !(0.0..=1.0).contains(&unknown_fraction) {
        return Err(Error::InvalidConfig(
            "unknown_fraction must lie in [0, 1]".into(),
        ));
    }
    let c = ds.num_classes();
    let num_unknown = (unknown_fraction * c as f64).round() as usize;
    if num_unknown >= c {
        return Err(Error::InvalidConfig(
            "unknown_fraction leaves no known classes".into(),
        ));
    }
    let mut ids: Vec<usize> = (1..=c).collect();
    let mut rng = rng_from_seed(derive_seed(seed, 0, 0));
    ids.shuffle(&mut rng);
    let mut unknown_ids: Vec<usize> = ids[..num_unknown].to_vec();
    unknown_ids.sort_unstable();
    split_with_designation(ds, &unknown_ids, unknown_fraction, seed)
}

/// Split with an explicit unknown-class designation (synthetic datasets
/// carry their own).
pub fn make_open_split_with(
    ds: &LabeledDataset,
    unknown_class_ids: &[usize],
    seed: u64,
) -> Result<OpenSplit> {
    let fraction = unknown_class_ids.len() as f64 / ds.num_classes() as f64;
    split_with_designation(ds, unknown_class_ids, fraction, seed)
}

fn split_with_designation(
    ds: &LabeledDataset,
    unknown_class_ids: &[usize],
    unknown_fraction: f64,
    seed: u64,
) -> Result<OpenSplit> {
    let c = ds.num_classes();
    let mut unknown_ids = unknown_class_ids.to_vec();
    unknown_ids.sort_unstable();
    unknown_ids.dedup();
    for &id in &unknown_ids {
        if id == 0 || id > c {
            return Err(Error::LabelOutOfRange {
                label: id,
                num_classes: c,
            });
        }
    }
    let known_ids: Vec<usize> = (1..=c).filter(|id| !unknown_ids.contains(id)).collect();
    if known_ids.is_empty() {
        return Err(Error::InvalidConfig("no known classes designated".into()));
    }

    let mut rows_by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &label) in ds.labels.iter().enumerate() {
        rows_by_class.entry(label).or_default().push(row);
    }

    let mut manifest = SplitManifest {
        version: MANIFEST_VERSION,
        seed,
        unknown_fraction,
        known_class_ids: known_ids.clone(),
        unknown_class_ids: unknown_ids.clone(),
        train_rows: Vec::new(),
        val_known_rows: Vec::new(),
        test_known_rows: Vec::new(),
        val_unknown_rows: Vec::new(),
        test_unknown_rows: Vec::new(),
    };

    for &class in &known_ids {
        let mut rows = rows_by_class.get(&class).cloned().unwrap_or_default();
        let n = rows.len();
        if n == 0 {
            continue;
        }
        if n < 5 {
            log::warn!("known class {class} has only {n} samples; split degenerates");
        }
        let mut rng = rng_from_seed(derive_seed(seed, 1, class as u64));
        rows.shuffle(&mut rng);
        let n_val = n / 5;
        let n_test = n / 5;
        let n_train = n - n_val - n_test;
        manifest.train_rows.extend(&rows[..n_train]);
        manifest
            .val_known_rows
            .extend(&rows[n_train..n_train + n_val]);
        manifest.test_known_rows.extend(&rows[n_train + n_val..]);
    }
    for &class in &unknown_ids {
        let mut rows = rows_by_class.get(&class).cloned().unwrap_or_default();
        let n = rows.len();
        if n == 0 {
            continue;
        }
        let mut rng = rng_from_seed(derive_seed(seed, 2, class as u64));
        rows.shuffle(&mut rng);
        let n_val = n / 5;
        manifest.val_unknown_rows.extend(&rows[..n_val]);
        manifest.test_unknown_rows.extend(&rows[n_val..]);
    }

    split_from_manifest(ds, &manifest)
}

/// Replays a manifest against the source dataset. The result is bit-equal to
/// the split that produced the manifest.
pub fn split_from_manifest(ds: &LabeledDataset, manifest: &SplitManifest) -> Result<OpenSplit> {
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.version,
            expected: MANIFEST_VERSION,
        });
    }
    if manifest.train_rows.is_empty() {
        return Err(Error::EmptyInput("training rows"));
    }
    // Dense relabeling of the known classes, in sorted original-id order.
    let new_id: BTreeMap<usize, usize> = manifest
        .known_class_ids
        .iter()
        .enumerate()
        .map(|(i, &orig)| (orig, i + 1))
        .collect();
    let class_names: BTreeMap<usize, String> = manifest
        .known_class_ids
        .iter()
        .enumerate()
        .map(|(i, &orig)| (i + 1, ds.class_names[&orig].clone()))
        .collect();

    let raw_train: Vec<Vec<f64>> = manifest
        .train_rows
        .iter()
        .map(|&r| ds.features[r].clone())
        .collect();
    let standardizer = Standardizer::fit(&raw_train)?;

    let labeled = |rows: &[usize]| -> Result<LabeledDataset> {
        let features: Vec<Vec<f64>> = rows
            .iter()
            .map(|&r| standardizer.apply(&ds.features[r]))
            .collect();
        let labels: Vec<usize> = rows.iter().map(|&r| new_id[&ds.labels[r]]).collect();
        LabeledDataset::from_parts(features, labels, class_names.clone(), ds.feature_dim)
    };
    let unlabeled = |rows: &[usize]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|&r| standardizer.apply(&ds.features[r]))
            .collect()
    };

    Ok(OpenSplit {
        train: labeled(&manifest.train_rows)?,
        val_known: labeled(&manifest.val_known_rows)?,
        test_known: labeled(&manifest.test_known_rows)?,
        val_unknown: unlabeled(&manifest.val_unknown_rows),
        test_unknown: unlabeled(&manifest.test_unknown_rows),
        known_class_ids: manifest.known_class_ids.clone(),
        unknown_class_ids: manifest.unknown_class_ids.clone(),
        standardizer,
        manifest: manifest.clone(),
    })
}

/// Synthetic Gaussian blobs with an overlap knob.
///
/// All class centers start pairwise at least `6 * sigma_blob` apart (random
/// directions, globally scaled); unknown-class centers are then pulled toward
/// their nearest known center by `overlap`, so 0 keeps them far and 1 makes
/// them coincide. Returns the dataset plus the unknown class ids.
pub fn synth_blobs(
    num_known: usize,
    num_unknown: usize,
    per_class: usize,
    dim: usize,
    overlap: f64,
    seed: u64,
) -> Result<(LabeledDataset, Vec<usize>)> {
    if num_known == 0 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidConfig(
            "num_known, per_class and dim must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::InvalidConfig("overlap must lie in [0, 1]".into()));
    }
    const SIGMA_BLOB: f64 = 1.0;
    let total = num_known + num_unknown;
    let centers = place_blob_centers(num_known, num_unknown, dim, overlap, seed);

    let mut features = Vec::with_capacity(total * per_class);
    let mut labels = Vec::with_capacity(total * per_class);
    for (idx, center) in centers.iter().enumerate() {
        let mut class_rng = rng_from_seed(derive_seed(seed, 1, idx as u64));
        for _ in 0..per_class {
            let x: Vec<f64> = center
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut class_rng);
                    c + SIGMA_BLOB * z
                })
                .collect();
            features.push(x);
            labels.push(idx + 1);
        }
    }
    // Zero-padded ids keep the lexicographic name order aligned with the id
    // order, so a saved dataset reloads with identical dense ids.
    let class_names: BTreeMap<usize, String> = (1..=total)
        .map(|id| {
            let kind = if id <= num_known { "known" } else { "unknown" };
            (id, format!("{kind}_{id:03}"))
        })
        .collect();
    let unknown_ids: Vec<usize> = (num_known + 1..=total).collect();
    Ok((
        LabeledDataset::new(features, labels, class_names)?,
        unknown_ids,
    ))
}

/// Blob center construction behind `synth_blobs`: random directions scaled
/// so every pairwise distance is at least 6, then each unknown center pulled
/// toward its nearest known center by `overlap`. Known centers come first.
fn place_blob_centers(
    num_known: usize,
    num_unknown: usize,
    dim: usize,
    overlap: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let total = num_known + num_unknown;
    let mut rng = rng_from_seed(derive_seed(seed, 0, 0));
    let mut centers: Vec<Vec<f64>> = (0..total)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                })
                .collect()
        })
        .collect();
    if total > 1 {
        let mut min_dist = f64::INFINITY;
        for i in 0..total {
            for j in i + 1..total {
                min_dist = min_dist.min(dist(&centers[i], &centers[j]));
            }
        }
        let scale = 6.0 / min_dist;
        for c in centers.iter_mut() {
            c.iter_mut().for_each(|v| *v *= scale);
        }
    }
    for u in num_known..total {
        let nearest = (0..num_known)
            .min_by(|&a, &b| {
                dist(&centers[u], &centers[a])
                    .partial_cmp(&dist(&centers[u], &centers[b]))
                    .unwrap()
            })
            .expect("at least one known class");
        let target = centers[nearest].clone();
        for (cu, &ct) in centers[u].iter_mut().zip(&target) {
            *cu += overlap * (ct - *cu);
        }
    }
    centers
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
