//! Command implementations. Each command reads its inputs from the output
//! directory (or the config's data source), writes its artifacts plus a
//! run-metadata file, and returns; commands compose through files only.

pub mod detect;
pub mod eval;
pub mod gridsearch;
pub mod plot;
pub mod synth;
pub mod train;
pub mod uncertainty;

use anyhow::{Context, Result};

use osr_core::data::{load_csv, LabeledDataset};
use osr_core::nn::ClassifierModel;

use crate::artifacts::{read_features_csv, SplitKind, Workspace};

/// Loads the standardized training split.
pub(crate) fn load_train(ws: &Workspace) -> Result<LabeledDataset> {
    load_csv(&ws.train_csv(), "label").context("missing training split (run `osr synth` first)")
}

/// Open-set material for one split: features, ground-truth labels (K+1 for
/// unknown-class samples), and the known-class count.
pub(crate) struct OpenSet {
    pub features: Vec<Vec<f64>>,
    pub truth: Vec<usize>,
    pub num_known: usize,
}

pub(crate) fn load_open_set(ws: &Workspace, split: SplitKind) -> Result<OpenSet> {
    let known = load_csv(&ws.known_csv(split), "label").with_context(|| {
        format!(
            "missing {}_known.csv (run `osr synth` first)",
            split.as_str()
        )
    })?;
    let unknown = read_features_csv(&ws.unknown_csv(split))?;
    let num_known = known.num_classes();
    let mut features = known.features.clone();
    let mut truth = known.labels.clone();
    features.extend(unknown.iter().cloned());
    truth.extend(std::iter::repeat_n(num_known + 1, unknown.len()));
    Ok(OpenSet {
        features,
        truth,
        num_known,
    })
}

pub(crate) fn load_model(ws: &Workspace) -> Result<(ClassifierModel, u64)> {
    let path = ws.model_json();
    ClassifierModel::load_checkpoint(&path).with_context(|| {
        format!(
            "missing checkpoint {} (run `osr train` first)",
            path.display()
        )
    })
}
