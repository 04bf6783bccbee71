//! Dataset preparation: synthesize blobs (or ingest a CSV), designate the
//! unknown classes, draw the open-set splits, and persist everything.

use anyhow::{bail, Result};

use osr_core::data::{
    load_csv, make_open_split, make_open_split_with, save_csv, synth_blobs, LabeledDataset,
};

use crate::artifacts::{
    write_features_csv, write_manifest, write_metadata, DatasetManifest, SplitKind, Workspace,
};
use crate::config::ExperimentConfig;

pub fn run(config: &ExperimentConfig, config_sha: &str) -> Result<()> {
    let ws = Workspace::new(&config.outdir);
    ws.create()?;

    let (dataset, designated_unknown): (LabeledDataset, Option<Vec<usize>>) =
        match config.data.source.as_str() {
            "synth" => {
                let (ds, unknown_ids) = synth_blobs(
                    config.data.num_known.unwrap(),
                    config.data.num_unknown.unwrap(),
                    config.data.per_class.unwrap(),
                    config.data.dim.unwrap(),
                    config.data.overlap.unwrap(),
                    config.data_seed(),
                )?;
                save_csv(&ds, &ws.dataset_csv())?;
                (ds, Some(unknown_ids))
            }
            "csv" => {
                let path = config.data.path.as_ref().unwrap();
                let label_column = config.data.label_column.as_ref().unwrap();
                (load_csv(path, label_column)?, None)
            }
            other => bail!("unsupported data source {other}"),
        };

    let split = match &designated_unknown {
        Some(unknown_ids) => make_open_split_with(&dataset, unknown_ids, config.split_seed())?,
        None => {
            let fraction = config.data.unknown_fraction.unwrap_or(0.5);
            make_open_split(&dataset, fraction, config.split_seed())?
        }
    };

    save_csv(&split.train, &ws.train_csv())?;
    save_csv(&split.val_known, &ws.known_csv(SplitKind::Val))?;
    save_csv(&split.test_known, &ws.known_csv(SplitKind::Test))?;
    write_features_csv(
        &ws.unknown_csv(SplitKind::Val),
        &split.val_unknown,
        dataset.feature_dim,
    )?;
    write_features_csv(
        &ws.unknown_csv(SplitKind::Test),
        &split.test_unknown,
        dataset.feature_dim,
    )?;

    let manifest = DatasetManifest {
        version: 1,
        source: match config.data.source.as_str() {
            "synth" => "synth".to_string(),
            _ => config.data.path.as_ref().unwrap().display().to_string(),
        },
        num_known_classes: split.num_known_classes(),
        class_names: split.train.class_names.clone(),
        split: split.manifest.clone(),
    };
    write_manifest(&ws, &manifest)?;
    write_metadata(&ws, "synth", config_sha, config.seed)?;

    println!(
        "prepared {} samples: {} known classes ({} train / {} val / {} test), {} unknown classes ({} val / {} test)",
        dataset.len(),
        split.known_class_ids.len(),
        split.train.len(),
        split.val_known.len(),
        split.test_known.len(),
        split.unknown_class_ids.len(),
        split.val_unknown.len(),
        split.test_unknown.len(),
    );
    Ok(())
}
