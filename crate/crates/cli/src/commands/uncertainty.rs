//! Scores predictive uncertainty for every open-set sample of a split and
//! writes the mu CSV consumed by density plots.

use anyhow::Result;

use osr_core::perturb::make_ensemble;
use osr_core::uncertainty::score_open_set;

use crate::artifacts::{write_metadata, write_mu_csv, MuRow, SplitKind, Workspace};
use crate::commands::{load_model, load_open_set};
use crate::config::ExperimentConfig;

pub fn run(config: &ExperimentConfig, config_sha: &str, split: SplitKind) -> Result<()> {
    let ws = Workspace::new(&config.outdir);
    let (model, _) = load_model(&ws)?;
    let open = load_open_set(&ws, split)?;

    let pipeline_cfg = config.pipeline_config()?;
    let ensemble = make_ensemble(&model, &pipeline_cfg.perturb);
    let records = score_open_set(&ensemble, &open.features)?;

    let rows: Vec<MuRow> = records
        .iter()
        .map(|rec| {
            let label = open.truth[rec.sample_id];
            MuRow {
                sample_id: rec.sample_id,
                mu: rec.mu,
                true_label: Some(label),
                group: Some(
                    if label > open.num_known {
                        "unknown"
                    } else {
                        "known"
                    }
                    .to_string(),
                ),
            }
        })
        .collect();
    write_mu_csv(&ws.mu_csv(split), &rows)?;
    write_metadata(&ws, "uncertainty", config_sha, config.seed)?;

    println!(
        "scored {} open samples ({} split) with B={}, lambda={}",
        rows.len(),
        split.as_str(),
        pipeline_cfg.perturb.num_models,
        pipeline_cfg.perturb.noise_scale
    );
    Ok(())
}
