//! Runs the detection cascade on an open split and writes the results CSV.

use anyhow::Result;

use osr_core::pipeline::{ablate, AblationMode};

use crate::artifacts::{write_metadata, write_results_csv, SplitKind, Workspace};
use crate::commands::{load_model, load_open_set, load_train};
use crate::config::ExperimentConfig;

pub fn mode_name(mode: AblationMode) -> &'static str {
    match mode {
        AblationMode::Full => "full",
        AblationMode::PerturbationOnly => "perturbation_only",
        AblationMode::NoIsda => "no_isda",
        AblationMode::NoDt => "no_dt",
    }
}

pub fn run(
    config: &ExperimentConfig,
    config_sha: &str,
    split: SplitKind,
    mode: AblationMode,
) -> Result<()> {
    let ws = Workspace::new(&config.outdir);
    let (model, _) = load_model(&ws)?;
    let train = load_train(&ws)?;
    let open = load_open_set(&ws, split)?;

    let cfg = config.pipeline_config()?;
    let run = ablate(&model, &train.rows(), &open.features, &cfg, mode)?;
    for warning in &run.warnings {
        log::warn!("{warning:?}");
    }

    let truth: Vec<Option<usize>> = open.truth.iter().map(|&l| Some(l)).collect();
    let path = ws.results_csv(split, mode_name(mode));
    write_results_csv(&path, &run.results, &truth)?;
    write_metadata(&ws, "detect", config_sha, config.seed)?;

    let rejected = run
        .results
        .iter()
        .filter(|r| r.final_label == open.num_known + 1)
        .count();
    println!(
        "detected {rejected} unknowns out of {} open samples ({} split, {} mode) -> {}",
        run.results.len(),
        split.as_str(),
        mode_name(mode),
        path.display()
    );
    Ok(())
}
