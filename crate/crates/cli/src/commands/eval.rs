//! Computes the metric report from a results CSV.

use std::path::PathBuf;

use anyhow::{bail, Result};

use osr_core::metrics::evaluate;

use crate::artifacts::{
    read_manifest, read_results_csv, render_report_txt, write_metadata, write_report_csv,
    SplitKind, Workspace,
};
use crate::config::ExperimentConfig;

pub fn run(
    config: &ExperimentConfig,
    config_sha: &str,
    split: SplitKind,
    mode: &str,
    results_override: Option<PathBuf>,
) -> Result<()> {
    let ws = Workspace::new(&config.outdir);
    let manifest = read_manifest(&ws)?;
    let results_path = results_override.unwrap_or_else(|| ws.results_csv(split, mode));
    let rows = read_results_csv(&results_path)?;
    if rows.is_empty() {
        bail!("results file {} is empty", results_path.display());
    }

    let mut truth = Vec::with_capacity(rows.len());
    let mut predicted = Vec::with_capacity(rows.len());
    for row in &rows {
        match row.true_label {
            Some(label) => truth.push(label),
            None => bail!(
                "sample {} has no ground-truth label; cannot evaluate",
                row.sample_id
            ),
        }
        predicted.push(row.final_label);
    }

    let unknown_label = manifest.num_known_classes + 1;
    let report = evaluate(&truth, &predicted, unknown_label)?;

    let mut txt = render_report_txt(&report);
    let mut by_stage: std::collections::BTreeMap<&str, usize> = Default::default();
    for row in &rows {
        if row.final_label == unknown_label {
            *by_stage
                .entry(match row.provenance.as_str() {
                    "threshold" => "threshold",
                    "isda" => "isda",
                    "tree" => "tree",
                    other => {
                        bail!(
                            "unrecognized provenance '{other}' in {}",
                            results_path.display()
                        )
                    }
                })
                .or_default() += 1;
        }
    }
    txt.push_str("\nrejections by stage:");
    for (stage, count) in &by_stage {
        txt.push_str(&format!(" {stage}={count}"));
    }
    txt.push('\n');
    let mean_mu = |unknown: bool| {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| (r.final_label == unknown_label) == unknown)
            .map(|r| r.mu)
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    txt.push_str(&format!(
        "mean mu: rejected {:.4}, kept {:.4}\n",
        mean_mu(true),
        mean_mu(false)
    ));

    std::fs::write(ws.report_txt(), &txt)?;
    write_report_csv(&ws.report_csv(), &report)?;
    write_metadata(&ws, "eval", config_sha, config.seed)?;

    print!("{txt}");
    Ok(())
}
