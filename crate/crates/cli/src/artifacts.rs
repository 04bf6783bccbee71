//! On-disk artifact layout and the versioned file formats commands exchange.
//!
//! Commands compose through these files only; no state is carried between
//! invocations. Every CSV starts with a `# osr <kind> v1` comment line and
//! every JSON document carries a `version` field.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use osr_core::data::SplitManifest;
use osr_core::metrics::EvalReport;
use osr_core::pipeline::DetectionResult;

/// Which open split a command operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitKind {
    Val,
    Test,
}

impl SplitKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }
}

/// Resolves artifact paths inside the run's output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub outdir: PathBuf,
}

impl Workspace {
    pub fn new(outdir: &Path) -> Self {
        Self {
            outdir: outdir.to_path_buf(),
        }
    }

    pub fn create(&self) -> Result<()> {
        std::fs::create_dir_all(&self.outdir)
            .with_context(|| format!("cannot create output dir {}", self.outdir.display()))?;
        Ok(())
    }

    pub fn dataset_csv(&self) -> PathBuf {
        self.outdir.join("dataset.csv")
    }

    pub fn manifest_json(&self) -> PathBuf {
        self.outdir.join("manifest.json")
    }

    pub fn train_csv(&self) -> PathBuf {
        self.outdir.join("train.csv")
    }

    pub fn known_csv(&self, split: SplitKind) -> PathBuf {
        self.outdir.join(format!("{}_known.csv", split.as_str()))
    }

    pub fn unknown_csv(&self, split: SplitKind) -> PathBuf {
        self.outdir.join(format!("{}_unknown.csv", split.as_str()))
    }

    pub fn model_json(&self) -> PathBuf {
        self.outdir.join("model.json")
    }

    pub fn mu_csv(&self, split: SplitKind) -> PathBuf {
        self.outdir.join(format!("mu_{}.csv", split.as_str()))
    }

    pub fn results_csv(&self, split: SplitKind, mode: &str) -> PathBuf {
        if mode == "full" {
            self.outdir.join(format!("results_{}.csv", split.as_str()))
        } else {
            self.outdir
                .join(format!("results_{}_{mode}.csv", split.as_str()))
        }
    }

    pub fn report_txt(&self) -> PathBuf {
        self.outdir.join("report.txt")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.outdir.join("report.csv")
    }

    pub fn grid_csv(&self) -> PathBuf {
        self.outdir.join("grid_results.csv")
    }

    pub fn grid_best_json(&self) -> PathBuf {
        self.outdir.join("grid_best.json")
    }

    pub fn density_csv(&self) -> PathBuf {
        self.outdir.join("density.csv")
    }

    pub fn density_svg(&self) -> PathBuf {
        self.outdir.join("density.svg")
    }

    pub fn meta_json(&self, command: &str) -> PathBuf {
        self.outdir.join(format!("{command}.meta.json"))
    }
}

/// Run provenance written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

pub fn write_metadata(ws: &Workspace, command: &str, config_sha256: &str, seed: u64) -> Result<()> {
    let meta = RunMetadata {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_sha256: config_sha256.to_string(),
        seed,
    };
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(ws.meta_json(command), json)?;
    Ok(())
}

/// Everything needed to reconstruct and interpret the split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub source: String,
    pub num_known_classes: usize,
    /// Dense known-class names after relabeling, id -> name.
    pub class_names: BTreeMap<usize, String>,
    pub split: SplitManifest,
}

pub fn write_manifest(ws: &Workspace, manifest: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(ws.manifest_json(), json)?;
    Ok(())
}

pub fn read_manifest(ws: &Workspace) -> Result<DatasetManifest> {
    let path = ws.manifest_json();
    let json = std::fs::read_to_string(&path).with_context(|| {
        format!(
            "missing manifest {} (run `osr synth` first)",
            path.display()
        )
    })?;
    let manifest: DatasetManifest = serde_json::from_str(&json)?;
    if manifest.version != 1 {
        bail!("manifest version {} unsupported", manifest.version);
    }
    Ok(manifest)
}

/// Writes an unlabeled feature matrix as `f0..f{d-1}` columns.
pub fn write_features_csv(path: &Path, features: &[Vec<f64>], dim: usize) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# osr features v1")?;
    let mut writer = csv::Writer::from_writer(file);
    let header: Vec<String> = (0..dim).map(|d| format!("f{d}")).collect();
    writer.write_record(&header)?;
    for x in features {
        let record: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_features_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: Vec<f64> = record
            .iter()
            .map(|cell| cell.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("non-numeric cell in {}", path.display()))?;
        rows.push(row);
    }
    Ok(rows)
}

/// One scored open-set sample: id, score, truth when available, and the
/// known/unknown tag used by density plots.
#[derive(Debug, Clone)]
pub struct MuRow {
    pub sample_id: usize,
    pub mu: f64,
    pub true_label: Option<usize>,
    pub group: Option<String>,
}

pub fn write_mu_csv(path: &Path, rows: &[MuRow]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# osr mu v1")?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(["sample_id", "mu", "true_label", "group"])?;
    for row in rows {
        writer.write_record([
            row.sample_id.to_string(),
            row.mu.to_string(),
            row.true_label.map(|l| l.to_string()).unwrap_or_default(),
            row.group.clone().unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_mu_csv(path: &Path) -> Result<Vec<MuRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        rows.push(MuRow {
            sample_id: get(0).parse().context("bad sample_id")?,
            mu: get(1).parse().context("bad mu value")?,
            true_label: if get(2).is_empty() {
                None
            } else {
                Some(get(2).parse().context("bad true_label")?)
            },
            group: if get(3).is_empty() {
                None
            } else {
                Some(get(3))
            },
        });
    }
    Ok(rows)
}

/// One final decision row, with ground truth when available.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub sample_id: usize,
    pub true_label: Option<usize>,
    pub final_label: usize,
    pub provenance: String,
    pub mu: f64,
}

pub fn write_results_csv(
    path: &Path,
    results: &[DetectionResult],
    truth: &[Option<usize>],
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# osr results v1")?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(["sample_id", "true_label", "final_label", "provenance", "mu"])?;
    for r in results {
        writer.write_record([
            r.sample_id.to_string(),
            truth
                .get(r.sample_id)
                .and_then(|t| t.map(|l| l.to_string()))
                .unwrap_or_default(),
            r.final_label.to_string(),
            r.provenance.as_str().to_string(),
            r.mu.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let get = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        rows.push(ResultRow {
            sample_id: get(0).parse().context("bad sample_id")?,
            true_label: if get(1).is_empty() {
                None
            } else {
                Some(get(1).parse().context("bad true_label")?)
            },
            final_label: get(2).parse().context("bad final_label")?,
            provenance: get(3),
            mu: get(4).parse().context("bad mu")?,
        });
    }
    Ok(rows)
}

/// Report CSV in Accuracy, Precision, Recall, F1, TDR column order.
pub fn write_report_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# osr report v1")?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(["accuracy", "precision", "recall", "f1", "tdr"])?;
    writer.write_record([
        report.accuracy.to_string(),
        report.precision.to_string(),
        report.recall.to_string(),
        report.f1.to_string(),
        report.tdr.to_string(),
    ])?;
    writer.flush()?;
    Ok(())
}

/// Human-readable report: aligned metric table plus the confusion matrix.
pub fn render_report_txt(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:<10} {:<10} {:<10} {:<10}\n",
        "accuracy", "precision", "recall", "f1", "tdr"
    ));
    out.push_str(&format!(
        "{:<10.4} {:<10.4} {:<10.4} {:<10.4} {:<10.4}\n\n",
        report.accuracy, report.precision, report.recall, report.f1, report.tdr
    ));
    out.push_str("confusion (rows = truth, cols = predicted):\n");
    out.push_str("      ");
    for label in &report.labels {
        out.push_str(&format!("{label:>7}"));
    }
    out.push('\n');
    for (i, label) in report.labels.iter().enumerate() {
        out.push_str(&format!("{label:>6}"));
        for count in &report.confusion[i] {
            out.push_str(&format!("{count:>7}"));
        }
        out.push('\n');
    }
    out
}
