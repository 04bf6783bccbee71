//! Trains the base classifier on the prepared training split and writes the
//! model checkpoint.

use anyhow::Result;

use osr_core::nn::{accuracy, train, ClassifierModel, NetworkSpec};

use crate::artifacts::{read_manifest, write_metadata, Workspace};
use crate::commands::load_train;
use crate::config::ExperimentConfig;

pub fn run(config: &ExperimentConfig, config_sha: &str) -> Result<()> {
    let ws = Workspace::new(&config.outdir);
    let manifest = read_manifest(&ws)?;
    let dataset = load_train(&ws)?;
    let rows = dataset.rows();

    let spec = NetworkSpec::new(
        dataset.feature_dim,
        config.network.hidden_dims.clone(),
        manifest.num_known_classes,
    )?;
    let model = ClassifierModel::init(spec, config.init_seed());
    let train_config = config.train_config()?;
    let outcome = train(model, &rows, &train_config)?;

    outcome
        .model
        .save_checkpoint(train_config.seed, &ws.model_json())?;
    write_metadata(&ws, "train", config_sha, config.seed)?;

    let final_loss = outcome.epoch_losses.last().copied().unwrap_or(f64::NAN);
    let train_acc = accuracy(&outcome.model, &rows)?;
    println!(
        "trained {} epochs on {} samples: loss {:.6}, training accuracy {:.4}",
        train_config.epochs,
        rows.len(),
        final_loss,
        train_acc
    );
    Ok(())
}
