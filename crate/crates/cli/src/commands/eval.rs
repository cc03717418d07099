//! `eval`: score a saved checkpoint on a dataset without training.

use std::path::{Path, PathBuf};

use mambatab::metrics::EvalResult;
use mambatab::model::checkpoint;
use mambatab::tabular::{split, DatasetSchema, Split, Table};
use mambatab::training;

use super::select_by_name;
use super::train::ModelMeta;
use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    /// The test rows of the seeded split the model was trained with.
    Test,
    /// Every row of the dataset.
    All,
}

/// `model.ckpt` -> `model.meta.json`.
pub fn meta_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("meta.json")
}

pub struct EvalRequest<'a> {
    pub checkpoint: &'a Path,
    pub meta: Option<&'a Path>,
    pub data: &'a Path,
    pub schema: &'a Path,
    pub split: EvalSplit,
    /// Defaults to the seed the checkpoint was trained with.
    pub seed: Option<u64>,
}

pub fn cmd_eval(req: &EvalRequest) -> Result<EvalResult> {
    let model = checkpoint::load(req.checkpoint)
        .map_err(|e| CliError::config(format!("{}: {e}", req.checkpoint.display())))?;
    let meta_file = req.meta.map_or_else(|| meta_path(req.checkpoint), Path::to_path_buf);
    let text = std::fs::read_to_string(&meta_file)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", meta_file.display())))?;
    let meta: ModelMeta =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", meta_file.display())))?;
    if meta.feature_columns.len() != model.config().n_features {
        return Err(CliError::config(format!(
            "checkpoint expects {} features but its metadata lists {}",
            model.config().n_features,
            meta.feature_columns.len()
        )));
    }

    let schema = DatasetSchema::from_path(req.schema)?;
    let table = Table::from_csv_path(req.data, &schema)?;
    if table.n_cols() != meta.preprocessor.n_features() {
        return Err(CliError::config(format!(
            "dataset has {} feature columns, checkpoint was trained on {}",
            table.n_cols(),
            meta.preprocessor.n_features()
        )));
    }
    let seed = req.seed.unwrap_or(meta.seed);
    let rows = match req.split {
        EvalSplit::Test => split(&table, seed)?.2,
        EvalSplit::All => table,
    };
    let encoded = meta.preprocessor.transform(&rows, Split::Test)?;
    let x = select_by_name(&encoded, &meta.feature_columns)?;
    Ok(training::evaluate(&model, &x, seed)?)
}
