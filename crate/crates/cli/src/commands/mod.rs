pub mod eval;
pub mod generate;
pub mod sweep;
pub mod train;

use std::path::Path;

use mambatab::tabular::EncodedMatrix;
use serde::Serialize;

use crate::error::{CliError, Result};

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

/// Reorders the columns of `data` to `names`.
pub(crate) fn select_by_name(data: &EncodedMatrix, names: &[String]) -> Result<EncodedMatrix> {
    let idx = names
        .iter()
        .map(|n| {
            data.column_names
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| CliError::config(format!("dataset has no column `{n}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(data.select_columns(&idx))
}
