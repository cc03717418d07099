//! `generate`: write a seeded synthetic dataset and its schema file.

use std::path::{Path, PathBuf};

use mambatab::synthetic::{generate, write_csv, SyntheticSpec};

use super::write_file;
use crate::error::{CliError, Result};

/// `data.csv` -> `data.schema`.
pub fn schema_path(csv: &Path) -> PathBuf {
    csv.with_extension("schema")
}

pub fn cmd_generate(spec: &SyntheticSpec, out: &Path) -> Result<PathBuf> {
    let table = generate(spec)?;
    let mut bytes = Vec::new();
    write_csv(&table, &mut bytes).map_err(CliError::runtime)?;
    write_file(out, &bytes)?;
    let schema = schema_path(out);
    write_file(&schema, b"label = label\npositive = 1\n")?;
    Ok(schema)
}
