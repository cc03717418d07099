//! `sweep`: one full seeded run per value of a single architecture knob.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::train::cmd_train;
use super::{write_file, write_json};
use crate::config::RunSpec;
use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Knob {
    /// E, the inner width multiplier of each block.
    BlockExpansion,
    /// N, the SSM state size.
    StateSize,
    /// D, the embedding width.
    EmbedDim,
    /// M, the number of stacked blocks.
    MBlocks,
}

impl fmt::Display for Knob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Knob::BlockExpansion => "block-expansion",
            Knob::StateSize => "state-size",
            Knob::EmbedDim => "embed-dim",
            Knob::MBlocks => "m-blocks",
        })
    }
}

impl Knob {
    pub fn apply(self, spec: &mut RunSpec, value: usize) {
        let m = &mut spec.model;
        match self {
            Knob::BlockExpansion => m.expand = value,
            Knob::StateSize => m.state_size = value,
            Knob::EmbedDim => m.embed_dim = value,
            Knob::MBlocks => m.m_blocks = value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub knob: Knob,
    pub value: usize,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub param_count: usize,
}

pub fn parse_values(s: &str) -> Result<Vec<usize>> {
    let values = s
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| CliError::config(format!("bad sweep value `{v}`"))))
        .collect::<Result<Vec<usize>>>()?;
    if values.is_empty() {
        return Err(CliError::config("sweep needs at least one value"));
    }
    Ok(values)
}

/// Each value runs into `<out>/<knob>-<value>/`; the table goes to
/// `<out>/sweep.csv` and `<out>/sweep.json`.
pub fn cmd_sweep(spec: &RunSpec, knob: Knob, values: &[usize]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CliError::config("sweep needs at least one value"));
    }
    // fail on a bad value before spending time on the good ones
    for &v in values {
        let mut s = spec.clone();
        knob.apply(&mut s, v);
        s.validate()?;
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut s = spec.clone();
        knob.apply(&mut s, v);
        s.out = spec.out.join(format!("{knob}-{v}"));
        eprintln!("{knob} = {v}");
        let summary = cmd_train(&s)?;
        rows.push(SweepRow {
            knob,
            value: v,
            auroc_mean: summary.auroc.mean,
            auroc_std: summary.auroc.std,
            param_count: summary.param_count,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["knob", "value", "auroc_mean", "auroc_std", "param_count"])
        .map_err(CliError::runtime)?;
    for r in &rows {
        w.write_record([
            r.knob.to_string(),
            r.value.to_string(),
            format!("{:.6}", r.auroc_mean),
            format!("{:.6}", r.auroc_std),
            r.param_count.to_string(),
        ])
        .map_err(CliError::runtime)?;
    }
    write_file(&spec.out.join("sweep.csv"), &w.into_inner().map_err(CliError::runtime)?)?;
    write_json(&spec.out.join("sweep.json"), &rows)?;
    Ok(rows)
}
