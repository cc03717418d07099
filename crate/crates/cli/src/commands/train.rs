//! `train`: one seeded run per seed, then aggregation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mambatab::metrics::{aggregate, mean_std, Aggregate, EvalResult};
use mambatab::model::{checkpoint, HeadKind, MambaTabModel, ModelConfig};
use mambatab::tabular::{split, DatasetSchema, FeatureSubsetPlan, Preprocessor, Split, Table};
use mambatab::training::{self, TrainConfig, TrainReport};
use serde::{Deserialize, Serialize};

use super::{write_file, write_json};
use crate::config::{Hyper, Regime, RunSpec};
use crate::error::{CliError, Result};

/// Everything recorded about one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub regime: Regime,
    /// Configuration of the returned model.
    pub model: ModelConfig,
    /// Model input columns, in order.
    pub feature_columns: Vec<String>,
    /// One entry per training phase (one for supervised, three for
    /// incremental, pretrain + fine-tune for ssl).
    pub stages: Vec<TrainReport>,
    pub test: EvalResult,
    pub param_count: usize,
}

/// Sidecar needed to evaluate a checkpoint on raw data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub feature_columns: Vec<String>,
    pub preprocessor: Preprocessor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub regime: Regime,
    pub use_layer_norm: bool,
    pub model: Hyper,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub auroc: Aggregate,
    pub accuracy: Aggregate,
    /// Parameter count of the final model (identical across seeds).
    pub param_count: usize,
    pub per_seed_auroc: Vec<f64>,
}

pub fn load_dataset(spec: &RunSpec) -> Result<(Table, DatasetSchema)> {
    let schema_path = spec.schema.as_ref().ok_or_else(|| CliError::config("no schema given"))?;
    let data_path = spec.data.as_ref().ok_or_else(|| CliError::config("no dataset given"))?;
    let schema = DatasetSchema::from_path(schema_path)?;
    let table = Table::from_csv_path(data_path, &schema)?;
    Ok((table, schema))
}

pub struct SeedRun {
    pub report: SeedReport,
    pub model: MambaTabModel,
    pub meta: ModelMeta,
    pub wall_time_secs: f64,
}

/// Split, preprocess, train under the spec's regime and evaluate on test.
pub fn run_seed(spec: &RunSpec, table: &Table, schema: &DatasetSchema, seed: u64) -> Result<SeedRun> {
    let start = Instant::now();
    let (tr, va, te) = split(table, seed)?;
    let pre = Preprocessor::fit_with_kinds(&tr, &schema.kinds)?;
    let train = pre.transform(&tr, Split::Train)?;
    let val = pre.transform(&va, Split::Val)?;
    let mut test = pre.transform(&te, Split::Test)?;
    let n = train.cols;
    let tc = TrainConfig { seed, ..spec.train.clone() };

    let (model, stages) = match spec.regime {
        Regime::Supervised => {
            let model = MambaTabModel::new(spec.model.model_config(n, HeadKind::Classification), seed)?;
            let (best, report) = training::train_supervised(model, &train, &val, &tc)?;
            (best, vec![report])
        }
        Regime::Incremental => {
            let plan = FeatureSubsetPlan::new(n, seed)?;
            let stages = training::incremental_stages(&train, &val, &plan, spec.partition_rows)?;
            let first = stages[0].train.cols;
            let model = MambaTabModel::new(spec.model.model_config(first, HeadKind::Classification), seed)?;
            let (best, reports) = training::train_incremental(model, &stages, &tc)?;
            test = test.select_columns(&plan.cumulative(2));
            (best, reports)
        }
        Regime::Ssl => {
            let model = MambaTabModel::new(spec.model.model_config(n, HeadKind::Reconstruction), seed)?;
            let (pretrained, pre_report) = training::pretrain_ssl(model, &train, &val, &tc)?;
            let (best, ft_report) = training::finetune_after_ssl(&pretrained, &train, &val, &tc, seed.wrapping_add(1))?;
            (best, vec![pre_report, ft_report])
        }
    };
    let eval = training::evaluate(&model, &test, seed)?;
    let mut stages = stages;
    if let Some(last) = stages.last_mut() {
        last.test = Some(eval.clone());
    }
    let feature_columns = test.column_names.clone();
    Ok(SeedRun {
        report: SeedReport {
            seed,
            regime: spec.regime,
            model: model.config().clone(),
            feature_columns: feature_columns.clone(),
            stages,
            test: eval,
            param_count: model.count_parameters(),
        },
        meta: ModelMeta {
            seed,
            feature_columns,
            preprocessor: pre,
        },
        model,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn summarize(spec: &RunSpec, reports: &[SeedReport]) -> Result<Summary> {
    let evals: Vec<EvalResult> = reports.iter().map(|r| r.test.clone()).collect();
    let acc: Vec<f64> = evals.iter().map(|e| e.accuracy).collect();
    Ok(Summary {
        regime: spec.regime,
        use_layer_norm: spec.model.layer_norm,
        model: spec.model.clone(),
        train: spec.train.clone(),
        seeds: spec.seeds.clone(),
        auroc: aggregate(&evals).map_err(CliError::runtime)?,
        accuracy: mean_std(&acc).map_err(CliError::runtime)?,
        param_count: reports.first().map_or(0, |r| r.param_count),
        per_seed_auroc: evals.iter().map(|e| e.auroc).collect(),
    })
}

pub const SUMMARY_HEADER: [&str; 14] = [
    "regime",
    "seeds",
    "auroc_mean",
    "auroc_std",
    "accuracy_mean",
    "param_count",
    "embed_dim",
    "state_size",
    "expand",
    "d_conv",
    "m_blocks",
    "layer_norm",
    "discretization",
    "max_epochs",
];

fn summary_csv(s: &Summary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).map_err(CliError::runtime)?;
    let disc = serde_json::to_value(s.model.discretization).map_err(CliError::runtime)?;
    w.write_record([
        s.regime.to_string(),
        s.seeds.len().to_string(),
        format!("{:.6}", s.auroc.mean),
        format!("{:.6}", s.auroc.std),
        format!("{:.6}", s.accuracy.mean),
        s.param_count.to_string(),
        s.model.embed_dim.to_string(),
        s.model.state_size.to_string(),
        s.model.expand.to_string(),
        s.model.d_conv.to_string(),
        s.model.m_blocks.to_string(),
        s.model.layer_norm.to_string(),
        disc.as_str().unwrap_or_default().to_string(),
        s.train.max_epochs.to_string(),
    ])
    .map_err(CliError::runtime)?;
    w.into_inner().map_err(CliError::runtime)
}

pub fn summary_text(s: &Summary) -> String {
    let m = &s.model;
    let mut t = format!(
        "regime        {}\n\
         layer norm    {}\n\
         model         D={} N={} E={} d_conv={} M={}\n\
         parameters    {}\n\
         seeds         {}\n\
         test AUROC    {:.4} +/- {:.4}\n\
         accuracy      {:.4} +/- {:.4}\n",
        s.regime,
        if s.use_layer_norm { "on" } else { "off" },
        m.embed_dim,
        m.state_size,
        m.expand,
        m.d_conv,
        m.m_blocks,
        s.param_count,
        s.seeds.len(),
        s.auroc.mean,
        s.auroc.std,
        s.accuracy.mean,
        s.accuracy.std,
    );
    for (seed, a) in s.seeds.iter().zip(&s.per_seed_auroc) {
        t.push_str(&format!("  seed {seed:<6} {a:.4}\n"));
    }
    t
}

/// Runs every seed and writes, under `spec.out`:
///
/// ```text
/// run.json                 resolved spec
/// seed-<s>/report.json     SeedReport
/// seed-<s>/model.ckpt      best model
/// seed-<s>/model.meta.json ModelMeta
/// summary.{json,csv,txt}
/// timing.json              wall-clock seconds per seed (not reproducible)
/// ```
pub fn cmd_train(spec: &RunSpec) -> Result<Summary> {
    spec.validate()?;
    let (table, schema) = load_dataset(spec)?;
    write_json(&spec.out.join("run.json"), spec)?;

    let mut reports = Vec::with_capacity(spec.seeds.len());
    let mut timing = BTreeMap::new();
    for &seed in &spec.seeds {
        let run = run_seed(spec, &table, &schema, seed)?;
        let dir = seed_dir(&spec.out, seed);
        write_json(&dir.join("report.json"), &run.report)?;
        write_file(&dir.join("model.ckpt"), &checkpoint::to_bytes(&run.model))?;
        write_json(&dir.join("model.meta.json"), &run.meta)?;
        eprintln!(
            "seed {seed}: test AUROC {:.4}, {} epochs, {:.1}s",
            run.report.test.auroc,
            run.report.stages.iter().map(|s| s.epochs_run()).sum::<usize>(),
            run.wall_time_secs
        );
        timing.insert(seed.to_string(), run.wall_time_secs);
        reports.push(run.report);
    }

    let summary = summarize(spec, &reports)?;
    write_json(&spec.out.join("summary.json"), &summary)?;
    write_file(&spec.out.join("summary.csv"), &summary_csv(&summary)?)?;
    write_file(&spec.out.join("summary.txt"), summary_text(&summary).as_bytes())?;
    write_json(&spec.out.join("timing.json"), &timing)?;
    Ok(summary)
}
