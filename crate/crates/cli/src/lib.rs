//! Command-line front end: `train`, `eval`, `sweep` and `generate`.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mambatab::synthetic::SyntheticSpec;

use commands::eval::{cmd_eval, EvalRequest, EvalSplit};
use commands::generate::cmd_generate;
use commands::sweep::{cmd_sweep, parse_values, Knob};
use commands::train::{cmd_train, summary_text};
use config::{parse_discretization, parse_seeds, Regime, RunSpec};
use error::Result;

#[derive(Debug, Parser)]
#[command(name = "mambatab", version, about = "Train and evaluate MambaTab models on tabular CSV data")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per seed and write reports, checkpoints and a summary.
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Repeat `train` for each value of one architecture knob.
    Sweep(SweepArgs),
    /// Write a synthetic dataset with a logistic ground truth.
    Generate(GenerateArgs),
}

/// Run options. Flags override values read from `--config`.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Key-value run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub regime: Option<Regime>,
    /// Seed list such as `0-9` or `1,4,7`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub state_size: Option<usize>,
    #[arg(long)]
    pub expand: Option<usize>,
    #[arg(long)]
    pub d_conv: Option<usize>,
    #[arg(long)]
    pub m_blocks: Option<usize>,
    /// Feed the embedding straight into the ReLU.
    #[arg(long)]
    pub no_layer_norm: bool,
    /// `euler` or `exact_zoh`.
    #[arg(long)]
    pub discretization: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Incremental regime: every stage trains on all rows.
    #[arg(long)]
    pub no_partition_rows: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunSpec> {
        let mut spec = match &self.config {
            Some(p) => RunSpec::from_file(p)?,
            None => RunSpec::default(),
        };
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        if let Some(p) = &self.data {
            spec.data = Some(p.clone());
        }
        if let Some(p) = &self.schema {
            spec.schema = Some(p.clone());
        }
        if let Some(p) = &self.out {
            spec.out = p.clone();
        }
        if let Some(r) = self.regime {
            spec.regime = r;
        }
        if let Some(s) = &self.seeds {
            spec.seeds = parse_seeds(s)?;
        }
        set(&mut spec.model.embed_dim, self.embed_dim);
        set(&mut spec.model.state_size, self.state_size);
        set(&mut spec.model.expand, self.expand);
        set(&mut spec.model.d_conv, self.d_conv);
        set(&mut spec.model.m_blocks, self.m_blocks);
        if self.no_layer_norm {
            spec.model.layer_norm = false;
        }
        if let Some(d) = &self.discretization {
            spec.model.discretization = parse_discretization(d)?;
        }
        set(&mut spec.train.max_epochs, self.max_epochs);
        set(&mut spec.train.patience, self.patience);
        set(&mut spec.train.batch_size, self.batch_size);
        if let Some(lr) = self.lr {
            spec.train.lr = lr;
        }
        if self.no_partition_rows {
            spec.partition_rows = false;
        }
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the `.meta.json` file next to the checkpoint.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: EvalSplit,
    /// Split seed; defaults to the checkpoint's training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub knob: Knob,
    /// Comma-separated values, e.g. `4,8,16,32,64,128`.
    #[arg(long)]
    pub values: String,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// CSV to write; the schema goes next to it with a `.schema` extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub rows: usize,
    #[arg(long, default_value_t = 6)]
    pub informative: usize,
    #[arg(long, default_value_t = 6)]
    pub noise: usize,
    #[arg(long, default_value_t = 4.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => {
            let summary = cmd_train(&args.resolve()?)?;
            print!("{}", summary_text(&summary));
        }
        Command::Eval(args) => {
            let result = cmd_eval(&EvalRequest {
                checkpoint: &args.checkpoint,
                meta: args.meta.as_deref(),
                data: &args.data,
                schema: &args.schema,
                split: args.split,
                seed: args.seed,
            })?;
            if args.json {
                println!("{}", serde_json::to_string(&result).map_err(error::CliError::runtime)?);
            } else {
                println!("AUROC {:.6}  accuracy {:.6}  ({} pos / {} neg)", result.auroc, result.accuracy, result.n_pos, result.n_neg);
            }
        }
        Command::Sweep(args) => {
            let values = parse_values(&args.values)?;
            let rows = cmd_sweep(&args.run.resolve()?, args.knob, &values)?;
            println!("{:<16} {:>8} {:>10} {:>10} {:>10}", "knob", "value", "auroc", "std", "params");
            for r in rows {
                println!("{:<16} {:>8} {:>10.4} {:>10.4} {:>10}", r.knob.to_string(), r.value, r.auroc_mean, r.auroc_std, r.param_count);
            }
        }
        Command::Generate(args) => {
            let spec = SyntheticSpec {
                signal: args.signal,
                ..SyntheticSpec::new(args.rows, args.informative, args.noise, args.seed)
            };
            let schema = cmd_generate(&spec, &args.out)?;
            println!("wrote {} and {}", args.out.display(), schema.display());
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
