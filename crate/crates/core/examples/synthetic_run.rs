//! Trains the default model on a generated dataset and prints test AUROC.
//!
//! `cargo run --release -p mambatab --example synthetic_run -- [informative] [noise] [seed]`

use mambatab::model::{MambaTabModel, ModelConfig};
use mambatab::synthetic::{generate, SyntheticSpec};
use mambatab::tabular::{split, Preprocessor, Split};
use mambatab::training::{evaluate, train_supervised, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let informative = args.first().copied().unwrap_or(6) as usize;
    let noise = args.get(1).copied().unwrap_or(6) as usize;
    let seed = args.get(2).copied().unwrap_or(0);

    let table = generate(&SyntheticSpec::new(1000, informative, noise, seed))?;
    let (train, val, test) = split(&table, seed)?;
    let pre = Preprocessor::fit(&train)?;
    let (train, val, test) = (
        pre.transform(&train, Split::Train)?,
        pre.transform(&val, Split::Val)?,
        pre.transform(&test, Split::Test)?,
    );
    let model = MambaTabModel::new(ModelConfig::new(train.cols), seed)?;
    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    let (best, report) = train_supervised(model, &train, &val, &cfg)?;
    let eval = evaluate(&best, &test, seed)?;
    println!(
        "epochs {} best {} val_loss {:.4} test_auroc {:.4} params {} time {:.1}s",
        report.epochs_run(),
        report.best_epoch,
        report.best_val_loss,
        eval.auroc,
        report.param_count,
        report.wall_time_secs
    );
    Ok(())
}
