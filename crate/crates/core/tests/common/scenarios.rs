//! End-to-end training scenarios on seeded synthetic data. Each returns the
//! measured quantities so callers decide what to assert.

use std::time::Instant;

use mambatab::model::{HeadKind, MambaTabModel, ModelConfig};
use mambatab::synthetic::{generate, SyntheticSpec};
use mambatab::tabular::{split, EncodedMatrix, FeatureSubsetPlan, Preprocessor, Split, Table};
use mambatab::training::{
    self, finetune_after_ssl, incremental_stages, pretrain_ssl, train_incremental, train_supervised, TrainConfig,
};
use mambatab::EvalResult;

pub struct Prepared {
    pub train: EncodedMatrix,
    pub val: EncodedMatrix,
    pub test: EncodedMatrix,
}

pub fn prepare(table: &Table, seed: u64) -> Prepared {
    let (tr, va, te) = split(table, seed).unwrap();
    let pre = Preprocessor::fit(&tr).unwrap();
    Prepared {
        train: pre.transform(&tr, Split::Train).unwrap(),
        val: pre.transform(&va, Split::Val).unwrap(),
        test: pre.transform(&te, Split::Test).unwrap(),
    }
}

pub struct SupervisedOutcome {
    pub eval: EvalResult,
    pub epochs: usize,
    pub secs: f64,
}

/// Defaults end to end: generate, split, preprocess, train, evaluate.
pub fn supervised(spec: &SyntheticSpec, seed: u64, use_layer_norm: bool) -> SupervisedOutcome {
    let start = Instant::now();
    let data = prepare(&generate(spec).unwrap(), seed);
    let cfg = ModelConfig { use_layer_norm, ..ModelConfig::new(spec.n_features) };
    let model = MambaTabModel::new(cfg, seed).unwrap();
    let tc = TrainConfig { seed, ..TrainConfig::default() };
    let (best, report) = train_supervised(model, &data.train, &data.val, &tc).unwrap();
    let eval = training::evaluate(&best, &data.test, seed).unwrap();
    SupervisedOutcome {
        eval,
        epochs: report.epochs_run(),
        secs: start.elapsed().as_secs_f64(),
    }
}

pub struct IncrementalOutcome {
    pub final_auroc: f64,
    pub stage1_auroc: f64,
    /// Every non-embedding tensor of the stage-1 model survives the widening
    /// into stage 2 and 3 bit for bit.
    pub transfer_bit_exact: bool,
}

/// Twelve features in three subsets of four; only the last subset carries
/// signal, so stage 1 sees noise only.
pub fn incremental(seed: u64) -> IncrementalOutcome {
    let spec = SyntheticSpec {
        informative: vec![8, 9, 10, 11],
        ..SyntheticSpec::new(9000, 0, 12, seed)
    };
    let data = prepare(&generate(&spec).unwrap(), seed);
    let plan = FeatureSubsetPlan::from_subsets(12, [(0..4).collect(), (4..8).collect(), (8..12).collect()]).unwrap();
    let stages = incremental_stages(&data.train, &data.val, &plan, true).unwrap();
    let tc = TrainConfig { seed, ..TrainConfig::default() };
    let init = MambaTabModel::new(ModelConfig::new(4), seed).unwrap();

    // stage-1-only baseline is the first stage of the same run
    let (stage1, _) = train_incremental(init.clone(), &stages[..1], &tc).unwrap();
    let stage1_auroc = training::evaluate(&stage1, &data.test.select_columns(&plan.cumulative(0)), seed)
        .unwrap()
        .auroc;

    let mut transfer_bit_exact = true;
    let mut prev = stage1.clone();
    for k in 1..3 {
        let widened = prev.transfer_weights(stages[k].train.cols, &(0..prev.config().n_features).collect::<Vec<_>>()).unwrap();
        for (&a, &b) in prev.non_embedding_ids().iter().zip(&widened.non_embedding_ids()) {
            let bits = |m: &MambaTabModel, id| m.params().get(id).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            transfer_bit_exact &= bits(&prev, a) == bits(&widened, b);
        }
        prev = train_incremental(init.clone(), &stages[..=k], &tc).unwrap().0;
    }
    let final_auroc = training::evaluate(&prev, &data.test, seed).unwrap().auroc;
    IncrementalOutcome {
        final_auroc,
        stage1_auroc,
        transfer_bit_exact,
    }
}

pub struct SslOutcome {
    pub initial_val_l2: f64,
    pub best_val_l2: f64,
    pub finetuned: EvalResult,
}

pub fn ssl(spec: &SyntheticSpec, seed: u64) -> SslOutcome {
    let data = prepare(&generate(spec).unwrap(), seed);
    let cfg = ModelConfig { head: HeadKind::Reconstruction, ..ModelConfig::new(spec.n_features) };
    let model = MambaTabModel::new(cfg, seed).unwrap();
    let tc = TrainConfig { seed, ..TrainConfig::default() };
    let (pre, report) = pretrain_ssl(model, &data.train, &data.val, &tc).unwrap();
    let (tuned, _) = finetune_after_ssl(&pre, &data.train, &data.val, &tc, seed + 1).unwrap();
    SslOutcome {
        initial_val_l2: report.initial_val_loss,
        best_val_l2: report.best_val_loss,
        finetuned: training::evaluate(&tuned, &data.test, seed).unwrap(),
    }
}
