//! Optimisation and the three learning regimes.
//!
//! All randomness (minibatch order, corruption masks) derives from
//! `TrainConfig::seed` through separate ChaCha streams, so a run is a pure
//! function of its inputs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, EvalResult, MetricError};
use crate::model::{matrix_tensor, HeadKind, MambaTabModel, ModelError};
use crate::tabular::EncodedMatrix;
use crate::tensor::{softplus, CustomOp, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("epoch {epoch}: {source}")]
    NonFinite { epoch: usize, source: TensorError },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid training setup: {0}")]
    Config(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            patience: 5,
            lr: 1e-4,
            lr_min: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: ADAM_EPS,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

// RNG streams carved out of the root seed
const SHUFFLE_STREAM: u64 = 1;
const MASK_STREAM: u64 = 2;
const VAL_MASK_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Cosine annealing from `lr0` at epoch 0 to `lr_min` at `max_epochs`.
pub fn cosine_lr(epoch: usize, max_epochs: usize, lr0: f64, lr_min: f64) -> f64 {
    if max_epochs == 0 {
        return lr0;
    }
    let t = epoch.min(max_epochs) as f64 / max_epochs as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn from_config(params: &[Tensor], cfg: &TrainConfig) -> Self {
        Self::new(params, cfg.beta1, cfg.beta2, cfg.eps)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

struct BceWithLogits {
    labels: Vec<f64>,
}

impl CustomOp for BceWithLogits {
    fn name(&self) -> &'static str {
        "bce_with_logits"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let n = self.labels.len() as f64;
        let grad = inputs[0]
            .data()
            .iter()
            .zip(&self.labels)
            .map(|(&z, &y)| g[0] * (crate::tensor::sigmoid(z) - y) / n)
            .collect();
        vec![Some(grad)]
    }
}

/// Mean logistic loss, `softplus(z) - y z` per row.
pub fn bce_with_logits(tape: &mut Tape, logits: Var, labels: &[u8]) -> crate::tensor::Result<Var> {
    let z = tape.value(logits);
    if z.numel() != labels.len() {
        return Err(TensorError::Shape {
            op: "bce_with_logits",
            detail: format!("{:?} logits for {} labels", z.shape(), labels.len()),
        });
    }
    let labels: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
    let loss = z.data().iter().zip(&labels).map(|(&z, &y)| softplus(z) - y * z).sum::<f64>() / labels.len() as f64;
    Ok(tape.custom(&[logits], Tensor::scalar(loss), Box::new(BceWithLogits { labels })))
}

/// Mean squared error against a constant target.
pub fn mse(tape: &mut Tape, pred: Var, target: &Tensor) -> crate::tensor::Result<Var> {
    let t = tape.constant(target.clone());
    let d = tape.sub(pred, t)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// Exactly `floor(n / 2)` distinct positions set, uniformly at random.
pub fn corruption_mask(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    for j in rand::seq::index::sample(rng, n, n / 2) {
        mask[j] = true;
    }
    mask
}

/// Copy of `rows` with masked features zeroed.
fn corrupt(rows: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    let n = rows.last_dim();
    let mut out = rows.clone();
    for row in out.data_mut().chunks_mut(n) {
        for (v, hit) in row.iter_mut().zip(corruption_mask(rng, n)) {
            if hit {
                *v = 0.0;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValBce,
    ValL2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auroc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub regime: String,
    pub monitor: Monitor,
    /// Validation loss before the first update.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the returned snapshot; 0 if no epoch ran.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub param_count: usize,
    pub test: Option<EvalResult>,
    /// Kept out of serialized reports so they stay reproducible. Always 0
    /// on targets without a clock (`wasm32-unknown-unknown`).
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }
}

enum Task<'a> {
    Classify { train: &'a EncodedMatrix, val: &'a EncodedMatrix },
    Reconstruct { train: &'a Tensor, val: &'a Tensor, val_input: Tensor },
}

const EVAL_CHUNK: usize = 1024;

/// Forward pass over all rows, in chunks to bound tape memory.
fn predict_rows(model: &MambaTabModel, x: &Tensor) -> Result<Tensor> {
    let (rows, n) = (x.shape()[0], x.last_dim());
    let mut out = Vec::new();
    let mut width = 0;
    for start in (0..rows).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(rows);
        let chunk = Tensor::new([end - start, n], x.data()[start * n..end * n].to_vec())?;
        let y = model.predict(&chunk)?;
        width = y.last_dim();
        out.extend_from_slice(y.data());
    }
    Ok(Tensor::new([rows, width], out)?)
}

fn classification_loss(model: &MambaTabModel, data: &EncodedMatrix) -> Result<(f64, Vec<f64>)> {
    let logits = predict_rows(model, &matrix_tensor(data)?)?;
    let n = data.labels.len() as f64;
    let loss = logits
        .data()
        .iter()
        .zip(&data.labels)
        .map(|(&z, &y)| softplus(z) - f64::from(y) * z)
        .sum::<f64>()
        / n;
    Ok((loss, logits.into_data()))
}

fn reconstruction_loss(model: &MambaTabModel, input: &Tensor, target: &Tensor) -> Result<f64> {
    let out = predict_rows(model, input)?;
    let n = target.numel() as f64;
    Ok(out.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

fn rows_of(x: &Tensor, idx: &[usize]) -> Tensor {
    let n = x.last_dim();
    let mut data = Vec::with_capacity(idx.len() * n);
    for &i in idx {
        data.extend_from_slice(&x.data()[i * n..(i + 1) * n]);
    }
    Tensor::new([idx.len(), n], data).expect("row gather")
}

impl Task<'_> {
    fn rows(&self) -> usize {
        match self {
            Task::Classify { train, .. } => train.rows,
            Task::Reconstruct { train, .. } => train.shape()[0],
        }
    }

    fn monitor(&self) -> Monitor {
        match self {
            Task::Classify { .. } => Monitor::ValBce,
            Task::Reconstruct { .. } => Monitor::ValL2,
        }
    }

    fn val_metrics(&self, model: &MambaTabModel) -> Result<(f64, Option<f64>)> {
        match self {
            Task::Classify { val, .. } => {
                let (loss, logits) = classification_loss(model, val)?;
                Ok((loss, metrics::auroc(&logits, &val.labels).ok()))
            }
            Task::Reconstruct { val, val_input, .. } => Ok((reconstruction_loss(model, val_input, val)?, None)),
        }
    }

    /// One minibatch forward/backward; returns `(loss, grads)`.
    fn batch(&self, model: &MambaTabModel, idx: &[usize], masks: &mut ChaCha8Rng) -> std::result::Result<(f64, Vec<Tensor>), ModelError> {
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let loss = match self {
            Task::Classify { train, .. } => {
                let batch = train.select_rows(idx);
                let x = tape.constant(matrix_tensor(&batch)?);
                let logits = model.forward(&mut tape, &bound, x)?;
                tape.check_finite()?;
                bce_with_logits(&mut tape, logits, &batch.labels)?
            }
            Task::Reconstruct { train, .. } => {
                let clean = rows_of(train, idx);
                let x = tape.constant(corrupt(&clean, masks));
                let out = model.forward(&mut tape, &bound, x)?;
                tape.check_finite()?;
                mse(&mut tape, out, &clean)?
            }
        };
        tape.check_finite()?;
        tape.backward(loss)?;
        Ok((tape.value(loss).item(), bound.grads(&tape)))
    }
}

fn non_finite(epoch: usize, e: ModelError) -> TrainError {
    match e {
        ModelError::Tensor(t @ TensorError::NonFinite { .. }) => TrainError::NonFinite { epoch, source: t },
        other => TrainError::Model(other),
    }
}

#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
struct Stopwatch(std::time::Instant);

#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
impl Stopwatch {
    fn start() -> Self {
        Self(std::time::Instant::now())
    }

    fn secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
struct Stopwatch;

#[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
impl Stopwatch {
    fn start() -> Self {
        Self
    }

    fn secs(&self) -> f64 {
        0.0
    }
}

fn fit(mut model: MambaTabModel, task: Task<'_>, cfg: &TrainConfig, regime: &str) -> Result<(MambaTabModel, TrainReport)> {
    cfg.validate()?;
    let started = Stopwatch::start();
    let m = task.rows();
    if m == 0 {
        return Err(TrainError::Config("empty training set".into()));
    }
    let mut order_rng = stream(cfg.seed, SHUFFLE_STREAM);
    let mut mask_rng = stream(cfg.seed, MASK_STREAM);
    let mut adam = Adam::from_config(model.params().tensors(), cfg);

    let (initial_val_loss, _) = task.val_metrics(&model)?;
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..m).collect();

    for epoch in 0..cfg.max_epochs {
        let lr = cosine_lr(epoch, cfg.max_epochs, cfg.lr, cfg.lr_min);
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let (loss, grads) = task.batch(&model, idx, &mut mask_rng).map_err(|e| non_finite(epoch + 1, e))?;
            total += loss * idx.len() as f64;
            adam.step(model.params_mut().tensors_mut(), &grads, lr);
        }
        let train_loss = total / m as f64;
        let (val_loss, val_auroc) = task.val_metrics(&model).map_err(|e| match e {
            TrainError::Model(me) => non_finite(epoch + 1, me),
            other => other,
        })?;
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(TrainError::NonFinite {
                epoch: epoch + 1,
                source: TensorError::NonFinite {
                    op: "loss".into(),
                    node: 0,
                },
            });
        }
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss,
            val_loss,
            val_auroc,
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = epoch + 1;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    if best_epoch == 0 {
        best_loss = initial_val_loss;
    }
    let report = TrainReport {
        regime: regime.to_string(),
        monitor: task.monitor(),
        initial_val_loss,
        epochs,
        best_epoch,
        best_val_loss: best_loss,
        stopped_early,
        param_count: best.count_parameters(),
        test: None,
        wall_time_secs: started.secs(),
    };
    Ok((best, report))
}

fn check_width(model: &MambaTabModel, data: &EncodedMatrix) -> Result<()> {
    if data.cols != model.config().n_features {
        return Err(ModelError::Schema(format!(
            "model expects {} features, data has {}",
            model.config().n_features,
            data.cols
        ))
        .into());
    }
    Ok(())
}

/// Minibatch BCE training with early stopping on validation loss; returns
/// the best-validation snapshot.
pub fn train_supervised(
    model: MambaTabModel,
    train: &EncodedMatrix,
    val: &EncodedMatrix,
    cfg: &TrainConfig,
) -> Result<(MambaTabModel, TrainReport)> {
    if model.config().head != HeadKind::Classification {
        return Err(TrainError::Config("supervised training needs a classification head".into()));
    }
    check_width(&model, train)?;
    check_width(&model, val)?;
    fit(model, Task::Classify { train, val }, cfg, "supervised")
}

/// Test-set evaluation of a classification model.
pub fn evaluate(model: &MambaTabModel, test: &EncodedMatrix, seed: u64) -> Result<EvalResult> {
    check_width(model, test)?;
    let logits = predict_rows(model, &matrix_tensor(test)?)?;
    Ok(metrics::evaluate(logits.data(), &test.labels, seed)?)
}

/// Train/val data for one incremental stage.
#[derive(Clone, Debug)]
pub struct Stage {
    pub train: EncodedMatrix,
    pub val: EncodedMatrix,
}

/// Builds the three stages of a feature-incremental run from full
/// train/val matrices. Stage `k` sees the columns of cumulative set `k`;
/// with `partition_rows`, each stage also gets its own disjoint third of the
/// rows.
pub fn incremental_stages(
    train: &EncodedMatrix,
    val: &EncodedMatrix,
    plan: &crate::tabular::FeatureSubsetPlan,
    partition_rows: bool,
) -> Result<Vec<Stage>> {
    if plan.n_features() != train.cols || plan.n_features() != val.cols {
        return Err(TrainError::Config(format!(
            "plan covers {} features, data has {}",
            plan.n_features(),
            train.cols
        )));
    }
    let chunk = |m: &EncodedMatrix, k: usize| -> EncodedMatrix {
        if !partition_rows {
            return m.clone();
        }
        let rows: Vec<usize> = (0..m.rows).filter(|i| i % 3 == k).collect();
        m.select_rows(&rows)
    };
    Ok((0..3)
        .map(|k| {
            let cols = plan.cumulative(k);
            Stage {
                train: chunk(train, k).select_columns(&cols),
                val: chunk(val, k).select_columns(&cols),
            }
        })
        .collect())
}

/// Stage 1 trains `model` from scratch; each later stage widens the
/// embedding with [`MambaTabModel::transfer_weights`] and keeps training
/// with a fresh optimiser. Every stage's columns must extend the previous
/// stage's as a prefix.
pub fn train_incremental(
    model: MambaTabModel,
    stages: &[Stage],
    cfg: &TrainConfig,
) -> Result<(MambaTabModel, Vec<TrainReport>)> {
    let Some(first) = stages.first() else {
        return Err(TrainError::Config("no stages".into()));
    };
    for w in stages.windows(2) {
        let (prev, next) = (&w[0].train.column_names, &w[1].train.column_names);
        if !next.starts_with(prev) || next.len() <= prev.len() {
            return Err(TrainError::Config(
                "each stage must append new columns after the previous stage's".into(),
            ));
        }
    }
    for s in stages {
        if s.val.column_names != s.train.column_names {
            return Err(TrainError::Config("stage train/val columns differ".into()));
        }
    }
    check_width(&model, &first.train)?;

    let mut model = model;
    let mut reports = Vec::with_capacity(stages.len());
    for (k, stage) in stages.iter().enumerate() {
        if k > 0 {
            let old_n = model.config().n_features;
            let mapping: Vec<usize> = (0..old_n).collect();
            model = model.transfer_weights(stage.train.cols, &mapping)?;
        }
        let stage_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(k as u64),
            ..cfg.clone()
        };
        let (best, mut report) = fit(
            model,
            Task::Classify {
                train: &stage.train,
                val: &stage.val,
            },
            &stage_cfg,
            &format!("incremental_stage_{}", k + 1),
        )?;
        report.param_count = best.count_parameters();
        reports.push(report);
        model = best;
    }
    Ok((model, reports))
}

/// Self-supervised pretraining: each row has `floor(n/2)` random features
/// zeroed and the model (with a reconstruction head) is trained to
/// reproduce the clean row under an L2 loss. Labels are never read.
pub fn pretrain_ssl(
    model: MambaTabModel,
    train: &EncodedMatrix,
    val: &EncodedMatrix,
    cfg: &TrainConfig,
) -> Result<(MambaTabModel, TrainReport)> {
    if model.config().head != HeadKind::Reconstruction {
        return Err(TrainError::Config("pretraining needs a reconstruction head".into()));
    }
    check_width(&model, train)?;
    check_width(&model, val)?;
    let train_x = matrix_tensor(train)?;
    let val_x = matrix_tensor(val)?;
    // fixed validation corruption so the monitored loss is comparable across epochs
    let val_input = corrupt(&val_x, &mut stream(cfg.seed, VAL_MASK_STREAM));
    fit(
        model,
        Task::Reconstruct {
            train: &train_x,
            val: &val_x,
            val_input,
        },
        cfg,
        "ssl_pretrain",
    )
}

/// Swaps in a fresh classification head (seeded by `head_seed`) and trains
/// every weight with [`train_supervised`].
pub fn finetune_after_ssl(
    pretrained: &MambaTabModel,
    train: &EncodedMatrix,
    val: &EncodedMatrix,
    cfg: &TrainConfig,
    head_seed: u64,
) -> Result<(MambaTabModel, TrainReport)> {
    let model = pretrained.swap_head(HeadKind::Classification, head_seed);
    let (best, mut report) = train_supervised(model, train, val, cfg)?;
    report.regime = "ssl_finetune".into();
    Ok((best, report))
}
