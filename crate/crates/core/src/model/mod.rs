//! The MambaTab network: embedding learner, layer normalization, ReLU,
//! residual Mamba blocks and a linear head.

pub mod checkpoint;

pub use checkpoint::{load, save, FORMAT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{uniform, BoundParams, ParamId, ParamStore};
use crate::ssm::{mamba_block_forward, BlockDims, InputDiscretization, MambaBlockParams};
use crate::tabular::EncodedMatrix;
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid column mapping: {0}")]
    Mapping(String),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// One logit per row.
    #[default]
    Classification,
    /// One output per input feature.
    Reconstruction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_features: usize,
    pub embed_dim: usize,
    pub state_size: usize,
    pub expand: usize,
    pub d_conv: usize,
    pub n_blocks: usize,
    pub seq_len: usize,
    pub head: HeadKind,
    pub use_layer_norm: bool,
    #[serde(default)]
    pub discretization: InputDiscretization,
}

impl ModelConfig {
    pub fn new(n_features: usize) -> Self {
        Self {
            n_features,
            embed_dim: 32,
            state_size: 32,
            expand: 2,
            d_conv: 4,
            n_blocks: 1,
            seq_len: 1,
            head: HeadKind::Classification,
            use_layer_norm: true,
            discretization: InputDiscretization::Euler,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("n_features", self.n_features),
            ("embed_dim", self.embed_dim),
            ("state_size", self.state_size),
            ("expand", self.expand),
            ("d_conv", self.d_conv),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if self.seq_len != 1 {
            return Err(ModelError::Config("only seq_len = 1 is supported".into()));
        }
        Ok(())
    }

    pub fn block_dims(&self) -> BlockDims {
        BlockDims {
            d_model: self.embed_dim,
            expand: self.expand,
            d_state: self.state_size,
            d_conv: self.d_conv,
        }
    }

    pub fn head_out(&self) -> usize {
        match self.head {
            HeadKind::Classification => 1,
            HeadKind::Reconstruction => self.n_features,
        }
    }

    /// Closed-form trainable scalar count for this configuration.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let embed = self.n_features * d + d;
        let ln = if self.use_layer_norm { 2 * d } else { 0 };
        let head = self.seq_len * d * self.head_out() + self.head_out();
        embed + ln + self.n_blocks * self.block_dims().param_count() + head
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerNormParams {
    gamma: ParamId,
    beta: ParamId,
}

/// MambaTab parameters and their layout inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct MambaTabModel {
    config: ModelConfig,
    store: ParamStore,
    embed_w: ParamId,
    embed_b: ParamId,
    ln: Option<LayerNormParams>,
    blocks: Vec<MambaBlockParams>,
    head_w: ParamId,
    head_b: ParamId,
}

impl PartialEq for MambaTabModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.store == other.store
    }
}

fn head_tensors(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> (Tensor, Tensor) {
    let bound = 1.0 / (in_dim as f64).sqrt();
    (uniform(rng, [in_dim, out_dim], bound), uniform(rng, [out_dim], bound))
}

impl MambaTabModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_rng(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let (n, d) = (config.n_features, config.embed_dim);
        let mut store = ParamStore::new();
        let bound = 1.0 / (n as f64).sqrt();
        let embed_w = store.insert("embed.weight", uniform(rng, [n, d], bound));
        let embed_b = store.insert("embed.bias", uniform(rng, [d], bound));
        let ln = config.use_layer_norm.then(|| LayerNormParams {
            gamma: store.insert("ln.gamma", Tensor::full([d], 1.0)),
            beta: store.insert("ln.beta", Tensor::zeros([d])),
        });
        let blocks = (0..config.n_blocks)
            .map(|i| MambaBlockParams::init(&mut store, &format!("blocks.{i}"), config.block_dims(), rng))
            .collect();
        let (hw, hb) = head_tensors(rng, config.seq_len * d, config.head_out());
        let head_w = store.insert("head.weight", hw);
        let head_b = store.insert("head.bias", hb);
        Ok(Self {
            config,
            store,
            embed_w,
            embed_b,
            ln,
            blocks,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn blocks(&self) -> &[MambaBlockParams] {
        &self.blocks
    }

    pub fn embed_weight(&self) -> ParamId {
        self.embed_w
    }

    pub fn head_ids(&self) -> [ParamId; 2] {
        [self.head_w, self.head_b]
    }

    /// Everything except the embedding learner.
    pub fn non_embedding_ids(&self) -> Vec<ParamId> {
        self.store
            .iter()
            .map(|(id, _, _)| id)
            .filter(|&id| id != self.embed_w && id != self.embed_b)
            .collect()
    }

    /// Everything except the head.
    pub fn body_ids(&self) -> Vec<ParamId> {
        self.store
            .iter()
            .map(|(id, _, _)| id)
            .filter(|&id| id != self.head_w && id != self.head_b)
            .collect()
    }

    pub fn count_parameters(&self) -> usize {
        self.store.numel()
    }

    /// Records the forward pass on `tape` for input rows `x[B, n_features]`.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.config.n_features {
            return Err(ModelError::Schema(format!(
                "model expects [batch, {}] inputs, got {:?}",
                self.config.n_features, shape
            )));
        }
        let (batch, d) = (shape[0], self.config.embed_dim);
        let mut h = tape.linear(x, bound.var(self.embed_w), Some(bound.var(self.embed_b)))?;
        if let Some(ln) = &self.ln {
            h = tape.layer_norm(h, bound.var(ln.gamma), bound.var(ln.beta), LAYER_NORM_EPS)?;
        }
        let h = tape.relu(h);
        let mut h = tape.reshape(h, vec![batch, self.config.seq_len, d])?;
        for block in &self.blocks {
            let out = mamba_block_forward(tape, bound, block, h, self.config.discretization)?;
            h = tape.add(out, h)?;
        }
        let flat = tape.reshape(h, vec![batch, self.config.seq_len * d])?;
        Ok(tape.linear(flat, bound.var(self.head_w), Some(bound.var(self.head_b)))?)
    }

    /// Forward pass without gradient bookkeeping beyond the tape itself.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &bound, xv)?;
        tape.check_finite()?;
        Ok(tape.value(y).clone())
    }

    /// Raw logits (classification) or reconstructions, in row order.
    pub fn predict_matrix(&self, data: &EncodedMatrix) -> Result<Tensor> {
        self.predict(&matrix_tensor(data)?)
    }

    /// New model for a larger feature set: `column_mapping[i]` is the new
    /// position of old feature `i`. Retained embedding rows are copied, new
    /// rows start at zero; all other tensors are copied verbatim.
    pub fn transfer_weights(&self, new_n_features: usize, column_mapping: &[usize]) -> Result<Self> {
        if column_mapping.len() != self.config.n_features {
            return Err(ModelError::Mapping(format!(
                "{} entries for {} old features",
                column_mapping.len(),
                self.config.n_features
            )));
        }
        let mut used = vec![false; new_n_features];
        for &j in column_mapping {
            if j >= new_n_features {
                return Err(ModelError::Mapping(format!("target {j} out of range for {new_n_features} features")));
            }
            if std::mem::replace(&mut used[j], true) {
                return Err(ModelError::Mapping(format!("target {j} used twice")));
            }
        }
        if self.config.head == HeadKind::Reconstruction && new_n_features != self.config.n_features {
            return Err(ModelError::Config("cannot widen a reconstruction head".into()));
        }
        let config = ModelConfig {
            n_features: new_n_features,
            ..self.config.clone()
        };
        let mut new = self.clone();
        new.config = config;
        let d = self.config.embed_dim;
        let old_w = self.store.get(self.embed_w).data();
        let mut w = Tensor::zeros([new_n_features, d]);
        for (i, &j) in column_mapping.iter().enumerate() {
            w.data_mut()[j * d..(j + 1) * d].copy_from_slice(&old_w[i * d..(i + 1) * d]);
        }
        new.store.set(self.embed_w, w);
        Ok(new)
    }

    /// Replaces the head with a freshly initialised one of `kind`; the body
    /// is untouched.
    pub fn swap_head(&self, kind: HeadKind, seed: u64) -> Self {
        let mut new = self.clone();
        new.config.head = kind;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, b) = head_tensors(&mut rng, new.config.seq_len * new.config.embed_dim, new.config.head_out());
        new.store.set(new.head_w, w);
        new.store.set(new.head_b, b);
        new
    }
}

/// `[rows, cols]` tensor view of an encoded matrix.
pub fn matrix_tensor(data: &EncodedMatrix) -> Result<Tensor> {
    Ok(Tensor::new([data.rows, data.cols], data.values.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(n_rows: usize, n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = uniform(&mut rng, [n_rows, n], 0.5);
        t.data_mut().iter_mut().for_each(|v| *v += 0.5);
        t
    }

    fn zero_out_proj(model: &mut MambaTabModel, from: usize) {
        let blocks = model.blocks.clone();
        for b in &blocks[from..] {
            for id in [b.out_proj_w, b.out_proj_b] {
                let shape = model.store.get(id).shape().to_vec();
                model.store.set(id, Tensor::zeros(shape));
            }
        }
    }

    #[test]
    fn default_param_count_for_twenty_features() {
        let m = MambaTabModel::new(ModelConfig::new(20), 0).unwrap();
        assert_eq!(m.count_parameters(), m.config().param_count());
        // embed 672 + ln 64 + block 13152 + head 33
        assert_eq!(m.count_parameters(), 13_921);
    }

    #[test]
    fn residual_identity_when_blocks_are_silent() {
        let cfg = ModelConfig {
            n_blocks: 3,
            ..ModelConfig::new(5)
        };
        let mut m = MambaTabModel::new(cfg, 1).unwrap();
        zero_out_proj(&mut m, 0);
        let x = random_input(4, 5, 2);
        let got = m.predict(&x).unwrap();

        // head(relu(ln(embed(x)))) by hand
        let p = m.params();
        let (ew, eb) = (p.get(m.embed_w).data(), p.get(m.embed_b).data());
        let ln = m.ln.as_ref().unwrap();
        let (g, b) = (p.get(ln.gamma).data(), p.get(ln.beta).data());
        let (hw, hb) = (p.get(m.head_w).data(), p.get(m.head_b).data());
        for r in 0..4 {
            let row = &x.data()[r * 5..(r + 1) * 5];
            let e: Vec<f64> = (0..32).map(|c| eb[c] + (0..5).map(|k| row[k] * ew[k * 32 + c]).sum::<f64>()).collect();
            let mu = e.iter().sum::<f64>() / 32.0;
            let var = e.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 32.0;
            let h: Vec<f64> = (0..32)
                .map(|c| (g[c] * (e[c] - mu) / (var + LAYER_NORM_EPS).sqrt() + b[c]).max(0.0))
                .collect();
            let logit = hb[0] + (0..32).map(|c| h[c] * hw[c]).sum::<f64>();
            assert!((got.data()[r] - logit).abs() < 1e-12);
        }
    }

    #[test]
    fn stacked_blocks_telescope() {
        let cfg1 = ModelConfig::new(6);
        let cfg3 = ModelConfig { n_blocks: 3, ..cfg1.clone() };
        let m1 = MambaTabModel::new(cfg1, 5).unwrap();
        let mut m3 = MambaTabModel::new(cfg3, 99).unwrap();
        // share everything but blocks 2 and 3, which go silent
        for (_, name, t) in m1.params().iter() {
            let id = m3.params().find(name).unwrap();
            m3.params_mut().set(id, t.clone());
        }
        zero_out_proj(&mut m3, 1);
        let x = random_input(3, 6, 0);
        assert_eq!(m1.predict(&x).unwrap(), m3.predict(&x).unwrap());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = MambaTabModel::new(ModelConfig::new(4), 0).unwrap();
        assert!(matches!(m.predict(&Tensor::zeros([2, 5])), Err(ModelError::Schema(_))));
    }

    #[test]
    fn no_layer_norm_drops_its_params() {
        let cfg = ModelConfig {
            use_layer_norm: false,
            ..ModelConfig::new(4)
        };
        let m = MambaTabModel::new(cfg.clone(), 0).unwrap();
        assert!(m.params().find("ln.gamma").is_none());
        assert_eq!(m.count_parameters(), ModelConfig::new(4).param_count() - 64);
        // embed -> relu directly
        let mut tape = Tape::new();
        let bound = m.params().bind(&mut tape);
        let x = tape.constant(random_input(2, 4, 3));
        m.forward(&mut tape, &bound, x).unwrap();
        assert!(tape.len() > 0);
    }

    #[test]
    fn transfer_weights_contract() {
        let m = MambaTabModel::new(ModelConfig::new(3), 4).unwrap();
        let same = m.transfer_weights(3, &[0, 1, 2]).unwrap();
        assert_eq!(same, m);

        let big = m.transfer_weights(5, &[0, 1, 2]).unwrap();
        assert_eq!(big.config().n_features, 5);
        for id in m.non_embedding_ids() {
            assert_eq!(m.params().get(id), big.params().get(id));
        }
        let w = big.params().get(big.embed_weight()).data();
        assert_eq!(&w[..96], m.params().get(m.embed_weight()).data());
        assert!(w[96..].iter().all(|&v| v == 0.0));

        // old inputs padded with zeros see the old model
        let x = random_input(4, 3, 1);
        let mut padded = Tensor::zeros([4, 5]);
        for r in 0..4 {
            padded.data_mut()[r * 5..r * 5 + 3].copy_from_slice(&x.data()[r * 3..r * 3 + 3]);
        }
        assert_eq!(m.predict(&x).unwrap(), big.predict(&padded).unwrap());

        assert!(matches!(m.transfer_weights(5, &[0, 0, 1]), Err(ModelError::Mapping(_))));
        assert!(matches!(m.transfer_weights(5, &[0, 1, 5]), Err(ModelError::Mapping(_))));
        assert!(matches!(m.transfer_weights(5, &[0, 1]), Err(ModelError::Mapping(_))));
    }

    #[test]
    fn swap_head_contract() {
        let cfg = ModelConfig {
            head: HeadKind::Reconstruction,
            ..ModelConfig::new(7)
        };
        let m = MambaTabModel::new(cfg, 0).unwrap();
        assert_eq!(m.params().get(m.head_w).shape(), &[32, 7]);
        let c = m.swap_head(HeadKind::Classification, 1);
        assert_eq!(c.params().get(c.head_w).shape(), &[32, 1]);
        for id in m.body_ids() {
            assert_eq!(m.params().get(id), c.params().get(id));
        }
        assert_eq!(m.count_parameters() - c.count_parameters(), 32 * 6 + 6);
        assert_eq!(c.count_parameters(), c.config().param_count());
    }

    #[test]
    fn config_rejects_zero_sizes() {
        let cfg = ModelConfig {
            state_size: 0,
            ..ModelConfig::new(3)
        };
        assert!(matches!(MambaTabModel::new(cfg, 0), Err(ModelError::Config(_))));
    }
}
