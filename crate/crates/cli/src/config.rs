//! Run specification: key-value config files and command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mambatab::model::{HeadKind, ModelConfig};
use mambatab::ssm::InputDiscretization;
use mambatab::tabular::parse_key_values;
use mambatab::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    Supervised,
    Incremental,
    Ssl,
}

impl FromStr for Regime {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Regime::Supervised),
            "incremental" => Ok(Regime::Incremental),
            "ssl" => Ok(Regime::Ssl),
            other => Err(CliError::config(format!(
                "unknown regime `{other}` (expected supervised, incremental or ssl)"
            ))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Supervised => "supervised",
            Regime::Incremental => "incremental",
            Regime::Ssl => "ssl",
        })
    }
}

/// Architecture knobs, independent of the dataset width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub embed_dim: usize,
    pub state_size: usize,
    pub expand: usize,
    pub d_conv: usize,
    pub m_blocks: usize,
    pub layer_norm: bool,
    pub discretization: InputDiscretization,
}

impl Default for Hyper {
    fn default() -> Self {
        let d = ModelConfig::new(1);
        Self {
            embed_dim: d.embed_dim,
            state_size: d.state_size,
            expand: d.expand,
            d_conv: d.d_conv,
            m_blocks: d.n_blocks,
            layer_norm: d.use_layer_norm,
            discretization: d.discretization,
        }
    }
}

impl Hyper {
    pub fn model_config(&self, n_features: usize, head: HeadKind) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            state_size: self.state_size,
            expand: self.expand,
            d_conv: self.d_conv,
            n_blocks: self.m_blocks,
            use_layer_norm: self.layer_norm,
            discretization: self.discretization,
            head,
            ..ModelConfig::new(n_features)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Not part of the recorded spec, so runs written to different
    /// directories stay byte-identical.
    #[serde(skip)]
    pub out: PathBuf,
    pub regime: Regime,
    pub seeds: Vec<u64>,
    pub model: Hyper,
    /// `seed` is replaced per run.
    pub train: TrainConfig,
    /// Incremental regime: give each stage its own third of the rows.
    pub partition_rows: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            data: None,
            schema: None,
            out: PathBuf::from("runs"),
            regime: Regime::Supervised,
            seeds: (0..10).collect(),
            model: Hyper::default(),
            train: TrainConfig::default(),
            partition_rows: true,
        }
    }
}

/// `0,3,5` or `0-9`, or a mix of both.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || CliError::config(format!("bad seed list `{s}`"));
    let mut out: Vec<u64> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    let mut sorted = out.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if out.is_empty() || sorted.len() != out.len() {
        return Err(CliError::config(format!("seed list `{s}` is empty or has duplicates")));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

pub fn parse_discretization(value: &str) -> Result<InputDiscretization> {
    match value {
        "euler" => Ok(InputDiscretization::Euler),
        "exact_zoh" | "exact-zoh" => Ok(InputDiscretization::ExactZoh),
        _ => Err(CliError::config(format!("unknown discretization `{value}` (euler or exact_zoh)"))),
    }
}

impl RunSpec {
    /// Applies `key = value` text on top of `self`. Relative paths resolve
    /// against `base`.
    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<()> {
        for (key, value) in parse_key_values(text)? {
            let path = || base.join(&value);
            match key.replace('-', "_").as_str() {
                "data" => self.data = Some(path()),
                "schema" => self.schema = Some(path()),
                "out" => self.out = path(),
                "regime" => self.regime = value.parse()?,
                "seeds" => self.seeds = parse_seeds(&value)?,
                "embed_dim" => self.model.embed_dim = parse(&key, &value)?,
                "state_size" => self.model.state_size = parse(&key, &value)?,
                "expand" => self.model.expand = parse(&key, &value)?,
                "d_conv" => self.model.d_conv = parse(&key, &value)?,
                "m_blocks" => self.model.m_blocks = parse(&key, &value)?,
                "layer_norm" => self.model.layer_norm = parse_bool(&key, &value)?,
                "discretization" => self.model.discretization = parse_discretization(&value)?,
                "max_epochs" => self.train.max_epochs = parse(&key, &value)?,
                "patience" => self.train.patience = parse(&key, &value)?,
                "lr" => self.train.lr = parse(&key, &value)?,
                "lr_min" => self.train.lr_min = parse(&key, &value)?,
                "beta1" => self.train.beta1 = parse(&key, &value)?,
                "beta2" => self.train.beta2 = parse(&key, &value)?,
                "eps" => self.train.eps = parse(&key, &value)?,
                "batch_size" => self.train.batch_size = parse(&key, &value)?,
                "partition_rows" => self.partition_rows = parse_bool(&key, &value)?,
                _ => return Err(CliError::config(format!("unknown config key `{key}`"))),
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut spec = RunSpec::default();
        spec.apply_text(&text, path.parent().unwrap_or(Path::new(".")))?;
        Ok(spec)
    }

    /// Checks everything that can be checked before touching the data.
    pub fn validate(&self) -> Result<()> {
        let data = self.data.as_ref().ok_or_else(|| CliError::config("no dataset given (--data or `data =`)"))?;
        if !data.is_file() {
            return Err(CliError::config(format!("dataset {} is not readable", data.display())));
        }
        match &self.schema {
            None => return Err(CliError::config("no schema given (--schema or `schema =`)")),
            Some(p) if !p.is_file() => return Err(CliError::config(format!("schema {} is not readable", p.display()))),
            _ => {}
        }
        if self.seeds.is_empty() {
            return Err(CliError::config("no seeds"));
        }
        self.model.model_config(1, HeadKind::Classification).validate()?;
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds() {
        assert_eq!(parse_seeds("0-3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seeds("5, 1,2-3").unwrap(), vec![5, 1, 2, 3]);
        assert!(parse_seeds("1,1").is_err());
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("3-1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn file_values() {
        let mut s = RunSpec::default();
        let text = "data = d.csv\nregime = ssl\nembed-dim = 16\nlayer_norm = false\nseeds = 1-2\nlr = 0.001\n";
        s.apply_text(text, Path::new("/base")).unwrap();
        assert_eq!(s.data.as_deref(), Some(Path::new("/base/d.csv")));
        assert_eq!((s.regime, s.model.embed_dim, s.model.layer_norm), (Regime::Ssl, 16, false));
        assert_eq!(s.seeds, vec![1, 2]);
        assert_eq!(s.train.lr, 1e-3);
        assert!(s.apply_text("bogus = 1", Path::new(".")).is_err());
        assert!(s.apply_text("expand = two", Path::new(".")).is_err());
    }
}
