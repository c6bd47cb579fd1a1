//! Resolved settings and the flat `key=value` config format.
//!
//! ```text
//! # comment
//! edge.tau = 0.5
//! provider.backend = toy
//! ```
//!
//! Keys are dotted; unknown keys are rejected. Later assignments win, so
//! command-line overrides are applied after the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::gcn::ModelShape;
use crate::graph::{EdgeParams, Symmetrize};
use crate::model::ObjectiveConfig;
use crate::objectives::DimReduction;
use crate::providers::ProviderConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    /// Users per optimizer step.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            patience: 5,
            seed: 0,
            batch_size: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub provider: ProviderConfig,
    pub edge: EdgeParams,
    pub hidden_dim: usize,
    pub depth: usize,
    pub objective: ObjectiveConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub output_dir: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            provider: ProviderConfig::default(),
            edge: EdgeParams::default(),
            hidden_dim: 64,
            depth: 2,
            objective: ObjectiveConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parameter(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Parameter(format!("invalid value {value:?} for {key}"))),
    }
}

fn optional(value: &str) -> Option<String> {
    (!value.is_empty()).then(|| value.to_owned())
}

/// Every recognised key, in snapshot order.
pub const KEYS: &[&str] = &[
    "provider.backend",
    "provider.cache_path",
    "provider.endpoint",
    "provider.timeout_secs",
    "provider.retries",
    "provider.seed",
    "provider.compute_missing",
    "encoder.model_dim",
    "encoder.key_dim",
    "encoder.groups",
    "encoder.table_size",
    "encoder.angle_base",
    "encoder.frequency_base",
    "edge.lambda_p",
    "edge.lambda_c",
    "edge.tau",
    "edge.tau_prime",
    "edge.symmetrize",
    "edge.user_node",
    "model.hidden_dim",
    "model.depth",
    "model.dropout",
    "loss.alpha",
    "loss.beta",
    "loss.gamma",
    "loss.lambda",
    "loss.tau_temp",
    "loss.neg_ratio",
    "loss.contrastive_negatives",
    "loss.class_reduction",
    "train.epochs",
    "train.lr",
    "train.patience",
    "train.seed",
    "train.batch_size",
    "split.train",
    "split.val",
    "split.test",
    "split.seed",
    "output.dir",
];

pub fn is_key(key: &str) -> bool {
    KEYS.contains(&key)
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let p = &mut self.provider;
        let e = &mut self.edge;
        let o = &mut self.objective;
        match key {
            "provider.backend" => p.backend = value.parse()?,
            "provider.cache_path" => p.cache_path = optional(value).map(PathBuf::from),
            "provider.endpoint" => p.endpoint = optional(value),
            "provider.timeout_secs" => {
                let secs: f64 = parse(key, value)?;
                p.timeout = Duration::try_from_secs_f64(secs)
                    .map_err(|_| Error::Parameter(format!("invalid timeout {value:?}")))?;
            }
            "provider.retries" => p.retries = parse(key, value)?,
            "provider.seed" => p.seed = parse(key, value)?,
            "provider.compute_missing" => p.compute_missing = parse_bool(key, value)?,
            "encoder.model_dim" => p.encoder.model_dim = parse(key, value)?,
            "encoder.key_dim" => p.encoder.key_dim = parse(key, value)?,
            "encoder.groups" => p.encoder.groups = parse(key, value)?,
            "encoder.table_size" => p.encoder.table_size = parse(key, value)?,
            "encoder.angle_base" => p.encoder.angle_base = parse(key, value)?,
            "encoder.frequency_base" => p.encoder.frequency_base = parse(key, value)?,
            "edge.lambda_p" => e.lambda_p = parse(key, value)?,
            "edge.lambda_c" => e.lambda_c = parse(key, value)?,
            "edge.tau" => e.tau = parse(key, value)?,
            "edge.tau_prime" => e.tau_prime = parse(key, value)?,
            "edge.symmetrize" => e.symmetrize = value.parse::<Symmetrize>()?,
            "edge.user_node" => e.user_node = parse_bool(key, value)?,
            "model.hidden_dim" => self.hidden_dim = parse(key, value)?,
            "model.depth" => self.depth = parse(key, value)?,
            "model.dropout" => o.dropout = parse(key, value)?,
            "loss.alpha" => o.weights.alpha = parse(key, value)?,
            "loss.beta" => o.weights.beta = parse(key, value)?,
            "loss.gamma" => o.weights.gamma = parse(key, value)?,
            "loss.lambda" => o.weights.lambda = parse(key, value)?,
            "loss.tau_temp" => o.weights.tau_temp = parse(key, value)?,
            "loss.neg_ratio" => o.neg_ratio = parse(key, value)?,
            "loss.contrastive_negatives" => o.contrastive_negatives = parse(key, value)?,
            "loss.class_reduction" => {
                o.reduction = match value {
                    "sum" => DimReduction::Sum,
                    "mean" => DimReduction::Mean,
                    _ => return Err(Error::Parameter(format!("invalid value {value:?} for {key}"))),
                }
            }
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.lr" => self.train.lr = parse(key, value)?,
            "train.patience" => self.train.patience = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "split.train" => self.split.train = parse(key, value)?,
            "split.val" => self.split.val = parse(key, value)?,
            "split.test" => self.split.test = parse(key, value)?,
            "split.seed" => self.split.seed = parse(key, value)?,
            "output.dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::Parameter(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let p = &self.provider;
        let e = &self.edge;
        let o = &self.objective;
        Some(match key {
            "provider.backend" => p.backend.as_str().to_owned(),
            "provider.cache_path" => p
                .cache_path
                .as_ref()
                .map(|c| c.display().to_string())
                .unwrap_or_default(),
            "provider.endpoint" => p.endpoint.clone().unwrap_or_default(),
            "provider.timeout_secs" => p.timeout.as_secs_f64().to_string(),
            "provider.retries" => p.retries.to_string(),
            "provider.seed" => p.seed.to_string(),
            "provider.compute_missing" => p.compute_missing.to_string(),
            "encoder.model_dim" => p.encoder.model_dim.to_string(),
            "encoder.key_dim" => p.encoder.key_dim.to_string(),
            "encoder.groups" => p.encoder.groups.to_string(),
            "encoder.table_size" => p.encoder.table_size.to_string(),
            "encoder.angle_base" => p.encoder.angle_base.to_string(),
            "encoder.frequency_base" => p.encoder.frequency_base.to_string(),
            "edge.lambda_p" => e.lambda_p.to_string(),
            "edge.lambda_c" => e.lambda_c.to_string(),
            "edge.tau" => e.tau.to_string(),
            "edge.tau_prime" => e.tau_prime.to_string(),
            "edge.symmetrize" => e.symmetrize.as_str().to_owned(),
            "edge.user_node" => e.user_node.to_string(),
            "model.hidden_dim" => self.hidden_dim.to_string(),
            "model.depth" => self.depth.to_string(),
            "model.dropout" => o.dropout.to_string(),
            "loss.alpha" => o.weights.alpha.to_string(),
            "loss.beta" => o.weights.beta.to_string(),
            "loss.gamma" => o.weights.gamma.to_string(),
            "loss.lambda" => o.weights.lambda.to_string(),
            "loss.tau_temp" => o.weights.tau_temp.to_string(),
            "loss.neg_ratio" => o.neg_ratio.to_string(),
            "loss.contrastive_negatives" => o.contrastive_negatives.to_string(),
            "loss.class_reduction" => match o.reduction {
                DimReduction::Sum => "sum".to_owned(),
                DimReduction::Mean => "mean".to_owned(),
            },
            "train.epochs" => self.train.epochs.to_string(),
            "train.lr" => self.train.lr.to_string(),
            "train.patience" => self.train.patience.to_string(),
            "train.seed" => self.train.seed.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "split.train" => self.split.train.to_string(),
            "split.val" => self.split.val.to_string(),
            "split.test" => self.split.test.to_string(),
            "split.seed" => self.split.seed.to_string(),
            "output.dir" => self.output_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Every key with its current value.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|k| ((*k).to_owned(), self.get(k).expect("listed key")))
            .collect()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut s = Settings::default();
        for (k, v) in pairs {
            s.set(k, v)?;
        }
        Ok(s)
    }

    /// Applies `key=value` lines; errors carry the line number.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, got {line:?}")))?;
            self.set(key.trim(), value)
                .map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key).expect("listed key"));
            out.push('\n');
        }
        out
    }

    pub fn model_shape(&self, input_dim: usize) -> ModelShape {
        ModelShape {
            input_dim,
            hidden_dim: self.hidden_dim,
            depth: self.depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.provider.validate()?;
        self.edge.validate()?;
        self.objective.validate()?;
        if self.depth == 0 || self.hidden_dim == 0 {
            return Err(Error::Parameter("model.depth and model.hidden_dim must be >= 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Parameter("train.batch_size must be >= 1".into()));
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(Error::Parameter("train.lr must be positive".into()));
        }
        let s = &self.split;
        let fractions = [s.train, s.val, s.test];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Parameter(format!(
                "split fractions {fractions:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}
