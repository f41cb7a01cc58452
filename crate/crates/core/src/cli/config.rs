use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ContextMode;
use crate::decoding::BeamConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::model::{ModelConfig, TrainConfig};
use crate::qa::{QaModelConfig, QaTrainConfig};
use crate::relevance::RelevanceConfig;

/// Everything a run needs. Serialised as TOML; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Train and decode with an all-zero relevance bias.
    pub ablate_relevance: bool,
    pub data: DataConfig,
    pub model: ModelSection,
    pub qa: QaSection,
    pub relevance: RelevanceConfig,
    pub beam: BeamConfig,
    pub train: Schedule,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            ablate_relevance: false,
            data: DataConfig::default(),
            model: ModelSection::default(),
            qa: QaSection::default(),
            relevance: RelevanceConfig::default(),
            beam: BeamConfig::default(),
            train: Schedule::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: PathBuf,
    pub mode: ContextMode,
    /// Defaults to 200 for supporting facts, 512 for full documents.
    pub max_source_len: Option<usize>,
    pub min_freq: usize,
    /// Existing vocabulary file; otherwise one is built from the training
    /// split into the output directory.
    pub vocab: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: PathBuf::from("data/train.json"),
            dev: None,
            test: PathBuf::from("data/test.json"),
            mode: ContextMode::SupportingFacts,
            max_source_len: None,
            min_freq: 1,
            vocab: None,
        }
    }
}

impl DataConfig {
    pub fn max_source_len(&self) -> usize {
        self.max_source_len.unwrap_or_else(|| self.mode.default_max_len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Tiny,
    BaseLike,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Profile::Tiny),
            "base_like" | "base-like" => Ok(Profile::BaseLike),
            other => Err(Error::Config(format!("unknown model profile {other:?}"))),
        }
    }
}

/// Generator shape: a named profile with optional per-field overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub profile: Profile,
    pub d_model: Option<usize>,
    pub encoder_layers: Option<usize>,
    pub decoder_layers: Option<usize>,
    pub heads: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub max_positions: Option<usize>,
    pub dropout: Option<f64>,
}

impl ModelSection {
    pub fn resolve(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        let base = match self.profile {
            Profile::Tiny => ModelConfig::tiny(vocab_size),
            Profile::BaseLike => ModelConfig::base_like(vocab_size),
        };
        ModelConfig {
            d_model: self.d_model.unwrap_or(base.d_model),
            encoder_layers: self.encoder_layers.unwrap_or(base.encoder_layers),
            decoder_layers: self.decoder_layers.unwrap_or(base.decoder_layers),
            heads: self.heads.unwrap_or(base.heads),
            ffn_dim: self.ffn_dim.unwrap_or(base.ffn_dim),
            max_positions: self.max_positions.unwrap_or(base.max_positions),
            dropout: self.dropout.unwrap_or(base.dropout),
            seed,
            ..base
        }
    }
}

/// Generator optimisation schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub accumulation: usize,
    pub lr: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            accumulation: t.accumulation,
            lr: t.lr,
        }
    }
}

impl Schedule {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            accumulation: self.accumulation,
            lr: self.lr,
            seed,
        }
    }
}

/// Span predictor shape, its schedule, and where the soft relevance comes
/// from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaSection {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Defaults to `qa.ckpt` in the output directory.
    pub checkpoint: Option<PathBuf>,
    /// Precomputed span distributions used instead of the internal model.
    pub external_spans: Option<PathBuf>,
    /// Update the span predictor through the generator loss.
    pub joint: bool,
}

impl Default for QaSection {
    fn default() -> Self {
        let m = QaModelConfig::tiny(0);
        let t = QaTrainConfig::default();
        Self {
            d_model: m.d_model,
            heads: m.heads,
            layers: m.layers,
            ffn_dim: m.ffn_dim,
            max_positions: m.max_positions,
            dropout: m.dropout,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            checkpoint: None,
            external_spans: None,
            joint: false,
        }
    }
}

impl QaSection {
    pub fn model(&self, vocab_size: usize, seed: u64) -> QaModelConfig {
        QaModelConfig {
            vocab_size,
            d_model: self.d_model,
            heads: self.heads,
            layers: self.layers,
            ffn_dim: self.ffn_dim,
            max_positions: self.max_positions,
            dropout: self.dropout,
            seed,
        }
    }

    pub fn schedule(&self, seed: u64) -> QaTrainConfig {
        QaTrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            accumulation: 1,
            lr: self.lr,
            seed,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Layers `defaults ← file ← overrides`. Each override is a dotted key
    /// and a value, see [`parse_assignment`].
    pub fn layered(file: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut tree = toml::Value::try_from(RunConfig::default()).expect("defaults serialize");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parsed: toml::Value = text
                .parse::<toml::Table>()
                .map(toml::Value::Table)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut tree, parsed);
        }
        for (key, value) in overrides {
            set_dotted(&mut tree, key, value.clone())?;
        }
        let cfg: RunConfig = tree.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.relevance.validate()?;
        self.beam.validate()?;
        self.train.with_seed(self.seed).validate()?;
        self.model.resolve(1, self.seed).validate()?;
        self.qa.model(1, self.seed).validate()?;
        if self.data.max_source_len() < 2 {
            return Err(Error::Config("max_source_len must be at least 2".into()));
        }
        let model = self.model.resolve(1, self.seed);
        if self.data.max_source_len() > model.max_positions {
            return Err(Error::Config(format!(
                "max_source_len {} exceeds the model's {} positions",
                self.data.max_source_len(),
                model.max_positions
            )));
        }
        if self.beam.max_len + 1 > model.max_positions {
            return Err(Error::Config("beam max_len exceeds the model's positions".into()));
        }
        if self.qa.epochs == 0 || self.qa.batch_size == 0 || self.qa.lr.is_nan() || self.qa.lr <= 0.0 {
            return Err(Error::Config("qa epochs, batch_size and lr must be positive".into()));
        }
        Ok(())
    }

    /// Fails unless every listed path exists.
    pub fn require_paths(&self, paths: &[&Path]) -> Result<()> {
        for p in paths {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn qa_checkpoint(&self) -> PathBuf {
        self.qa
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("qa.ckpt"))
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.data
            .vocab
            .clone()
            .unwrap_or_else(|| self.output_dir.join("vocab.json"))
    }

    /// Whether training consults the span predictor at all.
    pub fn uses_soft(&self) -> bool {
        !self.ablate_relevance && self.relevance.alpha < 1.0
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Splits `key=value`; the value is read as TOML, falling back to a plain
/// string, so `train.lr=1e-4` and `data.mode=full_document` both work.
pub fn parse_assignment(text: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got {text:?}")))?;
    Ok((key.trim().to_string(), parse_scalar(raw.trim())))
}

fn parse_scalar(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(tree: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {part} is not a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(Error::Config("empty override key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(k: &str, v: &str) -> (String, toml::Value) {
        parse_assignment(&format!("{k}={v}")).unwrap()
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!((cfg.train.epochs, cfg.train.accumulation, cfg.train.lr), (5, 4, 3e-5));
        assert_eq!(cfg.beam, BeamConfig::default());
    }

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\n[train]\nlr = 0.01\nepochs = 2\n").unwrap();
        let cfg = RunConfig::layered(Some(&path), &[kv("train.lr", "0.5"), kv("data.mode", "full_document")]).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.lr, 0.5);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.data.mode, ContextMode::FullDocument);
        assert_eq!(cfg.data.max_source_len(), 512);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::layered(None, &[kv("train.learning_rate", "1")]).is_err());
        assert!(RunConfig::layered(None, &[kv("relevance.alpha", "1.5")]).is_err());
        assert!(RunConfig::layered(None, &[kv("beam.min_len", "40")]).is_err());
        assert!(parse_assignment("train.lr").is_err());
    }
}
