//! Run configuration as flat `key = value` text.
//!
//! Every hyperparameter has an explicit key. Blank lines and `#` comments are
//! ignored; unknown keys are errors. [`RunConfig::to_text`] writes keys in
//! sorted order, so the fingerprint of an effective config is stable.

use std::fmt::Write as _;
use std::path::Path;

use qg_core::decode::DecodeConfig;
use qg_core::decoder::FirstTokenMode;
use qg_core::model::ModelConfig;
use qg_core::training::{OptimizerKind, TrainConfig};
use qg_core::{Error, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_path: String,
    pub dev_path: String,
    pub pretrained_path: String,
    pub vocab_size: usize,
    pub max_source_len: usize,
    pub word_dim: usize,
    pub feat_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub ff_dim: usize,
    pub use_answer_hidden_states: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub eval_beam_size: usize,
    /// Step-1 decoder input during teacher forcing.
    pub train_first_token: FirstTokenMode,
    /// When false, step 1 always reads BOS in training and in default decoding.
    pub replace_bos: bool,
    pub decode_mode: FirstTokenMode,
    pub beam_size: usize,
    pub max_len: usize,
    pub average_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let d = DecodeConfig::default();
        RunConfig {
            train_path: String::new(),
            dev_path: String::new(),
            pretrained_path: String::new(),
            vocab_size: 20000,
            max_source_len: 100,
            word_dim: 64,
            feat_dim: 8,
            hidden_dim: 64,
            num_layers: 2,
            ff_dim: 64,
            use_answer_hidden_states: true,
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            learning_rate: t.learning_rate,
            clip_norm: t.clip_norm,
            seed: t.seed,
            eval_every: t.eval_every,
            eval_beam_size: t.eval_decode.beam_size,
            train_first_token: t.first_token,
            replace_bos: true,
            decode_mode: FirstTokenMode::Predicted,
            beam_size: d.beam_size,
            max_len: d.max_len,
            average_k: 5,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 25] = [
        "average_k",
        "batch_size",
        "beam_size",
        "clip_norm",
        "decode_mode",
        "dev_path",
        "epochs",
        "eval_beam_size",
        "eval_every",
        "feat_dim",
        "ff_dim",
        "hidden_dim",
        "learning_rate",
        "max_len",
        "max_source_len",
        "num_layers",
        "optimizer",
        "pretrained_path",
        "replace_bos",
        "seed",
        "train_first_token",
        "train_path",
        "use_answer_hidden_states",
        "vocab_size",
        "word_dim",
    ];

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "average_k" => self.average_k.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "beam_size" => self.beam_size.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "decode_mode" => self.decode_mode.name().into(),
            "dev_path" => self.dev_path.clone(),
            "epochs" => self.epochs.to_string(),
            "eval_beam_size" => self.eval_beam_size.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "feat_dim" => self.feat_dim.to_string(),
            "ff_dim" => self.ff_dim.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "max_len" => self.max_len.to_string(),
            "max_source_len" => self.max_source_len.to_string(),
            "num_layers" => self.num_layers.to_string(),
            "optimizer" => self.optimizer.name().into(),
            "pretrained_path" => self.pretrained_path.clone(),
            "replace_bos" => self.replace_bos.to_string(),
            "seed" => self.seed.to_string(),
            "train_first_token" => self.train_first_token.name().into(),
            "train_path" => self.train_path.clone(),
            "use_answer_hidden_states" => self.use_answer_hidden_states.to_string(),
            "vocab_size" => self.vocab_size.to_string(),
            "word_dim" => self.word_dim.to_string(),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "average_k" => self.average_k = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "beam_size" => self.beam_size = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "decode_mode" => self.decode_mode = v.parse()?,
            "dev_path" => self.dev_path = v.into(),
            "epochs" => self.epochs = parse(key, v)?,
            "eval_beam_size" => self.eval_beam_size = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "feat_dim" => self.feat_dim = parse(key, v)?,
            "ff_dim" => self.ff_dim = parse(key, v)?,
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "max_source_len" => self.max_source_len = parse(key, v)?,
            "num_layers" => self.num_layers = parse(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "pretrained_path" => self.pretrained_path = v.into(),
            "replace_bos" => self.replace_bos = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "train_first_token" => self.train_first_token = v.parse()?,
            "train_path" => self.train_path = v.into(),
            "use_answer_hidden_states" => self.use_answer_hidden_states = parse(key, v)?,
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "word_dim" => self.word_dim = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        let mut c = RunConfig::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("listed key"));
        }
        out
    }

    /// Hex SHA-256 of [`Self::to_text`].
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            word_dim: self.word_dim,
            feat_dim: self.feat_dim,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            ff_dim: self.ff_dim,
            vocab_size: 0,
            pos_size: 0,
            ner_size: 0,
            use_answer_hidden_states: self.use_answer_hidden_states,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            seed: self.seed,
            eval_every: self.eval_every,
            first_token: if self.replace_bos {
                self.train_first_token
            } else {
                FirstTokenMode::PlainBos
            },
            eval_decode: DecodeConfig {
                mode: self.decode(),
                beam_size: self.eval_beam_size,
                max_len: self.max_len,
            },
        }
    }

    /// Default decoding mode after the `replace_bos` ablation is applied.
    pub fn decode(&self) -> FirstTokenMode {
        if self.replace_bos {
            self.decode_mode
        } else {
            FirstTokenMode::PlainBos
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train().validate()?;
        if self.max_source_len == 0 || self.average_k == 0 {
            return Err(Error::Config(
                "max_source_len and average_k must be positive".into(),
            ));
        }
        if self.beam_size == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "beam_size and max_len must be positive".into(),
            ));
        }
        Ok(())
    }
}
