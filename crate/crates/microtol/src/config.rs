//! Run configuration: a line-based `section.key = value` grammar.
//!
//! `#` starts a comment. Unknown keys are hard errors so typos cannot
//! silently fall back to defaults. The canonical rendering (every
//! effective key, sorted) is hashed into every artifact.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::models::{Objective, TrainConfig};
use crate::synth::SynthConfig;
use crate::taxonomy::Rank;
use crate::texttypes::TextType;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`")]
    BadSyntax { line: usize },
    #[error("line {line}: invalid value {value:?} for {key}: {message}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        message: String,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Everything a pipeline run needs, resolved against defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub eval_seeds: u32,
    pub eval_k: Vec<usize>,
    pub split_n_species: usize,
    pub split_min_images: usize,
    pub split_k_test: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            eval_seeds: 5,
            eval_k: vec![1, 5],
            split_n_species: 64,
            split_min_images: 20,
            split_k_test: 10,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RunConfig::parse_str(&text)
    }

    /// Parses overrides on top of the defaults.
    pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::BadSyntax { line: line_no })?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if !seen.insert(key.clone()) {
                return Err(ConfigError::DuplicateKey { line: line_no, key });
            }
            cfg.apply(line_no, &key, &value)?;
        }
        // The global seed feeds both generators unless overridden later by
        // the CLI --seed flag.
        cfg.synth.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    /// Applies a `--seed` override after parsing.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    fn apply(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |message: &str| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            message: message.to_string(),
        };
        macro_rules! parse {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|e| bad(&e.to_string()))?
            };
        }
        match key {
            "seed" => self.seed = parse!(u64),
            "synth.branching" => self.synth.branching = parse_seven_usize(value).map_err(|m| bad(&m))?,
            "synth.images_per_species" => self.synth.images_per_species = parse!(usize),
            "synth.feature_dim" => {
                self.synth.feature_dim = parse!(usize);
                self.train.dims.feature_dim = self.synth.feature_dim;
            }
            "synth.rank_weights" => self.synth.rank_weights = parse_seven_f32(value).map_err(|m| bad(&m))?,
            "synth.noise_sigma" => self.synth.noise_sigma = parse!(f32),
            "synth.common_name_share" => self.synth.common_name_share = parse!(f64),
            "synth.species_cap" => self.synth.species_cap = parse!(u64),
            "train.objective" => {
                self.train.objective =
                    Objective::from_id(value).ok_or_else(|| bad("expected clip|ce|hce"))?
            }
            "train.text_type" => {
                self.train.text_type = TextType::from_id(value).ok_or_else(|| {
                    bad("expected common|scientific|taxonomic|sci-com|tax-com|mixture")
                })?
            }
            "train.batch_size" => self.train.batch_size = parse!(usize),
            "train.steps" => self.train.steps = parse!(u32),
            "train.warmup_steps" => self.train.warmup_steps = parse!(u32),
            "train.max_lr" => self.train.max_lr = parse!(f32),
            "train.weight_decay" => self.train.adamw.weight_decay = parse!(f32),
            "train.beta1" => self.train.adamw.beta1 = parse!(f32),
            "train.beta2" => self.train.adamw.beta2 = parse!(f32),
            "train.eps" => self.train.adamw.eps = parse!(f32),
            "train.embed_dim" => self.train.dims.embed_dim = parse!(usize),
            "train.image_hidden" => self.train.dims.image_hidden = parse!(usize),
            "train.text_width" => self.train.dims.text_width = parse!(usize),
            "train.text_layers" => self.train.dims.text_layers = parse!(usize),
            "train.text_heads" => self.train.dims.text_heads = parse!(usize),
            "train.max_seq_len" => self.train.dims.max_seq_len = parse!(usize),
            "train.log_interval" => self.train.log_interval = parse!(u32),
            "train.val_interval" => self.train.val_interval = parse!(u32),
            "train.val_fraction" => self.train.val_fraction = parse!(f64),
            "eval.seeds" => self.eval_seeds = parse!(u32),
            "eval.k" => {
                self.eval_k = value
                    .split(',')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(&e.to_string()))?
            }
            "split.n_species" => self.split_n_species = parse!(usize),
            "split.min_images" => self.split_min_images = parse!(usize),
            "split.k_test" => self.split_k_test = parse!(usize),
            "paths.out_dir" => self.out_dir = PathBuf::from(value),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Canonical rendering: every effective key in sorted order. Two
    /// configs with equal canonical text behave identically.
    pub fn canonical_text(&self) -> String {
        let join7 = |xs: &[f32]| {
            xs.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut pairs: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            (
                "synth.branching".into(),
                self.synth
                    .branching
                    .iter()
                    .map(|b| b.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "synth.images_per_species".into(),
                self.synth.images_per_species.to_string(),
            ),
            ("synth.feature_dim".into(), self.synth.feature_dim.to_string()),
            ("synth.rank_weights".into(), join7(&self.synth.rank_weights)),
            ("synth.noise_sigma".into(), format!("{}", self.synth.noise_sigma)),
            (
                "synth.common_name_share".into(),
                format!("{}", self.synth.common_name_share),
            ),
            ("synth.species_cap".into(), self.synth.species_cap.to_string()),
            ("train.objective".into(), self.train.objective.id().into()),
            ("train.text_type".into(), self.train.text_type.id().into()),
            ("train.batch_size".into(), self.train.batch_size.to_string()),
            ("train.steps".into(), self.train.steps.to_string()),
            ("train.warmup_steps".into(), self.train.warmup_steps.to_string()),
            ("train.max_lr".into(), format!("{}", self.train.max_lr)),
            (
                "train.weight_decay".into(),
                format!("{}", self.train.adamw.weight_decay),
            ),
            ("train.beta1".into(), format!("{}", self.train.adamw.beta1)),
            ("train.beta2".into(), format!("{}", self.train.adamw.beta2)),
            ("train.eps".into(), format!("{}", self.train.adamw.eps)),
            ("train.embed_dim".into(), self.train.dims.embed_dim.to_string()),
            ("train.image_hidden".into(), self.train.dims.image_hidden.to_string()),
            ("train.text_width".into(), self.train.dims.text_width.to_string()),
            ("train.text_layers".into(), self.train.dims.text_layers.to_string()),
            ("train.text_heads".into(), self.train.dims.text_heads.to_string()),
            ("train.max_seq_len".into(), self.train.dims.max_seq_len.to_string()),
            ("train.log_interval".into(), self.train.log_interval.to_string()),
            ("train.val_interval".into(), self.train.val_interval.to_string()),
            ("train.val_fraction".into(), format!("{}", self.train.val_fraction)),
            ("eval.seeds".into(), self.eval_seeds.to_string()),
            (
                "eval.k".into(),
                self.eval_k
                    .iter()
                    .map(|k| k.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("split.n_species".into(), self.split_n_species.to_string()),
            ("split.min_images".into(), self.split_min_images.to_string()),
            ("split.k_test".into(), self.split_k_test.to_string()),
            ("paths.out_dir".into(), self.out_dir.display().to_string()),
        ];
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// First 16 hex digits of the canonical text's SHA-256.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Hash for artifacts that are produced from raw inputs rather than a
/// [`RunConfig`]: first 16 hex digits of SHA-256 over the given parts.
pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn parse_seven_usize(value: &str) -> Result<[usize; Rank::COUNT], String> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<usize>| format!("expected 7 comma-separated values, found {}", v.len()))
}

fn parse_seven_f32(value: &str) -> Result<[f32; Rank::COUNT], String> {
    let parts: Vec<f32> = value
        .split(',')
        .map(|p| p.trim().parse::<f32>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f32>| format!("expected 7 comma-separated values, found {}", v.len()))
}
