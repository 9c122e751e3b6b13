//! Run configuration: a flat `key = value` text format.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown keys are
//! rejected. Every key has a default; see [`Config::KEYS`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::vocab::{DatasetFormat, LabelSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{origin}:{line}: {message}")]
    Syntax {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Single,
    Pair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    Micro,
    Macro,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adadelta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScorerKind {
    Mlp,
    Tfidf,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    _ => Err(format!("expected one of: {}", [$($text),+].join(", "))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text,)+ })
            }
        }
    };
}

keyword_enum!(TaskKind { Single => "single", Pair => "pair" });
keyword_enum!(Normalization { Micro => "micro", Macro => "macro" });
keyword_enum!(OptimizerKind { Sgd => "sgd", Adam => "adam", Adadelta => "adadelta" });
keyword_enum!(ScorerKind { Mlp => "mlp", Tfidf => "tfidf" });

/// All hyperparameters and file locations for a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub task: TaskKind,
    /// Label names; empty means integer labels `0..num_classes`.
    pub labels: Vec<String>,
    pub num_classes: usize,
    /// `D_x`
    pub dim_word: usize,
    /// `D_h`
    pub dim_hidden: usize,
    /// `D_c`
    pub dim_classifier: usize,
    /// Weight of the tree loss.
    pub alpha: f64,
    /// Weight of the squared L2 norm of trainable parameters.
    pub lambda: f64,
    /// Trees sampled per sentence (`M`).
    pub samples: usize,
    pub batch_size: usize,
    pub normalization: Normalization,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub finetune: bool,
    pub dropout: f64,
    pub batch_norm: bool,
    pub scorer: ScorerKind,
    /// Let the tree loss update the encoder as well as the scorer.
    pub policy_through_encoder: bool,
    pub min_freq: usize,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            task: TaskKind::Single,
            labels: Vec::new(),
            num_classes: 2,
            dim_word: 16,
            dim_hidden: 16,
            dim_classifier: 32,
            alpha: 0.1,
            lambda: 1e-5,
            samples: 3,
            batch_size: 16,
            normalization: Normalization::Macro,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            epochs: 10,
            seed: 1,
            finetune: true,
            dropout: 0.0,
            batch_norm: false,
            scorer: ScorerKind::Mlp,
            policy_through_encoder: true,
            min_freq: 1,
            train: None,
            valid: None,
            test: None,
            pretrained: None,
            checkpoint: None,
            output_dir: None,
        }
    }
}

/// Fixed, informational keys: accepted only with their single value.
const TFIDF_VARIANT: &str = "smoothed-idf-corpus-tf";
const MICRO_NORMALIZER: &str = "total-nodes";

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn path_value(value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl Config {
    /// Documented keys in dump order.
    pub const KEYS: &'static [(&'static str, &'static str)] = &[
        ("task", "single | pair"),
        ("labels", "comma-separated label names; empty for integer labels"),
        ("num_classes", "class count when labels is empty"),
        ("dim_word", "word vector width D_x"),
        ("dim_hidden", "encoder hidden width D_h per direction"),
        ("dim_classifier", "classifier hidden width D_c"),
        ("alpha", "tree loss weight"),
        ("lambda", "L2 weight"),
        ("samples", "trees sampled per sentence M"),
        ("batch_size", "sentences per mini-batch B"),
        ("normalization", "micro | macro"),
        ("optimizer", "sgd | adam | adadelta"),
        ("learning_rate", "optimizer step size"),
        ("epochs", "training epochs"),
        ("seed", "64-bit seed for all randomness"),
        ("finetune", "update word vectors"),
        ("dropout", "dropout rate (0 disables)"),
        ("batch_norm", "batch normalization around the classifier"),
        ("scorer", "mlp | tfidf"),
        ("policy_through_encoder", "tree loss also trains the encoder"),
        ("min_freq", "minimum token count for the vocabulary"),
        ("tfidf_variant", "fixed: smoothed-idf-corpus-tf"),
        ("micro_normalizer", "fixed: total-nodes"),
        ("train", "training data path"),
        ("valid", "validation data path"),
        ("test", "test data path"),
        ("pretrained", "word vector text file"),
        ("checkpoint", "checkpoint path"),
        ("output_dir", "directory for metrics and checkpoints"),
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "task" => self.task = parse(key, value)?,
            "labels" => {
                self.labels = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect();
                if !self.labels.is_empty() {
                    self.num_classes = self.labels.len();
                }
            }
            "num_classes" => self.num_classes = parse(key, value)?,
            "dim_word" => self.dim_word = parse(key, value)?,
            "dim_hidden" => self.dim_hidden = parse(key, value)?,
            "dim_classifier" => self.dim_classifier = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "normalization" => self.normalization = parse(key, value)?,
            "optimizer" => self.optimizer = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "finetune" => self.finetune = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "batch_norm" => self.batch_norm = parse(key, value)?,
            "scorer" => self.scorer = parse(key, value)?,
            "policy_through_encoder" => self.policy_through_encoder = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            "tfidf_variant" | "micro_normalizer" => {
                let fixed = if key == "tfidf_variant" { TFIDF_VARIANT } else { MICRO_NORMALIZER };
                if value != fixed {
                    return Err(ConfigError::InvalidValue {
                        key: key.to_string(),
                        value: value.to_string(),
                        reason: format!("only {fixed} is supported"),
                    });
                }
            }
            "train" => self.train = path_value(value),
            "valid" => self.valid = path_value(value),
            "test" => self.test = path_value(value),
            "pretrained" => self.pretrained = path_value(value),
            "checkpoint" => self.checkpoint = path_value(value),
            "output_dir" => self.output_dir = path_value(value),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "task" => self.task.to_string(),
            "labels" => self.labels.join(","),
            "num_classes" => self.num_classes.to_string(),
            "dim_word" => self.dim_word.to_string(),
            "dim_hidden" => self.dim_hidden.to_string(),
            "dim_classifier" => self.dim_classifier.to_string(),
            // `{:?}` on f64 prints the shortest round-tripping form.
            "alpha" => format!("{:?}", self.alpha),
            "lambda" => format!("{:?}", self.lambda),
            "samples" => self.samples.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "normalization" => self.normalization.to_string(),
            "optimizer" => self.optimizer.to_string(),
            "learning_rate" => format!("{:?}", self.learning_rate),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "finetune" => self.finetune.to_string(),
            "dropout" => format!("{:?}", self.dropout),
            "batch_norm" => self.batch_norm.to_string(),
            "scorer" => self.scorer.to_string(),
            "policy_through_encoder" => self.policy_through_encoder.to_string(),
            "min_freq" => self.min_freq.to_string(),
            "tfidf_variant" => TFIDF_VARIANT.to_string(),
            "micro_normalizer" => MICRO_NORMALIZER.to_string(),
            "train" => show_path(&self.train),
            "valid" => show_path(&self.valid),
            "test" => show_path(&self.test),
            "pretrained" => show_path(&self.pretrained),
            "checkpoint" => show_path(&self.checkpoint),
            "output_dir" => show_path(&self.output_dir),
            _ => return None,
        })
    }

    /// Parses config text; `origin` names the source in error messages.
    pub fn parse_str(text: &str, origin: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    origin: origin.to_string(),
                    line: n + 1,
                    message: format!("expected key = value, got {line:?}"),
                });
            };
            cfg.set(key.trim(), value).map_err(|e| ConfigError::Syntax {
                origin: origin.to_string(),
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Syntax {
            origin: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        Config::parse_str(&text, &path.display().to_string())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("override {assignment:?} is not key=value")))?;
        self.set(key.trim(), value)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.samples == 0 {
            return fail("samples must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.alpha >= 0.0) || !(self.lambda >= 0.0) {
            return fail("alpha and lambda must be non-negative");
        }
        if self.num_classes < 2 {
            return fail("need at least 2 classes");
        }
        if self.dim_word == 0 || self.dim_hidden == 0 || self.dim_classifier == 0 {
            return fail("dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        if !(self.learning_rate >= 0.0) {
            return fail("learning_rate must be non-negative");
        }
        if self.min_freq == 0 {
            return fail("min_freq must be at least 1");
        }
        Ok(())
    }

    /// Effective configuration in the same text format [`Config::parse_str`] reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, doc) in Self::KEYS {
            out.push_str(&format!("# {doc}\n{key} = {}\n", self.get(key).unwrap_or_default()));
        }
        out
    }

    pub fn label_set(&self) -> LabelSet {
        if self.labels.is_empty() {
            LabelSet::numeric(self.num_classes)
        } else {
            LabelSet::named(self.labels.clone())
        }
    }

    pub fn dataset_format(&self) -> DatasetFormat {
        match self.task {
            TaskKind::Single => DatasetFormat::Single,
            TaskKind::Pair => DatasetFormat::Pair,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_loss_weights() {
        let c = Config::default();
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.lambda, 1e-5);
    }

    #[test]
    fn dump_round_trips() {
        let mut c = Config::default();
        c.set("labels", "neg, pos").unwrap();
        c.set("alpha", "0.3").unwrap();
        c.set("learning_rate", "0.1").unwrap();
        c.set("train", "data/train.jsonl").unwrap();
        c.set("normalization", "micro").unwrap();
        let again = Config::parse_str(&c.to_text(), "dump").unwrap();
        assert_eq!(again, c);
        assert_eq!(again.num_classes, 2);
    }

    #[test]
    fn unknown_key_and_bad_values() {
        let err = Config::parse_str("alpha = 0.1\nbogus = 3\n", "cfg").unwrap_err();
        match err {
            ConfigError::Syntax { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
        assert!(Config::parse_str("samples = many", "cfg").is_err());
        assert!(Config::parse_str("samples = 0", "cfg").is_err());
        assert!(Config::parse_str("alpha = -1", "cfg").is_err());
        assert!(Config::parse_str("tfidf_variant = raw", "cfg").is_err());
        assert!(Config::parse_str("no equals sign", "cfg").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = Config::default();
        c.apply_override("alpha=0").unwrap();
        assert_eq!(c.alpha, 0.0);
        assert!(c.to_text().contains("alpha = 0.0"));
        assert!(c.apply_override("alpha").is_err());
    }
}
