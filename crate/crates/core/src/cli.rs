//! Command-line driver: `train`, `eval`, `parse`, `score` and `depth-report`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 I/O error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use crate::config::{Config, ConfigError};
use crate::model::{ArTree, ModelError};
use crate::render::{to_dot, to_sexpr, RenderError};
use crate::report::{depth_report, format_report, TokenGroup};
use crate::train::{evaluate, train_epoch, TrainState};
use crate::vocab::{read_dataset, tokenize, DataError, LabeledExample};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("input line {0}: empty sentence")]
    EmptySentence(usize),
    #[error("invalid token group {0:?}; expected name=tok1,tok2 or name=*")]
    Group(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Group(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Checkpoint(CheckpointError::Io { .. }) => EXIT_IO,
            _ => EXIT_DATA,
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "artree", version, about = "Attentive recursive tree sentence models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TreeFormat {
    Sexpr,
    Dot,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes metrics, the effective config and the best checkpoint.
    Train {
        /// Configuration file (`key = value` lines).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a configuration key; repeatable.
        #[arg(long = "set", alias = "override", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Greedy-tree accuracy of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Print greedy trees of sentences.
    Parse {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One sentence per line; stdin when absent and no sentences are given.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sexpr")]
        format: TreeFormat,
        sentences: Vec<String>,
    },
    /// Print `token<TAB>score<TAB>depth` for every word.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        sentences: Vec<String>,
    },
    /// Greedy-tree depth statistics per token group.
    DepthReport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `name=tok1,tok2` or `name=*`; repeatable.
        #[arg(long = "group", value_name = "NAME=TOKENS", required = true)]
        groups: Vec<String>,
    },
}

/// Per-epoch record of the metrics file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub valid_acc: Option<f64>,
}

impl EpochRecord {
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "valid_acc": self.valid_acc,
        })
        .to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
    pub best_epoch: usize,
    pub test_acc: Option<f64>,
}

/// Reads the config file (if any) and applies overrides in order.
pub fn resolve_config(path: Option<&Path>, overrides: &[String]) -> Result<Config, CliError> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_error(p))?;
            Config::parse_str(&text, &p.display().to_string())?
        }
        None => Config::default(),
    };
    for o in overrides {
        config.apply_override(o)?;
    }
    config.validate()?;
    Ok(config)
}

fn load_data(path: &Path, config: &Config) -> Result<Vec<LabeledExample>, CliError> {
    Ok(read_dataset(path, config.dataset_format(), &config.label_set())?)
}

/// Trains for `config.epochs` epochs, keeping the checkpoint with the best
/// validation accuracy (the last epoch when there is no validation set).
pub fn cmd_train(config: &Config, log: &mut dyn Write) -> Result<TrainSummary, CliError> {
    let train_path = config
        .train
        .as_deref()
        .ok_or_else(|| ConfigError::Invalid("train path is not set".into()))?;
    let train = load_data(train_path, config)?;
    let valid = config.valid.as_deref().map(|p| load_data(p, config)).transpose()?;
    let test = config.test.as_deref().map(|p| load_data(p, config)).transpose()?;

    let out_dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("artree-run"));
    fs::create_dir_all(&out_dir).map_err(io_error(&out_dir))?;
    let config_path = out_dir.join("effective_config.txt");
    fs::write(&config_path, config.to_text()).map_err(io_error(&config_path))?;
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = fs::File::create(&metrics_path).map_err(io_error(&metrics_path))?;
    let ckpt_path = config.checkpoint.clone().unwrap_or_else(|| out_dir.join("best.ckpt"));

    let mut state = TrainState::init(config.clone(), &train)?;
    let mut records = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    for _ in 0..config.epochs {
        let m = train_epoch(&train, &mut state)?;
        let valid_acc = valid.as_deref().map(|v| evaluate(&state.model, v)).transpose()?;
        let record = EpochRecord {
            epoch: m.epoch,
            train_loss: m.loss,
            train_acc: m.accuracy,
            valid_acc,
        };
        writeln!(metrics, "{}", record.to_json()).map_err(io_error(&metrics_path))?;
        writeln!(log, "{}", record.to_json()).map_err(io_error(Path::new("<log>")))?;
        records.push(record);
        let key = valid_acc.unwrap_or(f64::INFINITY);
        if best.is_none_or(|(b, _)| key > b || valid_acc.is_none()) {
            best = Some((key, m.epoch));
            save_checkpoint(&ckpt_path, &state.model, &state.rng, state.epoch)?;
        }
    }
    let best_epoch = best.map_or(0, |(_, e)| e);
    if best.is_none() {
        save_checkpoint(&ckpt_path, &state.model, &state.rng, state.epoch)?;
    }
    let test_acc = match &test {
        Some(t) => Some(evaluate(&load_checkpoint(&ckpt_path)?.model, t)?),
        None => None,
    };
    if let Some(acc) = test_acc {
        writeln!(log, "test_acc\t{acc}").map_err(io_error(Path::new("<log>")))?;
    }
    Ok(TrainSummary {
        records,
        checkpoint: ckpt_path,
        best_epoch,
        test_acc,
    })
}

pub fn cmd_eval(checkpoint: &Path, data: &Path) -> Result<f64, CliError> {
    let Checkpoint { model, .. } = load_checkpoint(checkpoint)?;
    let examples = load_data(data, &model.config)?;
    Ok(evaluate(&model, &examples)?)
}

/// Tokenized, non-empty input sentences.
pub fn read_sentences(input: Option<&Path>, inline: &[String]) -> Result<Vec<Vec<String>>, CliError> {
    let lines: Vec<String> = if !inline.is_empty() {
        inline.to_vec()
    } else if let Some(path) = input {
        fs::read_to_string(path).map_err(io_error(path))?.lines().map(str::to_string).collect()
    } else {
        io::stdin()
            .lock()
            .lines()
            .collect::<Result<_, _>>()
            .map_err(io_error(Path::new("<stdin>")))?
    };
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let tokens = tokenize(l);
            if tokens.is_empty() {
                Err(CliError::EmptySentence(i + 1))
            } else {
                Ok(tokens)
            }
        })
        .collect()
}

/// S-expression and DOT renderings of each sentence's greedy tree.
pub fn cmd_parse(model: &ArTree, sentences: &[Vec<String>]) -> Result<Vec<(String, String)>, CliError> {
    sentences
        .iter()
        .map(|tokens| {
            let a = model.analyze(tokens)?;
            Ok((to_sexpr(&a.tree, tokens)?, to_dot(&a.tree, tokens)?))
        })
        .collect()
}

/// `token<TAB>score<TAB>depth` lines, sentences separated by a blank line.
pub fn cmd_score(model: &ArTree, sentences: &[Vec<String>]) -> Result<String, CliError> {
    let mut out = String::new();
    for (k, tokens) in sentences.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let a = model.analyze(tokens)?;
        for ((tok, score), depth) in tokens.iter().zip(&a.scores).zip(&a.depths) {
            out.push_str(&format!("{tok}\t{score:.6}\t{depth}\n"));
        }
    }
    Ok(out)
}

pub fn cmd_depth_report(model: &ArTree, data: &[LabeledExample], groups: &[TokenGroup]) -> Result<String, CliError> {
    let sentences: Vec<Vec<String>> = data.iter().flat_map(|e| e.sentences().into_iter().map(<[String]>::to_vec)).collect();
    Ok(format_report(&depth_report(model, &sentences, groups)?))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let stdout = Path::new("<stdout>");
    match cli.command {
        Command::Train { config, set } => {
            let config = resolve_config(config.as_deref(), &set)?;
            let summary = cmd_train(&config, out)?;
            writeln!(out, "checkpoint\t{}", summary.checkpoint.display()).map_err(io_error(stdout))?;
        }
        Command::Eval { checkpoint, data } => {
            let acc = cmd_eval(&checkpoint, &data)?;
            writeln!(out, "accuracy\t{acc}").map_err(io_error(stdout))?;
        }
        Command::Parse {
            checkpoint,
            input,
            format,
            sentences,
        } => {
            let sentences = read_sentences(input.as_deref(), &sentences)?;
            let model = load_checkpoint(&checkpoint)?.model;
            for (sexpr, dot) in cmd_parse(&model, &sentences)? {
                if format != TreeFormat::Dot {
                    writeln!(out, "{sexpr}").map_err(io_error(stdout))?;
                }
                if format != TreeFormat::Sexpr {
                    write!(out, "{dot}").map_err(io_error(stdout))?;
                }
            }
        }
        Command::Score {
            checkpoint,
            input,
            sentences,
        } => {
            let sentences = read_sentences(input.as_deref(), &sentences)?;
            let model = load_checkpoint(&checkpoint)?.model;
            write!(out, "{}", cmd_score(&model, &sentences)?).map_err(io_error(stdout))?;
        }
        Command::DepthReport { checkpoint, data, groups } => {
            let groups = groups
                .iter()
                .map(|g| TokenGroup::parse(g).ok_or_else(|| CliError::Group(g.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            let model = load_checkpoint(&checkpoint)?.model;
            let examples = load_data(&data, &model.config)?;
            write!(out, "{}", cmd_depth_report(&model, &examples, &groups)?).map_err(io_error(stdout))?;
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
/// Results go to `out`, errors to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
