//! Trains briefly, saves a checkpoint, reloads it and prints trees, word
//! scores and a depth report for new sentences.
//!
//! cargo run --release --example checkpoint_parse

use artree::checkpoint::{load_checkpoint, save_checkpoint};
use artree::cli::{cmd_parse, cmd_score};
use artree::report::{depth_report, format_report, TokenGroup};
use artree::synthetic::{keyword_dataset, KeywordTask, KEYWORD};
use artree::train::{evaluate, train_epoch, TrainState};
use artree::vocab::tokenize;
use artree::{Config, Normalization, OptimizerKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = keyword_dataset(&KeywordTask::default());
    let config = Config {
        optimizer: OptimizerKind::Adadelta,
        learning_rate: 1.0,
        normalization: Normalization::Micro,
        ..Config::default()
    };
    let mut state = TrainState::init(config, &data)?;
    for _ in 0..8 {
        train_epoch(&data, &mut state)?;
    }
    let dir = std::env::temp_dir().join("artree-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&path, &state.model, &state.rng, state.epoch)?;

    let restored = load_checkpoint(&path)?;
    println!("reloaded epoch {} from {}", restored.epoch, path.display());
    println!("accuracy before {:.3}, after {:.3}", evaluate(&state.model, &data)?, evaluate(&restored.model, &data)?);

    let sentences = vec![tokenize("w3 w17 kw w8 w40"), tokenize("w1 w2 w3 w4")];
    for (sexpr, _) in cmd_parse(&restored.model, &sentences)? {
        println!("{sexpr}");
    }
    print!("{}", cmd_score(&restored.model, &sentences[..1])?);
    print!("{}", cmd_parse(&restored.model, &sentences[..1])?[0].1);
    let groups = [TokenGroup::new("keyword", [KEYWORD]), TokenGroup::all("all")];
    print!("{}", format_report(&depth_report(&restored.model, &sentences, &groups)?));
    Ok(())
}
