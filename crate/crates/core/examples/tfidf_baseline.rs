//! Trains the tf-idf baseline, whose trees come from fixed corpus statistics,
//! and compares it with the learned scorer on the keyword task.
//!
//! cargo run --release --example tfidf_baseline

use artree::render::to_sexpr;
use artree::synthetic::{keyword_dataset, KeywordTask};
use artree::train::{evaluate, train_epoch, TrainState};
use artree::{Config, Normalization, OptimizerKind, ScorerKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = keyword_dataset(&KeywordTask::default());
    for scorer in [ScorerKind::Tfidf, ScorerKind::Mlp] {
        let config = Config {
            scorer,
            optimizer: OptimizerKind::Adadelta,
            learning_rate: 1.0,
            normalization: Normalization::Micro,
            epochs: 10,
            ..Config::default()
        };
        let mut state = TrainState::init(config.clone(), &data)?;
        for _ in 0..config.epochs {
            train_epoch(&data, &mut state)?;
        }
        let tokens = data[1].sentences()[0].to_vec();
        let a = state.model.analyze(&tokens)?;
        println!("{scorer:?}: greedy accuracy {:.3}", evaluate(&state.model, &data)?);
        println!("  {}", to_sexpr(&a.tree, &tokens)?);
    }
    Ok(())
}
