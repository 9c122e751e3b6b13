//! Trains on the synthetic keyword task and reports where the keyword ends
//! up in the greedy trees.
//!
//! cargo run --release --example train_keyword -- [key=value ...]
//!
//! Arguments are configuration overrides, e.g. `epochs=30 normalization=micro`.

use std::time::Instant;

use artree::report::{depth_report, format_report, TokenGroup};
use artree::synthetic::{keyword_dataset, KeywordTask, KEYWORD};
use artree::train::{evaluate, train_epoch, TrainState};
use artree::Config;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = Config {
        epochs: 30,
        ..Config::default()
    };
    for arg in std::env::args().skip(1) {
        config.apply_override(&arg)?;
    }
    config.validate()?;

    let task = KeywordTask::default();
    let data = keyword_dataset(&task);
    let mut state = TrainState::init(config.clone(), &data)?;
    let start = Instant::now();
    for _ in 0..config.epochs {
        let m = train_epoch(&data, &mut state)?;
        let acc = evaluate(&state.model, &data)?;
        println!(
            "epoch {:2}  loss {:.4}  sampled acc {:.3}  greedy acc {:.3}  {:.1}s",
            m.epoch,
            m.loss,
            m.accuracy,
            acc,
            start.elapsed().as_secs_f64()
        );
    }
    let sentences: Vec<Vec<String>> = data.iter().map(|e| e.sentences()[0].to_vec()).collect();
    let groups = [TokenGroup::new("keyword", [KEYWORD]), TokenGroup::new("distractors", task.distractors())];
    print!("{}", format_report(&depth_report(&state.model, &sentences, &groups)?));
    Ok(())
}
