//! Checks a Monte-Carlo REINFORCE estimate against the exact policy gradient
//! obtained by enumerating every tree.
//!
//! cargo run --release --example policy_gradient

use artree::params::ParamId;
use artree::train::{exact_policy_gradient, monte_carlo_policy_gradient};
use artree::tree::TreeNode;
use artree::vocab::{build_vocab, compute_tfidf, tokenize};
use artree::{ArTree, Config};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tokens = tokenize("a truly great film");
    let corpus = [tokens.clone()];
    let vocab = build_vocab(corpus.iter().map(Vec::as_slice), 1)?;
    let tfidf = compute_tfidf(corpus.iter().map(Vec::as_slice));
    let config = Config {
        dim_word: 6,
        dim_hidden: 4,
        ..Config::default()
    };
    let model = ArTree::new(config, vocab, tfidf, None, &mut ChaCha8Rng::seed_from_u64(3))?;

    // Reward trees rooted at "great".
    let reward = |t: &TreeNode| if t.index == 2 { 1.0 } else { -1.0 };
    let ids: Vec<ParamId> = model.scorer.param_ids().to_vec();
    let exact = exact_policy_gradient(&model, &tokens, reward)?.flatten(&model.store, &ids);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mc = monte_carlo_policy_gradient(&model, &tokens, reward, &ids, 50_000, &mut rng)?;

    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| exact[b].abs().total_cmp(&exact[a].abs()));
    println!("{:>6} {:>12} {:>12} {:>10}", "coord", "exact", "sampled", "z");
    for &j in order.iter().take(8) {
        let z = (mc.mean[j] - exact[j]) / mc.std_error[j];
        println!("{j:>6} {:>12.6} {:>12.6} {z:>10.2}", exact[j], mc.mean[j]);
    }
    let worst = exact
        .iter()
        .zip(&mc.mean)
        .zip(&mc.std_error)
        .filter(|(_, se)| **se > 0.0)
        .map(|((e, m), se)| (e - m).abs() / se)
        .fold(0.0, f64::max);
    println!("max |z| over {} scorer coordinates: {worst:.2}", exact.len());
    Ok(())
}
