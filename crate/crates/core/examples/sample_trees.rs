//! Enumerates every tree over a short sentence with its probability under the
//! policy, then compares against sampling frequencies.
//!
//! cargo run --release --example sample_trees

use artree::render::to_sexpr;
use artree::tree::{enumerate_with_probabilities, greedy_tree, sample_structure};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tokens = ["not", "a", "good", "film"];
    let scores = [1.2, -0.5, 0.9, 0.1];
    let exact = enumerate_with_probabilities(&scores)?;
    let draws = 100_000;
    let mut counts = vec![0usize; exact.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..draws {
        let t = sample_structure(&scores, &mut rng);
        let k = exact.iter().position(|(e, _)| *e == t).expect("enumerated");
        counts[k] += 1;
    }
    println!("{:<40} {:>8} {:>8}", "tree", "exact", "sampled");
    for ((tree, p), c) in exact.iter().zip(&counts) {
        println!("{:<40} {:>8.4} {:>8.4}", to_sexpr(tree, &tokens)?, p, *c as f64 / draws as f64);
    }
    let total: f64 = exact.iter().map(|(_, p)| p).sum();
    println!("{} trees, total probability {total:.12}", exact.len());
    println!("greedy: {}", to_sexpr(&greedy_tree(&scores)?, &tokens)?);
    Ok(())
}
