//! Micro versus macro normalization of the tree loss on a batch where one
//! word is chosen nine times and another once.
//!
//! cargo run --example normalization

use artree::autodiff::{Tape, Tensor};
use artree::train::{tree_loss_macro, tree_loss_micro, RewardAssignment};
use artree::tree::{PolicyStep, Span};
use artree::Normalization;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut tape = Tape::new();
    let mut steps = Vec::new();
    for k in 0..10 {
        let log_prob = tape.leaf(Tensor::scalar(-0.7));
        steps.push(PolicyStep {
            span: Span::new(k, k + 1),
            chosen: k,
            chosen_token: if k < 9 { 1 } else { 2 },
            log_prob,
        });
    }
    let rewards = RewardAssignment { rewards: vec![1.0; 10] };
    for normalization in [Normalization::Micro, Normalization::Macro] {
        tape.zero_grads();
        let loss = match normalization {
            Normalization::Micro => tree_loss_micro(&mut tape, &[(&steps, &rewards)])?,
            Normalization::Macro => tree_loss_macro(&mut tape, &[(&steps, &rewards)])?,
        };
        tape.backward(loss)?;
        let mass: Vec<f64> = steps.iter().map(|s| -tape.grad(s.log_prob)[0]).collect();
        let frequent: f64 = mass[..9].iter().sum();
        println!(
            "{normalization:?}: loss {:.4}, gradient mass frequent word {frequent:.3}, rare word {:.3}",
            tape.scalar(loss),
            mass[9]
        );
    }
    Ok(())
}
