//! Finite-difference check of the three-input Tree-LSTM over a small tree.
//!
//! cargo run --example gradcheck

use artree::autodiff::{Shape, Tensor};
use artree::encoder::Encoder;
use artree::params::{finite_difference_params, ParamId, ParamStore};
use artree::tree::greedy_tree;
use artree::tree_lstm::Composer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (dx, dh, n) = (3, 2, 4);
    let mut store = ParamStore::new();
    let encoder = Encoder::new(&mut store, dx, dh, &mut rng);
    let composer = Composer::new(&mut store, 2 * dh, &mut rng);
    let words: Vec<ParamId> = (0..n)
        .map(|i| {
            let x = Tensor::from_fn(Shape::vector(dx), |_| rng.gen_range(-2.0..2.0));
            store.add(format!("x{i}"), x, true)
        })
        .collect();
    let tree = greedy_tree(&[0.3, 1.1, -0.2, 0.7]).unwrap();
    let ids: Vec<ParamId> = store.ids().collect();
    let err = finite_difference_params(
        &store,
        &ids,
        |s| {
            let xs: Vec<_> = words.iter().map(|&w| s.param(w)).collect();
            let enc = encoder.encode(s, &xs).unwrap();
            let root = composer.embed_tree(s, &tree, &enc).unwrap();
            s.tape.sum(root.h).unwrap()
        },
        1e-5,
    );
    println!("{} parameters checked, max relative error {err:.2e}", store.total_len());
}
