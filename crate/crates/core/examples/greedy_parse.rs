//! Builds greedy trees from hand-written word scores and prints them as
//! S-expressions and Graphviz DOT.
//!
//! cargo run --example greedy_parse

use artree::render::{to_dot, to_sexpr};
use artree::tree::greedy_tree;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tokens = ["the", "movie", "is", "interesting", "to", "me"];
    let scores = [0.1, 0.8, 0.2, 1.5, 0.3, 0.6];
    let tree = greedy_tree(&scores)?;
    println!("{}", to_sexpr(&tree, &tokens)?);
    println!("depths {:?}", tree.depths(tokens.len()));

    // Equal scores: the leftmost word of every span wins, giving a right chain.
    let flat = greedy_tree(&[1.0; 4])?;
    println!("{}", to_sexpr(&flat, &["a", "b", "c", "d"])?);

    print!("{}", to_dot(&tree, &tokens)?);
    Ok(())
}
