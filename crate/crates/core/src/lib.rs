//! Attentive recursive trees (AR-Trees) for sentence embedding.
//!
//! A sentence is encoded by a bidirectional LSTM, every word receives a
//! learned importance score, and a binary tree is built top-down by placing
//! the highest-scoring word of each span at the span's root. A three-input
//! Tree-LSTM then composes the sentence embedding bottom-up. The discrete
//! tree-building policy is trained with REINFORCE using span-length weighted
//! rewards and micro or macro (per-word) normalization.
//!
//! Module map:
//!
//! * [`autodiff`]: tape-based reverse-mode differentiation
//! * [`vocab`]: vocabulary, embeddings, tf-idf and dataset reading
//! * [`encoder`]: bidirectional LSTM
//! * [`scorer`]: word importance scores
//! * [`tree`]: greedy and sampled tree construction
//! * [`tree_lstm`]: composition unit and bottom-up embedding
//! * [`heads`]: classifiers and losses
//! * [`train`]: rewards, policy-gradient surrogates, training loop
//! * [`checkpoint`]: binary checkpoint container
//! * [`cli`]: command-line driver and tree rendering

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod heads;
pub mod model;
pub mod optim;
pub mod params;
pub mod render;
pub mod report;
pub mod scorer;
pub mod synthetic;
pub mod train;
pub mod tree;
pub mod tree_lstm;
pub mod vocab;

pub use autodiff::{Shape, Tape, Tensor, Var};
pub use config::{Config, Normalization, OptimizerKind, ScorerKind, TaskKind};
pub use model::ArTree;
pub use tree::TreeNode;
