//! The assembled AR-Tree model: embeddings, encoder, scorer, composer and
//! classifier sharing one parameter store.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Shape, Tensor, Var};
use crate::config::{Config, ScorerKind, TaskKind};
use crate::encoder::{EncodedSentence, Encoder};
use crate::heads::{dropout, pair_features, predict, Classifier, Phase};
use crate::params::{ParamId, ParamStore, Session};
use crate::scorer::{tfidf_as_scores, Scorer};
use crate::tree::{greedy_tree, TreeError, TreeNode};
use crate::tree_lstm::Composer;
use crate::vocab::{DataError, EmbeddingTable, LabeledExample, TfidfTable, Vocabulary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("empty sentence")]
    EmptySentence,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("loss weights must be non-negative")]
    NegativeWeight,
    #[error("example does not match the configured task")]
    TaskMismatch,
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
}

/// One encoded sentence together with its word scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSentence {
    pub ids: Vec<usize>,
    pub enc: EncodedSentence,
    pub scores: Var,
}

/// Scores, greedy tree and per-word depths of one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceAnalysis {
    pub tokens: Vec<String>,
    pub scores: Vec<f64>,
    pub tree: TreeNode,
    pub depths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArTree {
    pub config: Config,
    pub store: ParamStore,
    /// `V x D_x`
    pub embedding: ParamId,
    pub encoder: Encoder,
    pub scorer: Scorer,
    pub composer: Composer,
    pub classifier: Classifier,
    pub vocab: Vocabulary,
    pub tfidf: TfidfTable,
}

impl ArTree {
    /// Initializes all parameters. `embeddings` defaults to a random table.
    pub fn new(
        config: Config,
        vocab: Vocabulary,
        tfidf: TfidfTable,
        embeddings: Option<EmbeddingTable>,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        let table = match embeddings {
            Some(t) => t,
            None => EmbeddingTable::random(vocab.len(), config.dim_word, config.finetune, rng),
        };
        if table.rows() != vocab.len() || table.dim() != config.dim_word {
            return Err(ModelError::Dimension {
                what: "embedding table",
                expected: vocab.len() * config.dim_word,
                found: table.rows() * table.dim(),
            });
        }
        let mut store = ParamStore::new();
        let embedding = store.add("embedding", table.matrix, config.finetune);
        let encoder = Encoder::new(&mut store, config.dim_word, config.dim_hidden, rng);
        let node_dim = encoder.output_dim();
        let scorer = Scorer::new(&mut store, node_dim, rng);
        if config.scorer == ScorerKind::Tfidf {
            for id in scorer.param_ids() {
                store.set_trainable(id, false);
            }
        }
        let composer = Composer::new(&mut store, node_dim, rng);
        let input_dim = match config.task {
            TaskKind::Single => node_dim,
            TaskKind::Pair => 4 * node_dim,
        };
        let classifier = Classifier::new(
            &mut store,
            input_dim,
            config.dim_classifier,
            config.label_set().num_classes(),
            config.batch_norm,
            config.dropout,
            rng,
        );
        Ok(ArTree {
            config,
            store,
            embedding,
            encoder,
            scorer,
            composer,
            classifier,
            vocab,
            tfidf,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes
    }

    /// Word vectors of `ids`, with dropout when training.
    pub fn embed_words(&self, sess: &mut Session<'_>, ids: &[usize], phase: &mut Phase<'_>) -> Result<Vec<Var>, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        let table = sess.param(self.embedding);
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let x = sess.tape.row(table, id)?;
            out.push(dropout(&mut sess.tape, x, self.config.dropout, phase)?);
        }
        Ok(out)
    }

    /// Encodes a tokenized sentence and scores its words.
    pub fn score<S: AsRef<str>>(&self, sess: &mut Session<'_>, tokens: &[S], phase: &mut Phase<'_>) -> Result<ScoredSentence, ModelError> {
        let ids = self.vocab.encode(tokens);
        let xs = self.embed_words(sess, &ids, phase)?;
        let enc = self.encoder.encode(sess, &xs)?;
        let scores = match self.config.scorer {
            ScorerKind::Tfidf => {
                let values = tfidf_as_scores(tokens, &self.tfidf)?;
                sess.tape.constant_vector(values)
            }
            ScorerKind::Mlp if self.config.policy_through_encoder => self.scorer.score_sentence(sess, &enc)?,
            ScorerKind::Mlp => {
                let cut = enc.h.iter().map(|&h| sess.tape.detach(h)).collect::<Result<Vec<_>, _>>()?;
                self.scorer.score_vectors(sess, &cut)?
            }
        };
        Ok(ScoredSentence { ids, enc, scores })
    }

    /// Root hidden state of `tree` over an encoded sentence.
    pub fn embed(&self, sess: &mut Session<'_>, tree: &TreeNode, enc: &EncodedSentence) -> Result<Var, ModelError> {
        Ok(self.composer.embed_tree(sess, tree, enc)?.h)
    }

    /// Classifier input built from one or two sentence embeddings.
    pub fn features(&self, sess: &mut Session<'_>, embeddings: &[Var]) -> Result<Var, ModelError> {
        match (self.config.task, embeddings) {
            (TaskKind::Single, &[h]) => Ok(h),
            (TaskKind::Pair, &[a, b]) => pair_features(&mut sess.tape, a, b),
            _ => Err(ModelError::TaskMismatch),
        }
    }

    /// Class log-probabilities of an example under given trees (one per sentence).
    pub fn log_probs_with_trees(&self, example: &LabeledExample, trees: &[TreeNode]) -> Result<Vec<f64>, ModelError> {
        let sentences = example.sentences();
        if sentences.len() != trees.len() {
            return Err(ModelError::TaskMismatch);
        }
        let mut sess = Session::new(&self.store);
        let mut embeddings = Vec::with_capacity(trees.len());
        for (tokens, tree) in sentences.iter().zip(trees) {
            let scored = self.score(&mut sess, tokens, &mut Phase::Eval)?;
            embeddings.push(self.embed(&mut sess, tree, &scored.enc)?);
        }
        let features = self.features(&mut sess, &embeddings)?;
        let lp = self.classifier.classify(&mut sess, features, &mut Phase::Eval)?;
        Ok(sess.tape.value(lp).to_vec())
    }

    /// Greedy trees for every sentence of an example and the predicted class.
    pub fn predict(&self, example: &LabeledExample) -> Result<(usize, Vec<TreeNode>), ModelError> {
        let mut sess = Session::new(&self.store);
        let mut embeddings = Vec::new();
        let mut trees = Vec::new();
        for tokens in example.sentences() {
            let scored = self.score(&mut sess, tokens, &mut Phase::Eval)?;
            let tree = greedy_tree(sess.tape.value(scored.scores))?;
            embeddings.push(self.embed(&mut sess, &tree, &scored.enc)?);
            trees.push(tree);
        }
        let features = self.features(&mut sess, &embeddings)?;
        let lp = self.classifier.classify(&mut sess, features, &mut Phase::Eval)?;
        Ok((predict(sess.tape.value(lp)), trees))
    }

    /// Word scores and the greedy tree of a tokenized sentence.
    pub fn analyze(&self, tokens: &[String]) -> Result<SentenceAnalysis, ModelError> {
        let mut sess = Session::new(&self.store);
        let scored = self.score(&mut sess, tokens, &mut Phase::Eval)?;
        let scores = sess.tape.value(scored.scores).to_vec();
        let tree = greedy_tree(&scores)?;
        let depths = tree.depths(tokens.len());
        Ok(SentenceAnalysis {
            tokens: tokens.to_vec(),
            scores,
            tree,
            depths,
        })
    }

    /// Overwrites parameters by name; shapes must match.
    pub fn load_params(&mut self, params: &[(String, Tensor)]) -> Result<(), ModelError> {
        for (name, tensor) in params {
            let id = self.store.find(name).ok_or_else(|| ModelError::UnknownParam(name.clone()))?;
            let expected: Shape = self.store.get(id).shape();
            if expected != tensor.shape() {
                return Err(ModelError::Dimension {
                    what: "parameter",
                    expected: expected.len(),
                    found: tensor.shape().len(),
                });
            }
            *self.store.get_mut(id) = tensor.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{build_vocab, compute_tfidf, tokenize};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(config: Config) -> ArTree {
        let corpus = [tokenize("the movie is interesting to me"), tokenize("a dull movie")];
        let vocab = build_vocab(corpus.iter().map(Vec::as_slice), 1).unwrap();
        let tfidf = compute_tfidf(corpus.iter().map(Vec::as_slice));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        ArTree::new(config, vocab, tfidf, None, &mut rng).unwrap()
    }

    #[test]
    fn analysis_is_consistent() {
        let m = model(Config::default());
        let tokens = tokenize("the movie is interesting");
        let a = m.analyze(&tokens).unwrap();
        assert_eq!(a.scores.len(), 4);
        assert_eq!(a.tree.in_order(), vec![0, 1, 2, 3]);
        assert_eq!(a.depths[a.tree.index], 0);
        assert_eq!(a.tree, greedy_tree(&a.scores).unwrap());
        assert_eq!(m.analyze(&tokens).unwrap(), a);
    }

    #[test]
    fn tfidf_scorer_uses_table() {
        let m = model(Config {
            scorer: ScorerKind::Tfidf,
            ..Config::default()
        });
        let tokens = tokenize("a dull movie unseen");
        let a = m.analyze(&tokens).unwrap();
        let expect: Vec<f64> = tokens.iter().map(|t| m.tfidf.weight(t)).collect();
        assert_eq!(a.scores, expect);
        assert!(!m.store.is_trainable(m.scorer.w1));
    }

    #[test]
    fn pair_task_features() {
        let m = model(Config {
            task: TaskKind::Pair,
            num_classes: 3,
            ..Config::default()
        });
        let ex = LabeledExample::Pair {
            premise: tokenize("the movie"),
            hypothesis: tokenize("a dull movie"),
            label: 2,
        };
        let (class, trees) = m.predict(&ex).unwrap();
        assert!(class < 3);
        assert_eq!(trees.len(), 2);
        assert_eq!(m.classifier.input_dim, 4 * 2 * m.config.dim_hidden);
        let single = LabeledExample::Single {
            tokens: tokenize("movie"),
            label: 0,
        };
        assert!(matches!(m.predict(&single), Err(ModelError::TaskMismatch)));
    }

    #[test]
    fn frozen_embeddings_are_not_trainable() {
        let m = model(Config {
            finetune: false,
            ..Config::default()
        });
        assert!(!m.store.is_trainable(m.embedding));
    }

    #[test]
    fn empty_sentence_rejected() {
        let m = model(Config::default());
        assert!(matches!(m.analyze(&[]), Err(ModelError::EmptySentence)));
    }
}
