//! REINFORCE training: rewards, micro/macro tree-loss surrogates, the exact
//! enumeration oracle and the mini-batch training loop.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::config::{Config, Normalization, ScorerKind};
use crate::heads::{predict, task_loss, total_loss, LossValues, Phase};
use crate::model::{ArTree, ModelError};
use crate::optim::Optimizer;
use crate::params::{Grads, ParamId, Session};
use crate::tree::{enumerate_trees, greedy_tree, record_steps, sample_tree, tree_probability, PolicyStep, TreeError, TreeNode};
use crate::vocab::{build_vocab, compute_tfidf, load_pretrained, LabeledExample};

/// Largest sentence accepted by [`exact_policy_gradient`].
pub const EXACT_GRADIENT_LIMIT: usize = 6;

/// One reward per recorded step.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardAssignment {
    pub rewards: Vec<f64>,
}

/// `r_t = +|A_t|` for a correct prediction, `-|A_t|` otherwise.
pub fn assign_rewards(steps: &[PolicyStep], correct: bool) -> RewardAssignment {
    signed_rewards(steps, if correct { 1.0 } else { -1.0 })
}

/// `r_t = sign * |A_t|`.
pub fn signed_rewards(steps: &[PolicyStep], sign: f64) -> RewardAssignment {
    RewardAssignment {
        rewards: steps.iter().map(|s| sign * s.action_space_size() as f64).collect(),
    }
}

/// A sampled tree's steps paired with their rewards.
pub type RewardedSteps<'a> = (&'a [PolicyStep], &'a RewardAssignment);

fn check_batch(batch: &[RewardedSteps<'_>]) -> Result<usize, ModelError> {
    let mut total = 0;
    for (steps, r) in batch {
        if steps.len() != r.rewards.len() {
            return Err(ModelError::Dimension {
                what: "rewards",
                expected: steps.len(),
                found: r.rewards.len(),
            });
        }
        total += steps.len();
    }
    if total == 0 {
        return Err(ModelError::EmptyDataset);
    }
    Ok(total)
}

/// `-(1 / sum_k N_k) * sum_k sum_t r_t log pi(a_t | s_t)` over every step
/// of every tree in the batch.
pub fn tree_loss_micro(tape: &mut Tape, batch: &[RewardedSteps<'_>]) -> Result<Var, ModelError> {
    let total = check_batch(batch)? as f64;
    let terms: Vec<(Var, f64)> = batch
        .iter()
        .flat_map(|(steps, r)| steps.iter().zip(&r.rewards).map(|(s, r)| (s.log_prob, -r / total)))
        .collect();
    Ok(tape.lin_comb(&terms)?)
}

/// Steps grouped by chosen word; each group is averaged, then groups are
/// averaged: `-(1/|W|) sum_w (1/|T^w|) sum_{t in T^w} r_t log pi`.
pub fn tree_loss_macro(tape: &mut Tape, batch: &[RewardedSteps<'_>]) -> Result<Var, ModelError> {
    check_batch(batch)?;
    let mut group_size: BTreeMap<usize, usize> = BTreeMap::new();
    for (steps, _) in batch {
        for s in steps.iter() {
            *group_size.entry(s.chosen_token).or_default() += 1;
        }
    }
    let words = group_size.len() as f64;
    let terms: Vec<(Var, f64)> = batch
        .iter()
        .flat_map(|(steps, r)| {
            let group_size = &group_size;
            steps
                .iter()
                .zip(&r.rewards)
                .map(move |(s, r)| (s.log_prob, -r / (words * group_size[&s.chosen_token] as f64)))
        })
        .collect();
    Ok(tape.lin_comb(&terms)?)
}

pub fn tree_loss(tape: &mut Tape, batch: &[RewardedSteps<'_>], normalization: Normalization) -> Result<Var, ModelError> {
    match normalization {
        Normalization::Micro => tree_loss_micro(tape, batch),
        Normalization::Macro => tree_loss_macro(tape, batch),
    }
}

/// `grad J = sum_T P(T) (1/N) sum_t r_t grad log pi(a_t | s_t)` computed
/// exactly over all trees, where `r_t = reward_fn(T) * |A_t|`.
///
/// The gradient covers every parameter the scores depend on.
pub fn exact_policy_gradient<S, F>(model: &ArTree, tokens: &[S], reward_fn: F) -> Result<Grads, ModelError>
where
    S: AsRef<str>,
    F: Fn(&TreeNode) -> f64,
{
    let n = tokens.len();
    if n > EXACT_GRADIENT_LIMIT {
        return Err(TreeError::TooLarge(n).into());
    }
    let mut sess = Session::new(&model.store);
    let scored = model.score(&mut sess, tokens, &mut Phase::Eval)?;
    let values = sess.tape.value(scored.scores).to_vec();
    let mut terms = Vec::new();
    for tree in enumerate_trees(n)? {
        let weight = tree_probability(&tree, &values) * reward_fn(&tree) / n as f64;
        let steps = record_steps(&mut sess.tape, scored.scores, &tree, &scored.ids)?;
        terms.extend(steps.iter().map(|s| (s.log_prob, weight * s.action_space_size() as f64)));
    }
    let objective = sess.tape.lin_comb(&terms)?;
    sess.tape.backward(objective)?;
    Ok(sess.grads())
}

/// Monte-Carlo estimate of the policy gradient with per-coordinate standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGradientEstimate {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Averages the negated micro-surrogate gradient of single sampled trees.
///
/// Each sample is differentiated with respect to the word scores and then
/// mapped through the score Jacobian, so the result is flattened over `ids`
/// in the same layout as [`Grads::flatten`].
pub fn monte_carlo_policy_gradient<S, F>(
    model: &ArTree,
    tokens: &[S],
    reward_fn: F,
    ids: &[ParamId],
    samples: usize,
    rng: &mut impl Rng,
) -> Result<PolicyGradientEstimate, ModelError>
where
    S: AsRef<str>,
    F: Fn(&TreeNode) -> f64,
{
    if samples < 2 {
        return Err(ModelError::EmptyDataset);
    }
    let mut sess = Session::new(&model.store);
    let scored = model.score(&mut sess, tokens, &mut Phase::Eval)?;
    let values = sess.tape.value(scored.scores).to_vec();
    let n = values.len();
    let mut jacobian = Vec::with_capacity(n);
    for i in 0..n {
        let s_i = sess.tape.pick(scored.scores, i)?;
        sess.tape.zero_grads();
        sess.tape.backward(s_i)?;
        jacobian.push(sess.grads().flatten(&model.store, ids));
    }

    let mut sum = vec![0.0; n];
    let mut outer = vec![0.0; n * n];
    for _ in 0..samples {
        let mut tape = Tape::new();
        let s = tape.constant_vector(values.clone());
        let sampled = sample_tree(&mut tape, s, &scored.ids, rng)?;
        let rewards = signed_rewards(&sampled.steps, reward_fn(&sampled.root));
        let loss = tree_loss_micro(&mut tape, &[(&sampled.steps, &rewards)])?;
        tape.backward(loss)?;
        let d: Vec<f64> = tape.grad(s).iter().map(|g| -g).collect();
        for a in 0..n {
            sum[a] += d[a];
            for b in 0..n {
                outer[a * n + b] += d[a] * d[b];
            }
        }
    }
    let k = samples as f64;
    let mean_d: Vec<f64> = sum.iter().map(|v| v / k).collect();
    let mut cov = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            cov[a * n + b] = (outer[a * n + b] - k * mean_d[a] * mean_d[b]) / (k - 1.0);
        }
    }
    let p = jacobian.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; p];
    let mut std_error = vec![0.0; p];
    for j in 0..p {
        let col: Vec<f64> = jacobian.iter().map(|row| row[j]).collect();
        mean[j] = col.iter().zip(&mean_d).map(|(c, d)| c * d).sum();
        let mut var = 0.0;
        for a in 0..n {
            for b in 0..n {
                var += col[a] * cov[a * n + b] * col[b];
            }
        }
        std_error[j] = (var.max(0.0) / k).sqrt();
    }
    Ok(PolicyGradientEstimate { mean, std_error })
}

/// Model, optimizer and the run's single random stream.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: ArTree,
    pub optimizer: Optimizer,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
}

impl TrainState {
    /// Builds vocabulary, tf-idf table and parameters from the training
    /// data. All randomness derives from `config.seed`.
    pub fn init(config: Config, train: &[LabeledExample]) -> Result<Self, ModelError> {
        if train.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let sentences: Vec<&[String]> = train.iter().flat_map(LabeledExample::sentences).collect();
        let vocab = build_vocab(sentences.iter().copied(), config.min_freq)?;
        let tfidf = compute_tfidf(sentences.iter().copied());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embeddings = match &config.pretrained {
            Some(path) => Some(load_pretrained(path, config.dim_word, &vocab, config.finetune, &mut rng)?),
            None => None,
        };
        let model = ArTree::new(config, vocab, tfidf, embeddings, &mut rng)?;
        Ok(Self::from_model(model, rng, 0))
    }

    pub fn from_model(model: ArTree, rng: ChaCha8Rng, epoch: usize) -> Self {
        let optimizer = Optimizer::new(model.config.optimizer, model.config.learning_rate, &model.store);
        TrainState {
            model,
            optimizer,
            rng,
            epoch,
        }
    }
}

/// Aggregates of one optimization step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchOutcome {
    pub loss: LossValues,
    /// Sampled-tree predictions that matched the label.
    pub correct: usize,
    pub predictions: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean total loss over batches.
    pub loss: f64,
    /// Accuracy of the sampled-tree predictions made during the epoch.
    pub accuracy: f64,
}

struct Sample {
    example: usize,
    features: Var,
    steps: Vec<PolicyStep>,
}

/// Forward pass, backward pass and optimizer step on one mini-batch.
pub fn train_batch(
    model: &mut ArTree,
    optimizer: &mut Optimizer,
    batch: &[&LabeledExample],
    rng: &mut ChaCha8Rng,
) -> Result<BatchOutcome, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let config = &model.config;
    let sampling = config.scorer == ScorerKind::Mlp;
    let draws = if sampling { config.samples } else { 1 };
    let mut sess = Session::new(&model.store);

    let mut samples = Vec::with_capacity(batch.len() * draws);
    for (e, example) in batch.iter().enumerate() {
        let scored = example
            .sentences()
            .into_iter()
            .map(|tokens| model.score(&mut sess, tokens, &mut Phase::Train(rng)))
            .collect::<Result<Vec<_>, _>>()?;
        for _ in 0..draws {
            let mut embeddings = Vec::with_capacity(scored.len());
            let mut steps = Vec::new();
            for s in &scored {
                let tree = if sampling {
                    let sampled = sample_tree(&mut sess.tape, s.scores, &s.ids, rng)?;
                    steps.extend(sampled.steps);
                    sampled.root
                } else {
                    greedy_tree(sess.tape.value(s.scores))?
                };
                embeddings.push(model.embed(&mut sess, &tree, &s.enc)?);
            }
            let features = model.features(&mut sess, &embeddings)?;
            samples.push(Sample { example: e, features, steps });
        }
    }

    let features: Vec<Var> = samples.iter().map(|s| s.features).collect();
    let (log_probs, stats) = model.classifier.classify_batch(&mut sess, &features, &mut Phase::Train(rng))?;

    let mut losses = Vec::with_capacity(samples.len());
    let mut rewards = Vec::with_capacity(samples.len());
    let mut correct = 0;
    for (sample, &lp) in samples.iter().zip(&log_probs) {
        let label = batch[sample.example].label();
        losses.push(task_loss(&mut sess.tape, lp, label)?);
        let ok = predict(sess.tape.value(lp)) == label;
        correct += usize::from(ok);
        rewards.push(assign_rewards(&sample.steps, ok));
    }
    let weight = 1.0 / losses.len() as f64;
    let task_terms: Vec<(Var, f64)> = losses.iter().map(|&l| (l, weight)).collect();
    let task = sess.tape.lin_comb(&task_terms)?;
    let tree = if sampling {
        let rewarded: Vec<RewardedSteps<'_>> = samples.iter().map(|s| s.steps.as_slice()).zip(&rewards).collect();
        Some(tree_loss(&mut sess.tape, &rewarded, config.normalization)?)
    } else {
        None
    };
    let params = sess.trainable_params();
    let breakdown = total_loss(&mut sess.tape, task, tree, &params, config.alpha, config.lambda)?;
    sess.tape.backward(breakdown.total)?;
    let loss = breakdown.values(&sess.tape);
    let grads = sess.grads();
    drop(sess);

    optimizer.step(&mut model.store, &grads);
    for s in &stats {
        s.apply(&mut model.store);
    }
    Ok(BatchOutcome {
        loss,
        correct,
        predictions: samples.len(),
    })
}

/// One pass over shuffled mini-batches.
pub fn train_epoch(data: &[LabeledExample], state: &mut TrainState) -> Result<EpochMetrics, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut state.rng);
    let mut loss_sum = 0.0;
    let mut batches = 0;
    let (mut correct, mut total) = (0, 0);
    for chunk in order.chunks(state.model.config.batch_size.max(1)) {
        let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &data[i]).collect();
        let out = train_batch(&mut state.model, &mut state.optimizer, &batch, &mut state.rng)?;
        loss_sum += out.loss.total;
        batches += 1;
        correct += out.correct;
        total += out.predictions;
    }
    state.epoch += 1;
    Ok(EpochMetrics {
        epoch: state.epoch,
        loss: loss_sum / batches as f64,
        accuracy: correct as f64 / total as f64,
    })
}

/// Fraction of examples whose greedy-tree prediction matches the label.
pub fn evaluate(model: &ArTree, data: &[LabeledExample]) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut correct = 0;
    for example in data {
        let (class, _) = model.predict(example)?;
        correct += usize::from(class == example.label());
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Reward sign from the model's own prediction on a given tree, memoized per shape.
pub fn prediction_reward<'a>(model: &'a ArTree, example: &LabeledExample) -> impl Fn(&TreeNode) -> f64 + 'a {
    let cache = std::cell::RefCell::new(HashMap::new());
    let example = example.clone();
    move |tree: &TreeNode| {
        *cache.borrow_mut().entry(tree.clone()).or_insert_with(|| {
            let lp = model
                .log_probs_with_trees(&example, std::slice::from_ref(tree))
                .expect("tree over the example's sentence");
            if predict(&lp) == example.label() {
                1.0
            } else {
                -1.0
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::tree::Span;
    use crate::vocab::tokenize;

    fn leaf_step(tape: &mut Tape, token: usize, span_len: usize, log_prob: f64) -> (PolicyStep, Var) {
        let v = tape.leaf(Tensor::scalar(log_prob));
        (
            PolicyStep {
                span: Span::new(0, span_len),
                chosen: 0,
                chosen_token: token,
                log_prob: v,
            },
            v,
        )
    }

    #[test]
    fn rewards_scale_with_span() {
        let mut tape = Tape::new();
        let scores = tape.constant_vector(vec![0.1, 0.5, 0.2, 0.9]);
        let tree = greedy_tree(tape.value(scores)).unwrap();
        let steps = record_steps(&mut tape, scores, &tree, &[1, 2, 3, 4]).unwrap();
        assert_eq!(steps[0].action_space_size(), 4);
        assert_eq!(assign_rewards(&steps, true).rewards[0], 4.0);
        assert_eq!(assign_rewards(&steps, false).rewards[0], -4.0);
        let leaf = steps.iter().position(|s| s.span.len() == 1).unwrap();
        assert_eq!(assign_rewards(&steps, false).rewards[leaf], -1.0);
    }

    #[test]
    fn zero_rewards_zero_loss() {
        let mut tape = Tape::new();
        let (s, v) = leaf_step(&mut tape, 1, 2, -0.3);
        let r = RewardAssignment { rewards: vec![0.0] };
        let l = tree_loss_micro(&mut tape, &[(std::slice::from_ref(&s), &r)]).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(v), vec![0.0]);
        assert!(tree_loss_micro(&mut tape, &[]).is_err());
    }

    #[test]
    fn single_node_pushes_probability_up() {
        let mut tape = Tape::new();
        let scores = tape.leaf(Tensor::vector(vec![0.3, -0.2]));
        let tree = TreeNode::with_children(0, None, Some(TreeNode::leaf(1)));
        let steps = record_steps(&mut tape, scores, &tree, &[5, 6]).unwrap();
        let root = &steps[..1];
        let r = RewardAssignment { rewards: vec![1.0] };
        let l = tree_loss_micro(&mut tape, &[(root, &r)]).unwrap();
        let p = crate::autodiff::softmax_values(&[0.3, -0.2])[0];
        assert!((tape.scalar(l) + p.ln()).abs() < 1e-12);
        tape.backward(l).unwrap();
        let g = tape.grad(scores);
        assert!(g[0] < 0.0 && g[1] > 0.0);
    }

    #[test]
    fn micro_matches_hand_assembly() {
        let mut tape = Tape::new();
        let raw = vec![0.4, -1.0, 0.7];
        let scores = tape.leaf(Tensor::vector(raw.clone()));
        let t1 = greedy_tree(&raw).unwrap();
        let t2 = TreeNode::with_children(0, None, Some(TreeNode::with_children(1, None, Some(TreeNode::leaf(2)))));
        let s1 = record_steps(&mut tape, scores, &t1, &[1, 2, 3]).unwrap();
        let s2 = record_steps(&mut tape, scores, &t2, &[1, 2, 3]).unwrap();
        let r1 = assign_rewards(&s1, true);
        let r2 = assign_rewards(&s2, false);
        let l = tree_loss_micro(&mut tape, &[(&s1, &r1), (&s2, &r2)]).unwrap();
        tape.backward(l).unwrap();
        let got = tape.grad(scores);

        // d log pi(a | span) / d s_j = [j == a] - p_j for j in span.
        let mut expect = [0.0; 3];
        for (steps, rewards) in [(&s1, &r1), (&s2, &r2)] {
            for (st, r) in steps.iter().zip(&rewards.rewards) {
                let p = crate::tree::policy_probs(&raw, st.span);
                for j in st.span.start..st.span.end {
                    let ind = if j == st.chosen { 1.0 } else { 0.0 };
                    expect[j] -= r / 6.0 * (ind - p[j - st.span.start]);
                }
            }
        }
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12, "{got:?} {expect:?}");
        }
    }

    #[test]
    fn macro_equals_micro_for_unique_tokens() {
        let mut tape = Tape::new();
        let raw = vec![0.4, -1.0, 0.7, 0.1];
        let scores = tape.leaf(Tensor::vector(raw.clone()));
        let tree = greedy_tree(&raw).unwrap();
        let steps = record_steps(&mut tape, scores, &tree, &[10, 11, 12, 13]).unwrap();
        let r = assign_rewards(&steps, true);
        let micro = tree_loss_micro(&mut tape, &[(&steps, &r)]).unwrap();
        let mac = tree_loss_macro(&mut tape, &[(&steps, &r)]).unwrap();
        assert_eq!(tape.scalar(micro), tape.scalar(mac));
        tape.backward(micro).unwrap();
        let gm = tape.grad(scores);
        tape.zero_grads();
        tape.backward(mac).unwrap();
        let ga = tape.grad(scores);
        for (a, b) in gm.iter().zip(&ga) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn nine_versus_one_gradient_mass() {
        let mut tape = Tape::new();
        let mut steps = Vec::new();
        let mut leaves = Vec::new();
        for k in 0..10 {
            let (s, v) = leaf_step(&mut tape, if k < 9 { 7 } else { 8 }, 1, -0.5);
            steps.push(s);
            leaves.push(v);
        }
        let r = RewardAssignment { rewards: vec![1.0; 10] };
        let mass = |tape: &Tape| {
            let g: Vec<f64> = leaves.iter().map(|&v| -tape.grad(v)[0]).collect();
            (g[..9].iter().sum::<f64>(), g[9])
        };
        let mac = tree_loss_macro(&mut tape, &[(&steps, &r)]).unwrap();
        tape.backward(mac).unwrap();
        let (a, b) = mass(&tape);
        assert!((a - 0.5).abs() < 1e-15 && (b - 0.5).abs() < 1e-15);
        tape.zero_grads();
        let mic = tree_loss_micro(&mut tape, &[(&steps, &r)]).unwrap();
        tape.backward(mic).unwrap();
        let (a, b) = mass(&tape);
        assert!((a - 0.9).abs() < 1e-15 && (b - 0.1).abs() < 1e-15);
    }

    #[test]
    fn repeated_word_is_averaged_first() {
        // Six occurrences of one word across six trees, plus two other words.
        let mut tape = Tape::new();
        let mut trees = Vec::new();
        let mut movie = Vec::new();
        for k in 0..6 {
            let (s, v) = leaf_step(&mut tape, 1, 1, -0.2);
            movie.push(v);
            let mut steps = vec![s];
            if k == 0 {
                steps.push(leaf_step(&mut tape, 2, 1, -0.2).0);
                steps.push(leaf_step(&mut tape, 3, 1, -0.2).0);
            }
            trees.push(steps);
        }
        let rewards: Vec<RewardAssignment> = trees.iter().map(|s| RewardAssignment { rewards: vec![1.0; s.len()] }).collect();
        let batch: Vec<RewardedSteps<'_>> = trees.iter().map(Vec::as_slice).zip(&rewards).collect();
        let l = tree_loss_macro(&mut tape, &batch).unwrap();
        tape.backward(l).unwrap();
        for v in movie {
            assert!((tape.grad(v)[0] + 1.0 / 18.0).abs() < 1e-15);
        }
    }

    #[test]
    fn negated_rewards_negate_gradient() {
        let mut tape = Tape::new();
        let raw = vec![0.2, 0.9, -0.4];
        let scores = tape.leaf(Tensor::vector(raw.clone()));
        let tree = greedy_tree(&raw).unwrap();
        let steps = record_steps(&mut tape, scores, &tree, &[1, 1, 2]).unwrap();
        let mut grads = Vec::new();
        for correct in [true, false] {
            let r = assign_rewards(&steps, correct);
            for norm in [Normalization::Micro, Normalization::Macro] {
                tape.zero_grads();
                let l = tree_loss(&mut tape, &[(&steps, &r)], norm).unwrap();
                tape.backward(l).unwrap();
                grads.push(tape.grad(scores));
            }
        }
        for k in 0..2 {
            for (a, b) in grads[k].iter().zip(&grads[k + 2]) {
                assert_eq!(*a, -b);
            }
        }
    }

    fn keyword_model(config: Config) -> (TrainState, Vec<LabeledExample>) {
        let data = crate::synthetic::keyword_dataset(&crate::synthetic::KeywordTask {
            sentences: 24,
            length: 5,
            vocab_size: 12,
            seed: 5,
        });
        (TrainState::init(config, &data).unwrap(), data)
    }

    #[test]
    fn exact_gradient_degenerate_cases() {
        let (state, _) = keyword_model(Config::default());
        let m = &state.model;
        let ids: Vec<ParamId> = m.store.ids().collect();
        let one = exact_policy_gradient(m, &["w1"], |_| 1.0).unwrap();
        assert!(one.flatten(&m.store, &ids).iter().all(|&g| g == 0.0));
        let zero = exact_policy_gradient(m, &["w1", "w2", "w3"], |_| 0.0).unwrap();
        assert!(zero.flatten(&m.store, &ids).iter().all(|&g| g == 0.0));
        let long = vec!["w1"; EXACT_GRADIENT_LIMIT + 1];
        assert!(exact_policy_gradient(m, &long, |_| 1.0).is_err());
    }

    #[test]
    fn task_loss_does_not_reach_scorer() {
        let (state, data) = keyword_model(Config::default());
        let m = &state.model;
        let mut sess = Session::new(&m.store);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tokens = &data[0].sentences()[0];
        let scored = m.score(&mut sess, tokens, &mut Phase::Eval).unwrap();
        let sampled = sample_tree(&mut sess.tape, scored.scores, &scored.ids, &mut rng).unwrap();
        let h = m.embed(&mut sess, &sampled.root, &scored.enc).unwrap();
        let lp = m.classifier.classify(&mut sess, h, &mut Phase::Eval).unwrap();
        let l = task_loss(&mut sess.tape, lp, data[0].label()).unwrap();
        sess.tape.backward(l).unwrap();
        let g = sess.grads();
        for id in m.scorer.param_ids() {
            assert!(g.get(id).is_none_or(|v| v.iter().all(|&x| x == 0.0)));
        }
    }

    #[test]
    fn same_seed_same_run() {
        let config = Config {
            batch_size: 8,
            ..Config::default()
        };
        let run = || {
            let (mut state, data) = keyword_model(config.clone());
            let metrics: Vec<EpochMetrics> = (0..2).map(|_| train_epoch(&data, &mut state).unwrap()).collect();
            (metrics, state.model.store)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn evaluation_is_repeatable() {
        let (state, data) = keyword_model(Config::default());
        let a = evaluate(&state.model, &data).unwrap();
        assert_eq!(a, evaluate(&state.model, &data).unwrap());
        assert!(evaluate(&state.model, &[]).is_err());
    }

    #[test]
    fn zero_alpha_tfidf_trains_only_on_task() {
        let (mut state, data) = keyword_model(Config {
            scorer: ScorerKind::Tfidf,
            alpha: 0.0,
            ..Config::default()
        });
        let scorer_before: Vec<Tensor> = state.model.scorer.param_ids().iter().map(|&id| state.model.store.get(id).clone()).collect();
        let m = train_epoch(&data, &mut state).unwrap();
        assert!(m.loss.is_finite());
        for (id, before) in state.model.scorer.param_ids().iter().zip(&scorer_before) {
            assert_eq!(state.model.store.get(*id), before);
        }
        let tokens = tokenize("w1 w2 w3");
        assert_eq!(state.model.analyze(&tokens).unwrap().scores.len(), 3);
    }
}
