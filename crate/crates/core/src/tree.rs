//! Tree construction over word positions.
//!
//! Positions are 0-based and spans are half-open `[start, end)`. Every tree
//! built here keeps the sentence order under in-order traversal: all
//! positions in a node's left subtree are smaller than the node's own.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{softmax_values, AutodiffError, Tape, Var};

/// Largest sentence length accepted by [`enumerate_trees`].
pub const MAX_ENUMERATE: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("span [{start}, {end}) outside sentence of length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("empty span")]
    EmptySpan,
    #[error("cannot enumerate trees over {0} words (limit {MAX_ENUMERATE})")]
    TooLarge(usize),
    #[error("{tokens} tokens for {scores} scores")]
    TokenCount { tokens: usize, scores: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Half-open range of word positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }
}

/// One word per node; absent children are `None`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TreeNode {
    pub index: usize,
    pub left: Option<Box<TreeNode>>,
    pub right: Option<Box<TreeNode>>,
}

impl TreeNode {
    pub fn leaf(index: usize) -> Self {
        TreeNode {
            index,
            left: None,
            right: None,
        }
    }

    pub fn with_children(index: usize, left: Option<TreeNode>, right: Option<TreeNode>) -> Self {
        TreeNode {
            index,
            left: left.map(Box::new),
            right: right.map(Box::new),
        }
    }

    pub fn size(&self) -> usize {
        self.in_order().len()
    }

    /// Positions in left-node-right order.
    pub fn in_order(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<&TreeNode> = Vec::new();
        let mut cur = Some(self);
        while cur.is_some() || !stack.is_empty() {
            while let Some(n) = cur {
                stack.push(n);
                cur = n.left.as_deref();
            }
            let n = stack.pop().expect("non-empty stack");
            out.push(n.index);
            cur = n.right.as_deref();
        }
        out
    }

    /// Nodes with their spans, parents before children.
    pub fn spans(&self) -> Vec<(&TreeNode, Span)> {
        let order = self.in_order();
        let start = order.first().copied().unwrap_or(self.index);
        let end = order.last().copied().unwrap_or(self.index) + 1;
        let mut out = Vec::new();
        let mut stack = vec![(self, Span::new(start, end))];
        while let Some((n, span)) = stack.pop() {
            out.push((n, span));
            if let Some(r) = n.right.as_deref() {
                stack.push((r, Span::new(n.index + 1, span.end)));
            }
            if let Some(l) = n.left.as_deref() {
                stack.push((l, Span::new(span.start, n.index)));
            }
        }
        out
    }

    /// Depth of each position (root = 0), indexed by position, for a tree
    /// spanning `[0, n)`.
    pub fn depths(&self, n: usize) -> Vec<usize> {
        let mut out = vec![0; n];
        let mut stack = vec![(self, 0usize)];
        while let Some((node, d)) = stack.pop() {
            if node.index < n {
                out[node.index] = d;
            }
            for child in [node.left.as_deref(), node.right.as_deref()].into_iter().flatten() {
                stack.push((child, d + 1));
            }
        }
        out
    }

    /// Maximum root-to-leaf edge count.
    pub fn height(&self) -> usize {
        let order = self.in_order();
        let n = order.iter().max().map_or(0, |m| m + 1);
        self.depths(n).into_iter().max().unwrap_or(0)
    }

    /// Post-order node list (children before parents).
    pub fn post_order(&self) -> Vec<&TreeNode> {
        let mut out = self.spans().into_iter().map(|(n, _)| n).collect::<Vec<_>>();
        out.reverse();
        out
    }
}

fn check_span(len: usize, start: usize, end: usize) -> Result<(), TreeError> {
    if start > len || end > len {
        return Err(TreeError::SpanOutOfRange { start, end, len });
    }
    Ok(())
}

/// Position of the maximum score in `span`; ties go to the smallest position.
pub fn argmax(scores: &[f64], span: Span) -> usize {
    let mut best = span.start;
    for i in span.start + 1..span.end {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    best
}

/// Deterministic top-down construction: the best-scoring word of each span
/// becomes its root. Returns `None` for an empty span.
pub fn build_greedy(scores: &[f64], start: usize, end: usize) -> Result<Option<TreeNode>, TreeError> {
    check_span(scores.len(), start, end)?;
    Ok(greedy_span(scores, Span::new(start, end)))
}

fn greedy_span(scores: &[f64], span: Span) -> Option<TreeNode> {
    if span.is_empty() {
        return None;
    }
    if span.len() == 1 {
        return Some(TreeNode::leaf(span.start));
    }
    let root = argmax(scores, span);
    Some(TreeNode::with_children(
        root,
        greedy_span(scores, Span::new(span.start, root)),
        greedy_span(scores, Span::new(root + 1, span.end)),
    ))
}

/// Greedy tree over the whole sentence.
pub fn greedy_tree(scores: &[f64]) -> Result<TreeNode, TreeError> {
    build_greedy(scores, 0, scores.len())?.ok_or(TreeError::EmptySpan)
}

/// Selection probabilities over `span` (softmax of the span's scores),
/// recorded on the tape.
pub fn policy_distribution(tape: &mut Tape, scores: Var, span: Span) -> Result<Var, TreeError> {
    if span.is_empty() {
        return Err(TreeError::EmptySpan);
    }
    check_span(tape.shape(scores).len(), span.start, span.end)?;
    let part = tape.slice(scores, span.start, span.len())?;
    Ok(tape.softmax(part)?)
}

/// Plain-value version of [`policy_distribution`].
pub fn policy_probs(scores: &[f64], span: Span) -> Vec<f64> {
    softmax_values(&scores[span.start..span.end])
}

/// One recorded decision of the tree-building policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyStep {
    pub span: Span,
    pub chosen: usize,
    /// Vocabulary id of the chosen word, used for per-word grouping.
    pub chosen_token: usize,
    /// `log pi(chosen | span)`, differentiable w.r.t. the scores.
    pub log_prob: Var,
}

impl PolicyStep {
    pub fn action_space_size(&self) -> usize {
        self.span.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledTree {
    pub root: TreeNode,
    pub steps: Vec<PolicyStep>,
}

/// Records the decisions that produce `tree`, with differentiable
/// log-probabilities, parents before children.
pub fn record_steps(tape: &mut Tape, scores: Var, tree: &TreeNode, tokens: &[usize]) -> Result<Vec<PolicyStep>, TreeError> {
    let n = tape.shape(scores).len();
    if tokens.len() != n {
        return Err(TreeError::TokenCount {
            tokens: tokens.len(),
            scores: n,
        });
    }
    let mut steps = Vec::with_capacity(n);
    for (node, span) in tree.spans() {
        check_span(n, span.start, span.end)?;
        let part = tape.slice(scores, span.start, span.len())?;
        let log_probs = tape.log_softmax(part)?;
        let log_prob = tape.pick(log_probs, node.index - span.start)?;
        steps.push(PolicyStep {
            span,
            chosen: node.index,
            chosen_token: tokens[node.index],
            log_prob,
        });
    }
    Ok(steps)
}

/// Draws a tree from the policy: each span's root is sampled from the
/// softmax of its scores, then both sides are sampled recursively.
pub fn sample_tree(tape: &mut Tape, scores: Var, tokens: &[usize], rng: &mut impl Rng) -> Result<SampledTree, TreeError> {
    let values = tape.value(scores).to_vec();
    if values.is_empty() {
        return Err(TreeError::EmptySpan);
    }
    let root = sample_structure(&values, rng);
    let steps = record_steps(tape, scores, &root, tokens)?;
    Ok(SampledTree { root, steps })
}

/// Samples only the tree shape from plain scores.
pub fn sample_structure(scores: &[f64], rng: &mut impl Rng) -> TreeNode {
    sample_span(scores, Span::new(0, scores.len()), rng).expect("non-empty span")
}

fn sample_span(scores: &[f64], span: Span, rng: &mut impl Rng) -> Option<TreeNode> {
    if span.is_empty() {
        return None;
    }
    let chosen = if span.len() == 1 {
        span.start
    } else {
        let probs = policy_probs(scores, span);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = span.end - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = span.start + k;
                break;
            }
        }
        pick
    };
    let left = sample_span(scores, Span::new(span.start, chosen), rng);
    let right = sample_span(scores, Span::new(chosen + 1, span.end), rng);
    Some(TreeNode::with_children(chosen, left, right))
}

/// Exact probability of `tree` under the policy defined by `scores`.
pub fn tree_probability(tree: &TreeNode, scores: &[f64]) -> f64 {
    tree.spans()
        .into_iter()
        .map(|(node, span)| policy_probs(scores, span)[node.index - span.start])
        .product()
}

/// All binary trees over `n` words that preserve word order (Catalan(n) of them).
pub fn enumerate_trees(n: usize) -> Result<Vec<TreeNode>, TreeError> {
    if n == 0 {
        return Err(TreeError::EmptySpan);
    }
    if n > MAX_ENUMERATE {
        return Err(TreeError::TooLarge(n));
    }
    Ok(enumerate_span(Span::new(0, n)).into_iter().flatten().collect())
}

fn enumerate_span(span: Span) -> Vec<Option<TreeNode>> {
    if span.is_empty() {
        return vec![None];
    }
    let mut out = Vec::new();
    for root in span.start..span.end {
        let lefts = enumerate_span(Span::new(span.start, root));
        let rights = enumerate_span(Span::new(root + 1, span.end));
        for l in &lefts {
            for r in &rights {
                out.push(Some(TreeNode::with_children(root, l.clone(), r.clone())));
            }
        }
    }
    out
}

/// Enumerated trees paired with their probability under `scores`.
pub fn enumerate_with_probabilities(scores: &[f64]) -> Result<Vec<(TreeNode, f64)>, TreeError> {
    Ok(enumerate_trees(scores.len())?
        .into_iter()
        .map(|t| {
            let p = tree_probability(&t, scores);
            (t, p)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn node(i: usize, l: Option<TreeNode>, r: Option<TreeNode>) -> TreeNode {
        TreeNode::with_children(i, l, r)
    }

    #[test]
    fn greedy_hand_example() {
        let t = greedy_tree(&[3.0, 1.0, 5.0, 2.0]).unwrap();
        let expected = node(
            2,
            Some(node(0, None, Some(TreeNode::leaf(1)))),
            Some(TreeNode::leaf(3)),
        );
        assert_eq!(t, expected);
        assert_eq!(t.in_order(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn greedy_single_and_empty() {
        assert_eq!(build_greedy(&[0.4], 0, 1).unwrap(), Some(TreeNode::leaf(0)));
        assert_eq!(build_greedy(&[0.4, 1.0], 1, 1).unwrap(), None);
        assert!(matches!(
            build_greedy(&[0.4], 0, 2),
            Err(TreeError::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn greedy_sentence_roots_at_peak_word() {
        let words = ["the", "movie", "is", "very", "interesting", "to", "me", "."];
        let scores = [0.1, 0.6, 0.2, 0.4, 0.9, 0.1, 0.3, 0.0];
        let t = greedy_tree(&scores).unwrap();
        assert_eq!(words[t.index], "interesting");
        let left: Vec<&str> = t.left.as_ref().unwrap().in_order().iter().map(|&i| words[i]).collect();
        let right: Vec<&str> = t.right.as_ref().unwrap().in_order().iter().map(|&i| words[i]).collect();
        assert_eq!(left, ["the", "movie", "is", "very"]);
        assert_eq!(right, ["to", "me", "."]);
    }

    #[test]
    fn ties_break_left() {
        let t = greedy_tree(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.index, 0);
        assert_eq!(t.right.as_ref().unwrap().index, 1);
    }

    #[test]
    fn decreasing_scores_give_right_chain() {
        let t = greedy_tree(&[5.0, 4.0, 3.0, 2.0]).unwrap();
        let mut cur = Some(&t);
        let mut expect = 0;
        while let Some(n) = cur {
            assert_eq!(n.index, expect);
            assert!(n.left.is_none());
            expect += 1;
            cur = n.right.as_deref();
        }
        assert_eq!(expect, 4);
    }

    #[test]
    fn policy_distribution_cases() {
        let mut tape = Tape::new();
        let s = tape.constant_vector(vec![0.7; 4]);
        let p = policy_distribution(&mut tape, s, Span::new(0, 4)).unwrap();
        assert!(tape.value(p).iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let p = policy_distribution(&mut tape, s, Span::new(2, 3)).unwrap();
        assert_eq!(tape.value(p), &[1.0]);
        let s2 = tape.constant_vector(vec![1f64.ln(), 3f64.ln()]);
        let p = policy_distribution(&mut tape, s2, Span::new(0, 2)).unwrap();
        assert!((tape.value(p)[0] - 0.25).abs() < 1e-12);
        assert!((tape.value(p)[1] - 0.75).abs() < 1e-12);
        assert_eq!(policy_distribution(&mut tape, s, Span::new(2, 2)), Err(TreeError::EmptySpan));
    }

    #[test]
    fn sample_single_word() {
        let mut tape = Tape::new();
        let s = tape.constant_vector(vec![0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = sample_tree(&mut tape, s, &[7], &mut rng).unwrap();
        assert_eq!(t.root, TreeNode::leaf(0));
        assert_eq!(t.steps.len(), 1);
        assert_eq!(tape.scalar(t.steps[0].log_prob), 0.0);
        assert_eq!(t.steps[0].chosen_token, 7);
    }

    #[test]
    fn dominant_scores_sample_the_greedy_tree() {
        let scores = vec![0.0, 800.0, -400.0, 400.0, 1200.0];
        let greedy = greedy_tree(&scores).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            assert_eq!(sample_structure(&scores, &mut rng), greedy);
        }
    }

    #[test]
    fn enumeration_counts() {
        let catalan = [1, 1, 2, 5, 14, 42, 132];
        for n in 1..=6 {
            let trees = enumerate_trees(n).unwrap();
            assert_eq!(trees.len(), catalan[n]);
            let distinct: std::collections::HashSet<_> = trees.iter().collect();
            assert_eq!(distinct.len(), trees.len());
            assert!(trees.iter().all(|t| t.in_order() == (0..n).collect::<Vec<_>>()));
        }
        assert_eq!(enumerate_trees(MAX_ENUMERATE + 1), Err(TreeError::TooLarge(MAX_ENUMERATE + 1)));
    }

    #[test]
    fn enumerated_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=6 {
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let total: f64 = enumerate_with_probabilities(&scores).unwrap().iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-9, "n={n} total={total}");
        }
    }

    #[test]
    fn uniform_three_word_frequencies() {
        let scores = [0.0; 3];
        let exact: HashMap<TreeNode, f64> = enumerate_with_probabilities(&scores).unwrap().into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 10_000;
        let mut counts: HashMap<TreeNode, usize> = HashMap::new();
        for _ in 0..draws {
            *counts.entry(sample_structure(&scores, &mut rng)).or_default() += 1;
        }
        assert_eq!(counts.len(), 5);
        for (tree, p) in &exact {
            let observed = counts[tree] as f64 / draws as f64;
            let sigma = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((observed - p).abs() < 3.0 * sigma, "{tree:?}: {observed} vs {p}");
        }
    }

    #[test]
    fn recorded_log_probs_match_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let s = tape.constant_vector(scores.clone());
        let tokens: Vec<usize> = (10..17).collect();
        let t = sample_tree(&mut tape, s, &tokens, &mut rng).unwrap();
        assert_eq!(t.steps.len(), 7);
        let total: f64 = t.steps.iter().map(|st| tape.scalar(st.log_prob)).sum();
        assert!((total.exp() - tree_probability(&t.root, &scores)).abs() < 1e-12);
        for st in &t.steps {
            assert!(st.span.contains(st.chosen));
            assert!(tape.scalar(st.log_prob) <= 0.0);
            assert_eq!(st.chosen_token, tokens[st.chosen]);
        }
    }

    #[test]
    fn depths_and_spans() {
        let t = greedy_tree(&[3.0, 1.0, 5.0, 2.0]).unwrap();
        assert_eq!(t.depths(4), vec![1, 2, 0, 1]);
        assert_eq!(t.height(), 2);
        let spans: Vec<(usize, Span)> = t.spans().into_iter().map(|(n, s)| (n.index, s)).collect();
        assert_eq!(spans[0], (2, Span::new(0, 4)));
        assert!(spans.contains(&(1, Span::new(1, 2))));
        assert!(spans.contains(&(3, Span::new(3, 4))));
        let post: Vec<usize> = t.post_order().iter().map(|n| n.index).collect();
        assert_eq!(*post.last().unwrap(), 2);
    }

    fn is_tie_broken_argmax_everywhere(t: &TreeNode, scores: &[f64]) -> bool {
        t.spans().into_iter().all(|(n, span)| argmax(scores, span) == n.index)
    }

    proptest! {
        #[test]
        fn greedy_invariants(scores in prop::collection::vec(-3.0f64..3.0, 1..50)) {
            let n = scores.len();
            let t = greedy_tree(&scores).unwrap();
            prop_assert_eq!(t.in_order(), (0..n).collect::<Vec<_>>());
            prop_assert!(is_tie_broken_argmax_everywhere(&t, &scores));
        }

        #[test]
        fn sampled_trees_preserve_order(scores in prop::collection::vec(-3.0f64..3.0, 1..30), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = sample_structure(&scores, &mut rng);
            prop_assert_eq!(t.in_order(), (0..scores.len()).collect::<Vec<_>>());
        }
    }
}
