//! Classification heads, task loss and the combined training objective.

use rand::{Rng, RngCore};

use crate::autodiff::{Shape, Tape, Tensor, Var};
use crate::model::ModelError;
use crate::params::{uniform, ParamId, ParamStore, Session};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// `[a; b; |a - b|; a * b]`.
pub fn pair_features(tape: &mut Tape, premise: Var, hypothesis: Var) -> Result<Var, ModelError> {
    let (sa, sb) = (tape.shape(premise), tape.shape(hypothesis));
    if sa != sb || !sa.is_vector() {
        return Err(ModelError::Dimension {
            what: "pair features",
            expected: sa.len(),
            found: sb.len(),
        });
    }
    let diff = tape.sub(premise, hypothesis)?;
    let dist = tape.abs(diff)?;
    let prod = tape.mul(premise, hypothesis)?;
    Ok(tape.concat(&[premise, hypothesis, dist, prod])?)
}

/// Whether stochastic layers (dropout, batch statistics) are active.
pub enum Phase<'r> {
    Train(&'r mut dyn RngCore),
    Eval,
}

impl Phase<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train(_))
    }
}

/// Inverted dropout with a constant mask; identity in evaluation.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, phase: &mut Phase<'_>) -> Result<Var, ModelError> {
    let Phase::Train(rng) = phase else {
        return Ok(x);
    };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let shape = tape.shape(x);
    let mask = Tensor::from_fn(shape, |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
    let m = tape.leaf(mask);
    Ok(tape.mul(x, m)?)
}

/// Feature-wise batch normalization with learned scale and shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub dim: usize,
}

/// Batch statistics observed in one training forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub layer: BatchNorm,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::vector(vec![1.0; dim]), true),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(Shape::vector(dim)), true),
            running_mean: store.add(format!("{prefix}.running_mean"), Tensor::zeros(Shape::vector(dim)), false),
            running_var: store.add(format!("{prefix}.running_var"), Tensor::vector(vec![1.0; dim]), false),
            dim,
        }
    }

    /// Normalizes `xs` with their own statistics (training) or with the
    /// running averages (evaluation).
    pub fn forward(&self, sess: &mut Session<'_>, xs: &[Var], train: bool) -> Result<(Vec<Var>, Option<BatchStats>), ModelError> {
        let (gamma, beta) = (sess.param(self.gamma), sess.param(self.beta));
        let store = sess.store();
        let t = &mut sess.tape;
        let (mean, denom, stats) = if train {
            let inv_n = 1.0 / xs.len() as f64;
            let sum = t.add_all(xs)?;
            let mean = t.scale(sum, inv_n)?;
            let mut sq = Vec::with_capacity(xs.len());
            for &x in xs {
                let d = t.sub(x, mean)?;
                sq.push(t.mul(d, d)?);
            }
            let sq_sum = t.add_all(&sq)?;
            let var = t.scale(sq_sum, inv_n)?;
            let eps = t.constant_vector(vec![BN_EPS; self.dim]);
            let shifted = t.add(var, eps)?;
            let denom = t.sqrt(shifted)?;
            let stats = BatchStats {
                layer: *self,
                mean: t.value(mean).to_vec(),
                var: t.value(var).to_vec(),
            };
            (mean, denom, Some(stats))
        } else {
            let mean = t.leaf(store.get(self.running_mean).clone());
            let denom = store.get(self.running_var).data().iter().map(|v| (v + BN_EPS).sqrt()).collect();
            (mean, t.constant_vector(denom), None)
        };
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let centered = t.sub(x, mean)?;
            let normed = t.div(centered, denom)?;
            let scaled = t.mul(normed, gamma)?;
            out.push(t.add(scaled, beta)?);
        }
        Ok((out, stats))
    }
}

impl BatchStats {
    /// Exponential moving average update of the running statistics.
    pub fn apply(&self, store: &mut ParamStore) {
        for (id, batch) in [(self.layer.running_mean, &self.mean), (self.layer.running_var, &self.var)] {
            for (r, b) in store.get_mut(id).data_mut().iter_mut().zip(batch) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
    }
}

/// MLP with one ReLU hidden layer followed by log-softmax.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classifier {
    /// `D_c x input_dim`
    pub w_hidden: ParamId,
    pub b_hidden: ParamId,
    /// `classes x D_c`
    pub w_out: ParamId,
    pub b_out: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    /// Normalization of the MLP input and of its hidden output.
    pub batch_norm: Option<(BatchNorm, BatchNorm)>,
    pub dropout: f64,
}

impl Classifier {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        batch_norm: bool,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let b1 = 1.0 / (input_dim as f64).sqrt();
        let b2 = 1.0 / (hidden_dim as f64).sqrt();
        let w_hidden = store.add("classifier.w_hidden", uniform(Shape::new(hidden_dim, input_dim), b1, rng), true);
        let b_hidden = store.add("classifier.b_hidden", Tensor::zeros(Shape::vector(hidden_dim)), true);
        let w_out = store.add("classifier.w_out", uniform(Shape::new(num_classes, hidden_dim), b2, rng), true);
        let b_out = store.add("classifier.b_out", Tensor::zeros(Shape::vector(num_classes)), true);
        let batch_norm = batch_norm.then(|| {
            (
                BatchNorm::new(store, "classifier.bn_input", input_dim),
                BatchNorm::new(store, "classifier.bn_hidden", hidden_dim),
            )
        });
        Classifier {
            w_hidden,
            b_hidden,
            w_out,
            b_out,
            input_dim,
            hidden_dim,
            num_classes,
            batch_norm,
            dropout,
        }
    }

    /// Class log-probabilities for a single feature vector.
    pub fn classify(&self, sess: &mut Session<'_>, features: Var, phase: &mut Phase<'_>) -> Result<Var, ModelError> {
        let (mut out, _) = self.classify_batch(sess, &[features], phase)?;
        Ok(out.pop().expect("one output"))
    }

    /// Class log-probabilities for every feature vector; batch normalization
    /// (when enabled) uses statistics of this batch during training.
    pub fn classify_batch(
        &self,
        sess: &mut Session<'_>,
        features: &[Var],
        phase: &mut Phase<'_>,
    ) -> Result<(Vec<Var>, Vec<BatchStats>), ModelError> {
        for &f in features {
            let shape = sess.tape.shape(f);
            if shape != Shape::vector(self.input_dim) {
                return Err(ModelError::Dimension {
                    what: "classifier input",
                    expected: self.input_dim,
                    found: shape.len(),
                });
            }
        }
        let train = phase.is_train();
        let mut stats = Vec::new();
        let mut xs = features.to_vec();
        if let Some((bn, _)) = &self.batch_norm {
            let (normed, s) = bn.forward(sess, &xs, train)?;
            xs = normed;
            stats.extend(s);
        }
        for x in xs.iter_mut() {
            *x = dropout(&mut sess.tape, *x, self.dropout, phase)?;
        }
        let (wh, bh) = (sess.param(self.w_hidden), sess.param(self.b_hidden));
        let mut hidden = Vec::with_capacity(xs.len());
        for &x in &xs {
            let z = sess.tape.matmul(wh, x)?;
            let z = sess.tape.add(z, bh)?;
            hidden.push(sess.tape.relu(z)?);
        }
        if let Some((_, bn)) = &self.batch_norm {
            let (normed, s) = bn.forward(sess, &hidden, train)?;
            hidden = normed;
            stats.extend(s);
        }
        for x in hidden.iter_mut() {
            *x = dropout(&mut sess.tape, *x, self.dropout, phase)?;
        }
        let (wo, bo) = (sess.param(self.w_out), sess.param(self.b_out));
        let mut out = Vec::with_capacity(hidden.len());
        for &h in &hidden {
            let logits = sess.tape.matmul(wo, h)?;
            let logits = sess.tape.add(logits, bo)?;
            out.push(sess.tape.log_softmax(logits)?);
        }
        Ok((out, stats))
    }
}

/// Negative log-likelihood of `label`.
pub fn task_loss(tape: &mut Tape, log_probs: Var, label: usize) -> Result<Var, ModelError> {
    let classes = tape.shape(log_probs).len();
    if label >= classes {
        return Err(ModelError::LabelOutOfRange { label, classes });
    }
    let picked = tape.pick(log_probs, label)?;
    Ok(tape.neg(picked)?)
}

/// Index of the largest log-probability (first on ties).
pub fn predict(log_probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in log_probs.iter().enumerate() {
        if v > log_probs[best] {
            best = i;
        }
    }
    best
}

/// Terms of `total = task + alpha * tree + lambda * l2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub task: Var,
    pub tree: Var,
    pub l2: Var,
    pub total: Var,
}

/// Plain values of a [`LossBreakdown`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub task: f64,
    pub tree: f64,
    pub l2: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn values(&self, tape: &Tape) -> LossValues {
        LossValues {
            task: tape.scalar(self.task),
            tree: tape.scalar(self.tree),
            l2: tape.scalar(self.l2),
            total: tape.scalar(self.total),
        }
    }
}

/// Assembles the combined loss. `tree = None` stands for a zero tree loss;
/// `l2_params` are the trainable parameter leaves.
pub fn total_loss(
    tape: &mut Tape,
    task: Var,
    tree: Option<Var>,
    l2_params: &[Var],
    alpha: f64,
    lambda: f64,
) -> Result<LossBreakdown, ModelError> {
    if !(alpha >= 0.0 && lambda >= 0.0) {
        return Err(ModelError::NegativeWeight);
    }
    let tree = match tree {
        Some(t) => t,
        None => tape.leaf(Tensor::scalar(0.0)),
    };
    let l2 = if l2_params.is_empty() {
        tape.leaf(Tensor::scalar(0.0))
    } else {
        let mut norms = Vec::with_capacity(l2_params.len());
        for &p in l2_params {
            let sq = tape.mul(p, p)?;
            norms.push(tape.sum(sq)?);
        }
        tape.add_all(&norms)?
    };
    let total = tape.lin_comb(&[(task, 1.0), (tree, alpha), (l2, lambda)])?;
    Ok(LossBreakdown { task, tree, l2, total })
}
