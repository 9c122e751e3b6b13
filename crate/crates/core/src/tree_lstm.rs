//! Three-input Tree-LSTM composition and bottom-up tree embedding.
//!
//! A node combines its left child, right child and its own word state.
//! Gate rows of the composition matrix are packed as
//! `(input, forget_left, forget_right, forget_word, output, candidate)`.

use rand::Rng;

use crate::autodiff::{Shape, Tensor, Var};
use crate::encoder::EncodedSentence;
use crate::model::ModelError;
use crate::params::{uniform, ParamId, ParamStore, Session};
use crate::tree::TreeNode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Composer {
    /// `6*D x 3*D`
    pub weight: ParamId,
    /// `6*D`
    pub bias: ParamId,
    /// Node state width.
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeState {
    pub h: Var,
    pub c: Var,
}

impl Composer {
    pub fn new(store: &mut ParamStore, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((3 * dim) as f64).sqrt();
        Composer {
            weight: store.add("composer.weight", uniform(Shape::new(6 * dim, 3 * dim), bound, rng), true),
            bias: store.add("composer.bias", Tensor::zeros(Shape::vector(6 * dim)), true),
            dim,
        }
    }

    fn zero_state(&self, sess: &mut Session<'_>) -> NodeState {
        let z = sess.tape.zeros(Shape::vector(self.dim));
        NodeState { h: z, c: z }
    }

    fn check(&self, sess: &Session<'_>, s: &NodeState) -> Result<(), ModelError> {
        for v in [s.h, s.c] {
            let shape = sess.tape.shape(v);
            if shape != Shape::vector(self.dim) {
                return Err(ModelError::Dimension {
                    what: "tree-lstm state",
                    expected: self.dim,
                    found: shape.len(),
                });
            }
        }
        Ok(())
    }

    /// Composes one node. Missing children are replaced by zero states.
    pub fn compose(
        &self,
        sess: &mut Session<'_>,
        left: Option<NodeState>,
        right: Option<NodeState>,
        word: NodeState,
    ) -> Result<NodeState, ModelError> {
        let left = match left {
            Some(s) => s,
            None => self.zero_state(sess),
        };
        let right = match right {
            Some(s) => s,
            None => self.zero_state(sess),
        };
        for s in [&left, &right, &word] {
            self.check(sess, s)?;
        }
        let (w, b) = (sess.param(self.weight), sess.param(self.bias));
        let d = self.dim;
        let t = &mut sess.tape;
        let input = t.concat(&[left.h, right.h, word.h])?;
        let pre = t.matmul(w, input)?;
        let pre = t.add(pre, b)?;
        let mut gates = Vec::with_capacity(6);
        for k in 0..6 {
            let g = t.slice(pre, k * d, d)?;
            gates.push(if k == 5 { t.tanh(g)? } else { t.sigmoid(g)? });
        }
        let (i, f_l, f_r, f_w, o, g) = (gates[0], gates[1], gates[2], gates[3], gates[4], gates[5]);
        let a = t.mul(f_l, left.c)?;
        let bb = t.mul(f_r, right.c)?;
        let cc = t.mul(f_w, word.c)?;
        let dd = t.mul(i, g)?;
        let c = t.add_all(&[a, bb, cc, dd])?;
        let squashed = t.tanh(c)?;
        let h = t.mul(o, squashed)?;
        Ok(NodeState { h, c })
    }

    /// Evaluates every node after its children and returns the root state.
    pub fn embed_tree(&self, sess: &mut Session<'_>, root: &TreeNode, enc: &EncodedSentence) -> Result<NodeState, ModelError> {
        let n = enc.len();
        let mut states: Vec<Option<NodeState>> = vec![None; n];
        let mut evaluated = 0usize;
        for node in root.post_order() {
            if node.index >= n {
                return Err(ModelError::IndexOutOfRange { index: node.index, len: n });
            }
            let child = |c: &Option<Box<TreeNode>>, states: &mut Vec<Option<NodeState>>| {
                c.as_ref().and_then(|c| states.get_mut(c.index).and_then(Option::take))
            };
            let left = child(&node.left, &mut states);
            let right = child(&node.right, &mut states);
            let word = NodeState {
                h: enc.h[node.index],
                c: enc.c[node.index],
            };
            states[node.index] = Some(self.compose(sess, left, right, word)?);
            evaluated += 1;
        }
        debug_assert_eq!(evaluated, root.size());
        Ok(states[root.index].expect("root evaluated"))
    }
}
