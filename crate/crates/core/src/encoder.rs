//! Bidirectional LSTM producing per-word context states.
//!
//! Gate rows are packed in the order `(input, forget, output, candidate)`;
//! checkpoints depend on this layout.

use rand::Rng;

use crate::autodiff::{Shape, Tensor, Var};
use crate::model::ModelError;
use crate::params::{uniform, ParamId, ParamStore, Session};

/// Weights of one LSTM direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmDirection {
    /// `4*D_h x D_x`
    pub w_input: ParamId,
    /// `4*D_h x D_h`
    pub w_recurrent: ParamId,
    /// `4*D_h`
    pub bias: ParamId,
}

impl LstmDirection {
    pub fn new(store: &mut ParamStore, prefix: &str, dim_input: usize, dim_hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (dim_hidden as f64).sqrt();
        let w_input = store.add(
            format!("{prefix}.w_input"),
            uniform(Shape::new(4 * dim_hidden, dim_input), bound, rng),
            true,
        );
        let w_recurrent = store.add(
            format!("{prefix}.w_recurrent"),
            uniform(Shape::new(4 * dim_hidden, dim_hidden), bound, rng),
            true,
        );
        let mut b = vec![0.0; 4 * dim_hidden];
        b[dim_hidden..2 * dim_hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.add(format!("{prefix}.bias"), Tensor::vector(b), true);
        LstmDirection {
            w_input,
            w_recurrent,
            bias,
        }
    }

    /// One recurrence step; returns `(h, c)`.
    pub fn step(&self, sess: &mut Session<'_>, x: Var, h: Var, c: Var, dim_hidden: usize) -> Result<(Var, Var), ModelError> {
        let (wi, wr, b) = (sess.param(self.w_input), sess.param(self.w_recurrent), sess.param(self.bias));
        let t = &mut sess.tape;
        let from_input = t.matmul(wi, x)?;
        let from_state = t.matmul(wr, h)?;
        let pre = t.add_all(&[from_input, from_state, b])?;
        let d = dim_hidden;
        let i = t.slice(pre, 0, d)?;
        let f = t.slice(pre, d, d)?;
        let o = t.slice(pre, 2 * d, d)?;
        let g = t.slice(pre, 3 * d, d)?;
        let i = t.sigmoid(i)?;
        let f = t.sigmoid(f)?;
        let o = t.sigmoid(o)?;
        let g = t.tanh(g)?;
        let keep = t.mul(f, c)?;
        let write = t.mul(i, g)?;
        let c_new = t.add(keep, write)?;
        let squashed = t.tanh(c_new)?;
        let h_new = t.mul(o, squashed)?;
        Ok((h_new, c_new))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Encoder {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
    pub dim_input: usize,
    pub dim_hidden: usize,
}

/// Per-word `h_i` and `c_i`, each `[forward; backward]` of width `2*D_h`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSentence {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

impl Encoder {
    pub fn new(store: &mut ParamStore, dim_input: usize, dim_hidden: usize, rng: &mut impl Rng) -> Self {
        Encoder {
            forward: LstmDirection::new(store, "encoder.forward", dim_input, dim_hidden, rng),
            backward: LstmDirection::new(store, "encoder.backward", dim_input, dim_hidden, rng),
            dim_input,
            dim_hidden,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.dim_hidden
    }

    /// Runs both directions from zero initial states over `inputs` (`D_x`
    /// column vectors).
    pub fn encode(&self, sess: &mut Session<'_>, inputs: &[Var]) -> Result<EncodedSentence, ModelError> {
        if inputs.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        for &x in inputs {
            let shape = sess.tape.shape(x);
            if shape != Shape::vector(self.dim_input) {
                return Err(ModelError::Dimension {
                    what: "encoder input",
                    expected: self.dim_input,
                    found: shape.len(),
                });
            }
        }
        let n = inputs.len();
        let d = self.dim_hidden;
        let zero = sess.tape.zeros(Shape::vector(d));

        let mut fwd = Vec::with_capacity(n);
        let (mut h, mut c) = (zero, zero);
        for &x in inputs {
            (h, c) = self.forward.step(sess, x, h, c, d)?;
            fwd.push((h, c));
        }

        let mut bwd = vec![(zero, zero); n];
        let (mut h, mut c) = (zero, zero);
        for (i, &x) in inputs.iter().enumerate().rev() {
            (h, c) = self.backward.step(sess, x, h, c, d)?;
            bwd[i] = (h, c);
        }

        let mut out = EncodedSentence {
            h: Vec::with_capacity(n),
            c: Vec::with_capacity(n),
        };
        for ((hf, cf), (hb, cb)) in fwd.into_iter().zip(bwd) {
            out.h.push(sess.tape.concat(&[hf, hb])?);
            out.c.push(sess.tape.concat(&[cf, cb])?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::finite_difference_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dx: usize, dh: usize, seed: u64) -> (ParamStore, Encoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, dx, dh, &mut rng);
        (store, enc)
    }

    fn words(rng: &mut ChaCha8Rng, n: usize, dx: usize) -> Vec<Tensor> {
        (0..n).map(|_| uniform(Shape::vector(dx), 1.0, rng)).collect()
    }

    fn run(store: &ParamStore, enc: &Encoder, xs: &[Tensor]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut s = Session::new(store);
        let vars: Vec<Var> = xs.iter().map(|x| s.tape.leaf(x.clone())).collect();
        let e = enc.encode(&mut s, &vars).unwrap();
        (
            e.h.iter().map(|&v| s.tape.value(v).to_vec()).collect(),
            e.c.iter().map(|&v| s.tape.value(v).to_vec()).collect(),
        )
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let (mut store, enc) = setup(3, 2, 1);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, c) = run(&store, &enc, &words(&mut rng, 4, 3));
        assert!(h.iter().flatten().all(|&v| v == 0.0));
        assert!(c.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_word_runs_both_directions_once() {
        let (store, enc) = setup(3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs = words(&mut rng, 1, 3);
        let (h, _) = run(&store, &enc, &xs);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].len(), 4);

        // Manual single step on the same word for each direction.
        let mut s = Session::new(&store);
        let x = s.tape.leaf(xs[0].clone());
        let z = s.tape.zeros(Shape::vector(2));
        let (hf, _) = enc.forward.step(&mut s, x, z, z, 2).unwrap();
        let (hb, _) = enc.backward.step(&mut s, x, z, z, 2).unwrap();
        let expect: Vec<f64> = s.tape.value(hf).iter().chain(s.tape.value(hb)).copied().collect();
        assert_eq!(h[0], expect);
    }

    #[test]
    fn empty_sentence_rejected() {
        let (store, enc) = setup(3, 2, 2);
        let mut s = Session::new(&store);
        assert!(matches!(enc.encode(&mut s, &[]), Err(ModelError::EmptySentence)));
        let wrong = s.tape.zeros(Shape::vector(5));
        assert!(matches!(enc.encode(&mut s, &[wrong]), Err(ModelError::Dimension { .. })));
    }

    #[test]
    fn reversed_sentence_with_swapped_directions_mirrors_states() {
        let (store, enc) = setup(3, 2, 5);
        let swapped = Encoder {
            forward: enc.backward,
            backward: enc.forward,
            ..enc
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs = words(&mut rng, 5, 3);
        let mut rev = xs.clone();
        rev.reverse();
        let (h, c) = run(&store, &enc, &xs);
        let (hr, cr) = run(&store, &swapped, &rev);
        let n = xs.len();
        for i in 0..n {
            let j = n - 1 - i;
            let swap = |v: &[f64]| [&v[2..], &v[..2]].concat();
            assert_eq!(swap(&hr[j]), h[i]);
            assert_eq!(swap(&cr[j]), c[i]);
        }
    }

    #[test]
    fn directional_dependence() {
        let (store, enc) = setup(3, 2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs = words(&mut rng, 5, 3);
        let (h, _) = run(&store, &enc, &xs);
        let k = 2;
        let mut perturbed = xs.clone();
        perturbed[k].data_mut()[0] += 0.5;
        let (hp, _) = run(&store, &enc, &perturbed);
        for i in 0..xs.len() {
            let fwd_same = h[i][..2] == hp[i][..2];
            let bwd_same = h[i][2..] == hp[i][2..];
            assert_eq!(fwd_same, i < k, "forward half at {i}");
            assert_eq!(bwd_same, i > k, "backward half at {i}");
        }
    }

    #[test]
    fn gradient_check_three_words() {
        let (mut store, enc) = setup(3, 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let words: Vec<ParamId> = words(&mut rng, 3, 3)
            .into_iter()
            .enumerate()
            .map(|(i, x)| store.add(format!("x{i}"), x, true))
            .collect();
        let ids: Vec<ParamId> = store.ids().collect();
        let err = finite_difference_params(
            &store,
            &ids,
            |s| {
                let xs: Vec<Var> = words.iter().map(|&w| s.param(w)).collect();
                let e = enc.encode(s, &xs).unwrap();
                let mut terms = Vec::new();
                for (i, (&h, &c)) in e.h.iter().zip(&e.c).enumerate() {
                    let hc = s.tape.mul(h, c).unwrap();
                    let sh = s.tape.sum(hc).unwrap();
                    terms.push((sh, 1.0 + i as f64));
                    let sc = s.tape.sum(c).unwrap();
                    terms.push((sc, 0.5));
                }
                s.tape.lin_comb(&terms).unwrap()
            },
            1e-5,
        );
        assert!(err < 1e-4, "{err}");
    }
}
