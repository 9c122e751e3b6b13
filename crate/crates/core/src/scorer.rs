//! Word importance scores: a two-layer ReLU MLP over context vectors, plus
//! the parameter-free tf-idf alternative.

use rand::Rng;

use crate::autodiff::{Shape, Tensor, Var};
use crate::encoder::EncodedSentence;
use crate::model::ModelError;
use crate::params::{uniform, ParamId, ParamStore, Session};
use crate::vocab::TfidfTable;

/// Hidden width of the scoring MLP.
pub const SCORER_HIDDEN: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scorer {
    /// `128 x 2*D_h`
    pub w1: ParamId,
    pub b1: ParamId,
    /// `1 x 128`
    pub w2: ParamId,
    pub b2: ParamId,
    pub dim_input: usize,
}

impl Scorer {
    pub fn new(store: &mut ParamStore, dim_input: usize, rng: &mut impl Rng) -> Self {
        let b_in = 1.0 / (dim_input as f64).sqrt();
        let b_hid = 1.0 / (SCORER_HIDDEN as f64).sqrt();
        Scorer {
            w1: store.add("scorer.w1", uniform(Shape::new(SCORER_HIDDEN, dim_input), b_in, rng), true),
            b1: store.add("scorer.b1", Tensor::zeros(Shape::vector(SCORER_HIDDEN)), true),
            w2: store.add("scorer.w2", uniform(Shape::new(1, SCORER_HIDDEN), b_hid, rng), true),
            b2: store.add("scorer.b2", Tensor::zeros(Shape::vector(1)), true),
            dim_input,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    /// `w2 . relu(w1 h + b1) + b2` as a `1x1` node.
    pub fn score_word(&self, sess: &mut Session<'_>, h: Var) -> Result<Var, ModelError> {
        let shape = sess.tape.shape(h);
        if shape != Shape::vector(self.dim_input) {
            return Err(ModelError::Dimension {
                what: "scorer input",
                expected: self.dim_input,
                found: shape.len(),
            });
        }
        let (w1, b1, w2, b2) = (sess.param(self.w1), sess.param(self.b1), sess.param(self.w2), sess.param(self.b2));
        let t = &mut sess.tape;
        let z = t.matmul(w1, h)?;
        let z = t.add(z, b1)?;
        let a = t.relu(z)?;
        let s = t.matmul(w2, a)?;
        Ok(t.add(s, b2)?)
    }

    /// One score per word, gathered into an `N`-vector.
    pub fn score_sentence(&self, sess: &mut Session<'_>, enc: &EncodedSentence) -> Result<Var, ModelError> {
        self.score_vectors(sess, &enc.h)
    }

    pub fn score_vectors(&self, sess: &mut Session<'_>, hs: &[Var]) -> Result<Var, ModelError> {
        if hs.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        let scores = hs
            .iter()
            .map(|&h| self.score_word(sess, h))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(sess.tape.concat(&scores)?)
    }
}

/// Tf-idf weight of each token; carries no parameters.
pub fn tfidf_as_scores<S: AsRef<str>>(tokens: &[S], tfidf: &TfidfTable) -> Result<Vec<f64>, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptySentence);
    }
    Ok(tokens.iter().map(|t| tfidf.weight(t.as_ref())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::finite_difference_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn setup(dim: usize) -> (ParamStore, Scorer) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let sc = Scorer::new(&mut store, dim, &mut rng);
        // Nonzero biases so the hand check covers them.
        for id in [sc.b1, sc.b2] {
            *store.get_mut(id) = uniform(store.get(id).shape(), 0.3, &mut rng);
        }
        (store, sc)
    }

    fn score(store: &ParamStore, sc: &Scorer, h: &[f64]) -> f64 {
        let mut s = Session::new(store);
        let hv = s.tape.constant_vector(h.to_vec());
        let out = sc.score_word(&mut s, hv).unwrap();
        s.tape.scalar(out)
    }

    #[test]
    fn zero_params_score_zero() {
        let (mut store, sc) = setup(4);
        for id in sc.param_ids() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        assert_eq!(score(&store, &sc, &[1.0, -2.0, 0.5, 3.0]), 0.0);
    }

    #[test]
    fn zero_input_zero_bias() {
        let (mut store, sc) = setup(4);
        store.get_mut(sc.b1).data_mut().fill(0.0);
        store.get_mut(sc.b2).data_mut().fill(0.0);
        assert_eq!(score(&store, &sc, &[0.0; 4]), 0.0);
    }

    #[test]
    fn matches_hand_evaluation() {
        let (store, sc) = setup(4);
        let h = [0.3, -1.1, 0.7, 1.9];
        let w1 = store.get(sc.w1);
        let b1 = store.get(sc.b1).data();
        let w2 = store.get(sc.w2).data();
        let b2 = store.get(sc.b2).data()[0];
        let mut expected = b2;
        for j in 0..SCORER_HIDDEN {
            let pre: f64 = w1.row(j).iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + b1[j];
            expected += w2[j] * pre.max(0.0);
        }
        assert!((score(&store, &sc, &h) - expected).abs() < 1e-12);
    }

    #[test]
    fn sentence_scores_are_positionwise() {
        let (store, sc) = setup(2);
        let hs = [[0.1, 0.2], [0.5, -0.4], [0.1, 0.2]];
        let mut s = Session::new(&store);
        let vars: Vec<Var> = hs.iter().map(|h| s.tape.constant_vector(h.to_vec())).collect();
        let all = sc.score_vectors(&mut s, &vars).unwrap();
        let v = s.tape.value(all).to_vec();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0], v[2]);
        let permuted = [vars[1], vars[2], vars[0]];
        let p = sc.score_vectors(&mut s, &permuted).unwrap();
        assert_eq!(s.tape.value(p), &[v[1], v[2], v[0]]);
        let one = sc.score_vectors(&mut s, &vars[..1]).unwrap();
        assert_eq!(s.tape.value(one), &[v[0]]);
    }

    #[test]
    fn dimension_mismatch() {
        let (store, sc) = setup(4);
        let mut s = Session::new(&store);
        let h = s.tape.constant_vector(vec![1.0; 3]);
        assert!(matches!(sc.score_word(&mut s, h), Err(ModelError::Dimension { .. })));
    }

    #[test]
    fn gradient_check_theta() {
        let (store, sc) = setup(4);
        let h = vec![0.4, -0.9, 1.3, 0.2];
        let err = finite_difference_params(
            &store,
            &sc.param_ids(),
            |s| {
                let hv = s.tape.constant_vector(h.clone());
                let out = sc.score_word(s, hv).unwrap();
                s.tape.tanh(out).unwrap()
            },
            1e-5,
        );
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn tfidf_scores_lookup() {
        let table = TfidfTable::from_weights(HashMap::from([("good".to_string(), 0.7)]));
        let s = tfidf_as_scores(&["good", "unseen", "good"], &table).unwrap();
        assert_eq!(s, vec![0.7, 0.0, 0.7]);
        let empty: [&str; 0] = [];
        assert!(tfidf_as_scores(&empty, &table).is_err());
    }
}
