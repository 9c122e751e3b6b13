//! First-order optimizers over a [`ParamStore`].

use crate::config::OptimizerKind;
use crate::params::{Grads, ParamStore};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADADELTA_RHO: f64 = 0.95;
const ADADELTA_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
enum State {
    Sgd,
    Adam { step: i32, m: Vec<Vec<f64>>, v: Vec<Vec<f64>> },
    Adadelta { sq_grad: Vec<Vec<f64>>, sq_delta: Vec<Vec<f64>> },
}

/// Updates trainable parameters in place; frozen ones are never touched.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub learning_rate: f64,
    state: State,
}

fn zeros_like(store: &ParamStore) -> Vec<Vec<f64>> {
    store.iter().map(|(_, _, t)| vec![0.0; t.data().len()]).collect()
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, store: &ParamStore) -> Self {
        let state = match kind {
            OptimizerKind::Sgd => State::Sgd,
            OptimizerKind::Adam => State::Adam {
                step: 0,
                m: zeros_like(store),
                v: zeros_like(store),
            },
            OptimizerKind::Adadelta => State::Adadelta {
                sq_grad: zeros_like(store),
                sq_delta: zeros_like(store),
            },
        };
        Optimizer { learning_rate, state }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        let lr = self.learning_rate;
        if let State::Adam { step, .. } = &mut self.state {
            *step += 1;
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if !store.is_trainable(id) {
                continue;
            }
            let Some(g) = grads.get(id) else {
                continue;
            };
            let k = id.index();
            let p = store.get_mut(id).data_mut();
            match &mut self.state {
                State::Sgd => {
                    for (w, g) in p.iter_mut().zip(g) {
                        *w -= lr * g;
                    }
                }
                State::Adam { step, m, v } => {
                    let c1 = 1.0 - ADAM_BETA1.powi(*step);
                    let c2 = 1.0 - ADAM_BETA2.powi(*step);
                    for (j, (w, g)) in p.iter_mut().zip(g).enumerate() {
                        m[k][j] = ADAM_BETA1 * m[k][j] + (1.0 - ADAM_BETA1) * g;
                        v[k][j] = ADAM_BETA2 * v[k][j] + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = m[k][j] / c1;
                        let v_hat = v[k][j] / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
                State::Adadelta { sq_grad, sq_delta } => {
                    for (j, (w, g)) in p.iter_mut().zip(g).enumerate() {
                        sq_grad[k][j] = ADADELTA_RHO * sq_grad[k][j] + (1.0 - ADADELTA_RHO) * g * g;
                        let delta = ((sq_delta[k][j] + ADADELTA_EPS).sqrt() / (sq_grad[k][j] + ADADELTA_EPS).sqrt()) * g;
                        sq_delta[k][j] = ADADELTA_RHO * sq_delta[k][j] + (1.0 - ADADELTA_RHO) * delta * delta;
                        *w -= lr * delta;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store() -> (ParamStore, Grads) {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::vector(vec![1.0, -2.0]), true);
        let b = s.add("b", Tensor::vector(vec![3.0]), false);
        let mut g = Grads::new(&s);
        g.add(a, &[0.5, -0.25]);
        g.add(b, &[1.0]);
        (s, g)
    }

    #[test]
    fn sgd_step() {
        let (mut s, g) = store();
        Optimizer::new(OptimizerKind::Sgd, 0.1, &s).step(&mut s, &g);
        assert_eq!(s.get(s.find("a").unwrap()).data(), &[1.0 - 0.05, -2.0 + 0.025]);
        assert_eq!(s.get(s.find("b").unwrap()).data(), &[3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (mut s, g) = store();
        Optimizer::new(OptimizerKind::Adam, 0.01, &s).step(&mut s, &g);
        let a = s.get(s.find("a").unwrap()).data();
        assert!((a[0] - 0.99).abs() < 1e-7);
        assert!((a[1] + 1.99).abs() < 1e-7);
    }

    #[test]
    fn zero_learning_rate_is_bitwise_identity() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::Adadelta] {
            let (mut s, g) = store();
            let before = s.clone();
            let mut opt = Optimizer::new(kind, 0.0, &s);
            for _ in 0..3 {
                opt.step(&mut s, &g);
            }
            assert_eq!(s, before, "{kind}");
        }
    }

    #[test]
    fn adadelta_descends() {
        let (mut s, g) = store();
        Optimizer::new(OptimizerKind::Adadelta, 1.0, &s).step(&mut s, &g);
        let a = s.get(s.find("a").unwrap()).data();
        assert!(a[0] < 1.0 && a[1] > -2.0);
    }
}
