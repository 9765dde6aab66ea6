use super::{Result, TrainError};
use crate::tensor::{Gradients, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Adam {
        config: AdamConfig,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
        step: u64,
    },
    Sgd {
        momentum: f64,
        /// Allocated on the first step when `momentum > 0`.
        velocity: Option<Vec<Tensor>>,
    },
}

impl OptimizerState {
    pub fn adam(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        OptimizerState::Adam {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn sgd(momentum: f64) -> Self {
        OptimizerState::Sgd {
            momentum,
            velocity: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerState::Adam { .. } => "adam",
            OptimizerState::Sgd { .. } => "sgd",
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let OptimizerState::Adam { config, m, v, step } = state else {
        return Err(TrainError::VariantMismatch {
            expected: "adam",
            found: state.name(),
        });
    };
    *step += 1;
    let c1 = 1.0 - config.beta1.powi(*step as i32);
    let c2 = 1.0 - config.beta2.powi(*step as i32);
    for (((p, g), m), v) in store.iter_mut().zip(grads.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
        let w = p.value.data_mut();
        for (((w, &g), m), v) in w
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = config.beta1 * *m + (1.0 - config.beta1) * g;
            *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
            *w -= lr * weight_decay * *w;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + config.eps);
        }
    }
    Ok(())
}

/// `w ← w − lr·(g + wd·w)`, through a momentum buffer when configured.
pub fn sgd_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let OptimizerState::Sgd { momentum, velocity } = state else {
        return Err(TrainError::VariantMismatch {
            expected: "sgd",
            found: state.name(),
        });
    };
    if *momentum > 0.0 && velocity.is_none() {
        *velocity = Some(store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect());
    }
    for (k, (p, g)) in store.iter_mut().zip(grads.iter()).enumerate() {
        let w = p.value.data_mut();
        match velocity {
            Some(vel) => {
                for ((w, &g), b) in w.iter_mut().zip(g.data()).zip(vel[k].data_mut()) {
                    *b = *momentum * *b + g + weight_decay * *w;
                    *w -= lr * *b;
                }
            }
            None => {
                for (w, &g) in w.iter_mut().zip(g.data()) {
                    *w -= lr * (g + weight_decay * *w);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn one(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new([values.len()], values).unwrap());
        s
    }

    /// Gradient of ½‖w‖² through the tape.
    fn quad_grad(s: &ParamStore) -> Gradients {
        let mut g = Gradients::zeros_like(s);
        let mut t = Tape::with_params(s);
        let w = t.param(crate::tensor::ParamId(0));
        let sq = t.mul(w, w).unwrap();
        let sum = t.sum(sq);
        let half = t.scale(sum, 0.5);
        t.backward(half, &mut g).unwrap();
        g
    }

    fn norm(s: &ParamStore) -> f64 {
        s.iter().next().unwrap().value.data().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut s = one(vec![1.0, -2.0, 0.5]);
        let g = quad_grad(&s);
        let mut st = OptimizerState::adam(&s, AdamConfig::default());
        adam_step(&mut s, &g, &mut st, 0.01, 0.0).unwrap();
        for (w, w0) in s.iter().next().unwrap().value.data().iter().zip([1.0, -2.0, 0.5]) {
            let want = w0 - 0.01 * w0 / (f64::abs(w0) + 1e-8);
            assert!((w - want).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_on_a_convex_bowl() {
        let mut s = one(vec![3.0, -1.0, 2.0, 0.5]);
        let mut st = OptimizerState::adam(&s, AdamConfig::default());
        let mut norms = vec![norm(&s)];
        for _ in 0..200 {
            let g = quad_grad(&s);
            adam_step(&mut s, &g, &mut st, 0.01, 0.0).unwrap();
            norms.push(norm(&s));
        }
        assert!(norms.windows(2).all(|w| w[1] < w[0]));
        let mut z = one(vec![1.0, 2.0]);
        let zero = Gradients::zeros_like(&z);
        let mut st = OptimizerState::adam(&z, AdamConfig::default());
        adam_step(&mut z, &zero, &mut st, 0.1, 0.0).unwrap();
        assert_eq!(z.iter().next().unwrap().value.data(), &[1.0, 2.0]);
    }

    #[test]
    fn sgd_definition_and_contraction() {
        let mut s = one(vec![1.0]);
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(crate::tensor::ParamId(0)).data_mut()[0] = 0.5;
        let mut st = OptimizerState::sgd(0.0);
        sgd_step(&mut s, &g, &mut st, 0.1, 0.0).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data(), &[0.95]);

        // curvature 1, lr 0.5: each step halves the weights
        let mut s = one(vec![4.0, -8.0]);
        for k in 1..=10 {
            let g = quad_grad(&s);
            sgd_step(&mut s, &g, &mut st, 0.5, 0.0).unwrap();
            assert!((norm(&s) - 80f64.sqrt() * 0.5f64.powi(k)).abs() < 1e-12);
        }
        let before = s.clone();
        sgd_step(&mut s, &Gradients::zeros_like(&before), &mut st, 0.5, 0.0).unwrap();
        assert_eq!(s.iter().next().unwrap().value, before.iter().next().unwrap().value);
    }

    #[test]
    fn wrong_variant_is_fatal() {
        let mut s = one(vec![1.0]);
        let g = Gradients::zeros_like(&s);
        let mut st = OptimizerState::sgd(0.0);
        assert!(matches!(adam_step(&mut s, &g, &mut st, 0.1, 0.0), Err(TrainError::VariantMismatch { .. })));
        let mut st = OptimizerState::adam(&s, AdamConfig::default());
        assert!(sgd_step(&mut s, &g, &mut st, 0.1, 0.0).is_err());
    }
}
