//! Bias-corrected Adam.

use super::params::{Gradients, ParamStore};
use super::tensor::Real;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
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
            eps: 1e-7,
        }
    }
}

/// Applies one Adam update in place and increments the step counter.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
    learning_rate: f64,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    if grads.grads.len() != params.len() || params.iter().zip(&grads.grads).any(|(p, g)| p.value.len() != g.len()) {
        return Err(NnError::ShapeMismatch(
            "gradients are not shaped like the parameters".into(),
        ));
    }
    params.step += 1;
    let t = params.step as i32;
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let c1 = T::from_f64_lossy(1.0 / (1.0 - cfg.beta1.powi(t)));
    let c2 = T::from_f64_lossy(1.0 / (1.0 - cfg.beta2.powi(t)));
    let lr = T::from_f64_lossy(learning_rate);
    let eps = T::from_f64_lossy(cfg.eps);
    for (p, g) in params.iter_mut().zip(&grads.grads) {
        for i in 0..g.len() {
            let gi = g[i];
            p.m[i] = b1 * p.m[i] + (one - b1) * gi;
            p.v[i] = b2 * p.v[i] + (one - b2) * gi * gi;
            let m_hat = p.m[i] * c1;
            let v_hat = p.v[i] * c2;
            p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new(0);
        let n = values.len();
        s.push("p".into(), vec![n], values);
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_sign() {
        let mut s = store(vec![1.0, -2.0, 0.5]);
        let g = Gradients {
            grads: vec![vec![0.3, -4.0, 0.5]],
        };
        adam_step(&mut s, &g, 1e-3, &AdamConfig::default()).unwrap();
        let expected = [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3];
        for (v, e) in s.get(0).value.iter().zip(expected) {
            assert!((v - e).abs() <= 1e-6 * 1e-3, "{v} vs {e}");
        }
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_and_decays_moments() {
        let mut s = store(vec![1.0, 2.0]);
        let zero = Gradients {
            grads: vec![vec![0.0, 0.0]],
        };
        adam_step(&mut s, &zero, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(s.get(0).value, vec![1.0, 2.0]);

        let g = Gradients {
            grads: vec![vec![1.0, -1.0]],
        };
        adam_step(&mut s, &g, 1e-3, &AdamConfig::default()).unwrap();
        let m_before = s.get(0).m.clone();
        adam_step(&mut s, &zero, 1e-3, &AdamConfig::default()).unwrap();
        for (after, before) in s.get(0).m.iter().zip(&m_before) {
            assert!((after - 0.9 * before).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut s = store(vec![1.0, 2.0]);
        let g = Gradients { grads: vec![vec![1.0]] };
        assert!(matches!(
            adam_step(&mut s, &g, 1e-3, &AdamConfig::default()),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    /// Independent scalar Adam trajectory for f(x) = (x - 3)^2.
    fn scalar_adam_oracle(x0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut xs = vec![x];
        for t in 1..=steps {
            let g = 2.0 * (x - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32));
            let vh = v / (1.0 - 0.999f64.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + 1e-7);
            xs.push(x);
        }
        xs
    }

    #[test]
    fn quadratic_objective_decreases_monotonically_after_warmup() {
        let lr = 0.01;
        let oracle = scalar_adam_oracle(-1.0, lr, 100);
        let mut s = store(vec![-1.0]);
        let mut objective = vec![];
        for (step, expected_x) in oracle.iter().enumerate().take(100) {
            let x = s.get(0).value[0];
            assert!((x - expected_x).abs() < 1e-12, "step {step}: {x} vs {expected_x}");
            objective.push((x - 3.0).powi(2));
            let g = Gradients {
                grads: vec![vec![2.0 * (x - 3.0)]],
            };
            adam_step(&mut s, &g, lr, &AdamConfig::default()).unwrap();
        }
        for w in objective[5..].windows(2) {
            assert!(w[1] < w[0], "objective rose: {} -> {}", w[0], w[1]);
        }
    }
}
