use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utility::UtilityFeature;

use super::network::Classifier;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum OptimizerKind {
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state; moment buffers are allocated on the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), grad.len());
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                if self.first.len() != params.len() {
                    self.first = vec![0.0; params.len()];
                    self.second = vec![0.0; params.len()];
                }
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.first[i] / c1;
                    let v_hat = self.second[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}

/// Computes the batch loss and gradient, then takes one optimizer step.
/// Returns the loss before the step.
pub fn backward_and_step(
    model: &mut Classifier,
    batch: &[(&UtilityFeature, usize)],
    optimizer: &mut Optimizer,
    lr: f64,
) -> Result<f64> {
    let (loss, grad) = model.loss_and_gradient(batch)?;
    if !loss.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss {loss} at step {} (batch of {})",
            optimizer.steps_taken() + 1,
            batch.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite gradient for parameter {i} at step {}",
            optimizer.steps_taken() + 1
        )));
    }
    optimizer.apply(model.params_mut(), &grad, lr);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::network::{Activation, Architecture};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn features(seed: u64, count: usize, m: usize) -> Vec<(UtilityFeature, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let rows = (0..m)
                    .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
                    .collect();
                (UtilityFeature::from_rows(rows).unwrap(), rng.random_range(0..m))
            })
            .collect()
    }

    #[test]
    fn single_sample_step_reduces_loss() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::default()] {
            let mut model = Classifier::init(Architecture::new(21, [32, 32], Activation::Relu), 1);
            let data = features(2, 1, 21);
            let batch = [(&data[0].0, data[0].1)];
            let before = model.loss(&batch).unwrap();
            let mut opt = Optimizer::new(kind);
            let reported = backward_and_step(&mut model, &batch, &mut opt, 1e-4).unwrap();
            assert_eq!(reported, before);
            assert!(model.loss(&batch).unwrap() < before);
        }
    }

    #[test]
    fn hundred_steps_are_bit_reproducible() {
        let run = || {
            let mut model = Classifier::init(Architecture::new(7, [8, 8], Activation::Relu), 42);
            let data = features(43, 16, 7);
            let batch: Vec<_> = data.iter().map(|(u, y)| (u, *y)).collect();
            let mut opt = Optimizer::new(OptimizerKind::default());
            for _ in 0..100 {
                backward_and_step(&mut model, &batch, &mut opt, 1e-3).unwrap();
            }
            model
        };
        let a = run();
        let b = run();
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn non_finite_loss_is_a_training_error() {
        let mut model = Classifier::init(Architecture::new(3, [4, 4], Activation::Relu), 0);
        model.params_mut()[0] = f64::NAN;
        let data = features(1, 1, 3);
        let mut opt = Optimizer::new(OptimizerKind::Sgd);
        let err = backward_and_step(&mut model, &[(&data[0].0, 0)], &mut opt, 0.1).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first Adam step is lr * sign(g) (up to epsilon).
        let mut opt = Optimizer::new(OptimizerKind::default());
        let mut params = vec![0.0, 0.0, 0.0];
        opt.apply(&mut params, &[2.0, -0.5, 0.0], 0.01);
        assert!((params[0] + 0.01).abs() < 1e-9);
        assert!((params[1] - 0.01).abs() < 1e-9);
        assert_eq!(params[2], 0.0);
    }
}
