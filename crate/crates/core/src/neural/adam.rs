use serde::{Deserialize, Serialize};

use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam optimizer state for one [`ParameterSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParameterSet, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Argument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.tensor(i).shape() {
                return Err(Error::Argument(format!(
                    "gradient for `{}` has shape {:?}",
                    params.names()[i],
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.values_mut(i);
            for k in 0..g.len() {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Checks that the state matches `params` in count and shapes.
    pub fn check_compatible(&self, params: &ParameterSet) -> Result<()> {
        let ok = self.m.len() == params.len()
            && self.v.len() == params.len()
            && (0..params.len()).all(|i| {
                self.m[i].shape() == params.tensor(i).shape()
                    && self.v[i].shape() == params.tensor(i).shape()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::format(
                "optimizer",
                "moment shapes do not match parameters",
            ))
        }
    }

    /// Moment accumulators, for checkpointing.
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.add("x", Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_set(0.7);
        let mut adam = Adam::new(&p, 0.001);
        adam.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(p.tensor(0).item(), 0.7);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Bias-corrected moments at t = 1 are m = g and v = g^2, so the
        // step is lr * g / (|g| + eps).
        let mut p = scalar_set(0.0);
        let mut adam = Adam::new(&p, 0.001);
        adam.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        assert!((p.tensor(0).item() + 0.001).abs() < 1e-6);
    }

    #[test]
    fn identical_inputs_identical_results() {
        let mut p1 = scalar_set(0.3);
        let mut p2 = p1.clone();
        let mut a1 = Adam::new(&p1, 0.01);
        let mut a2 = a1.clone();
        for g in [0.5, -0.2, 1.5] {
            a1.step(&mut p1, &[Tensor::scalar(g)]).unwrap();
            a2.step(&mut p2, &[Tensor::scalar(g)]).unwrap();
        }
        assert_eq!(p1, p2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = scalar_set(0.0);
        let mut adam = Adam::new(&p, 0.001);
        assert!(adam.step(&mut p, &[Tensor::zeros(1, 2)]).is_err());
        assert!(adam.step(&mut p, &[]).is_err());
    }
}
