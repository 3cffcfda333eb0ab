use crate::error::{Error, Result};

use super::params::ParamSet;

/// AdamW: Adam moment estimation with decoupled weight decay. The decay
/// term multiplies the parameter directly and never touches the gradient
/// path; moments are bias-corrected from the first step.
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamSet, lr: f64, weight_decay: f64) -> Self {
        let first = params.iter().map(|p| vec![0.0; p.value().numel()]).collect();
        let second = params.iter().map(|p| vec![0.0; p.value().numel()]).collect();
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients accumulated on `params`.
    /// A non-finite gradient aborts before any parameter is touched.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for p in params.iter() {
            if let Some(bad) = p.grad().iter().find(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    context: format!("parameter {} (value {bad})", p.name()),
                });
            }
        }
        self.step += 1;
        let correction1 = 1.0 - self.beta1.powi(self.step as i32);
        let correction2 = 1.0 - self.beta2.powi(self.step as i32);
        for (index, p) in params.iter_mut().enumerate() {
            let decay = if p.decay() { self.weight_decay } else { 0.0 };
            let m = &mut self.first[index];
            let v = &mut self.second[index];
            let (tensor, grad) = p.value_and_grad();
            let value = tensor.data_mut();
            for i in 0..value.len() {
                if decay != 0.0 {
                    value[i] *= 1.0 - self.lr * decay;
                }
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
