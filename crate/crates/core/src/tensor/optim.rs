use super::Tensor;
use crate::error::{Error, Result};

/// Heavy-ball SGD state: one velocity buffer per parameter tensor.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    velocity: Vec<Tensor>,
    lr: f64,
    momentum: f64,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {momentum}"
            )));
        }
        Ok(OptimizerState {
            velocity: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
            lr,
            momentum,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// One update: `v <- momentum*v + g`, `p <- p - lr*v`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} velocity buffers, got {} params and {} grads",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if param.numel() != grad.len() || vel.numel() != grad.len() {
                return Err(Error::Shape(format!(
                    "parameter/gradient size mismatch: {} vs {}",
                    param.numel(),
                    grad.len()
                )));
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric("non-finite gradient in SGD step".into()));
            }
            for ((p, g), v) in param
                .data_mut()
                .iter_mut()
                .zip(*grad)
                .zip(vel.data_mut())
            {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
        Ok(())
    }
}
