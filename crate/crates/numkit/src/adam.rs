use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments, one pair of accumulators per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn ensure(&mut self, shapes: impl Iterator<Item = usize> + Clone) -> Result<()> {
        if self.m.is_empty() {
            self.m = shapes.clone().map(|n| vec![0.0; n]).collect();
            self.v = shapes.map(|n| vec![0.0; n]).collect();
            return Ok(());
        }
        let lens: Vec<usize> = shapes.collect();
        if lens.len() != self.m.len() || lens.iter().zip(&self.m).any(|(n, m)| *n != m.len()) {
            return Err(NumError::Dimension {
                op: "adam_step",
                left: self.m.iter().map(Vec::len).collect(),
                right: lens,
            });
        }
        Ok(())
    }

    fn update(&mut self, k: usize, param: &mut [f64], grad: &[f64]) {
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (m, v) = (&mut self.m[k], &mut self.v[k]);
        for (((p, g), mi), vi) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p -= c.lr * mhat / (vhat.sqrt() + c.eps);
        }
    }

    /// One update over explicit parameter and gradient tensors.
    pub fn step_tensors(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(NumError::Dimension {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(NumError::Dimension {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.ensure(params.iter().map(Tensor::len))?;
        self.step += 1;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(k, p.data_mut(), g.data());
        }
        Ok(())
    }

    /// One update of every trainable parameter in `store` from its
    /// accumulated gradient. Frozen parameters are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let (values, grads, frozen) = store.parts_mut();
        self.ensure(values.iter().map(Tensor::len))?;
        self.step += 1;
        for k in 0..values.len() {
            if frozen[k] {
                continue;
            }
            self.update(k, values[k].data_mut(), &grads[k]);
        }
        Ok(())
    }
}
