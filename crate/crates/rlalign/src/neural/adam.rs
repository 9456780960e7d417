//! Adam with bias correction, applied to flat parameter tensors.

use super::qnet::{GradSet, QNetwork};
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr = {} must be non-negative", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{} = {} outside [0, 1)", name, b)));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps = {} must be positive", self.eps)));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair of buffers per parameter
/// tensor, plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(tensor_lens: &[usize]) -> Self {
        AdamState {
            m: tensor_lens.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![F::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn for_network(net: &QNetwork<F>) -> Self {
        let lens: Vec<usize> = net.trainable().iter().map(|t| t.len()).collect();
        Self::new(&lens)
    }

    /// One update over all tensors. `params[i]` and `grads[i]` must match
    /// the lengths this state was built with.
    pub fn step(
        &mut self,
        params: &mut [&mut [F]],
        grads: &[&[F]],
        cfg: &AdamConfig,
    ) -> Result<()> {
        cfg.validate()?;
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for i in 0..params.len() {
            if params[i].len() != self.m[i].len() || grads[i].len() != self.m[i].len() {
                return Err(Error::Dimension(format!(
                    "tensor {}: moments {}, params {}, grads {}",
                    i,
                    self.m[i].len(),
                    params[i].len(),
                    grads[i].len()
                )));
            }
        }

        self.t += 1;
        let b1 = F::from_f64(cfg.beta1);
        let b2 = F::from_f64(cfg.beta2);
        let one = F::one();
        let mc = F::from_f64(1.0 - cfg.beta1.powi(self.t as i32));
        let vc = F::from_f64(1.0 - cfg.beta2.powi(self.t as i32));
        let lr = F::from_f64(cfg.lr);
        let eps = F::from_f64(cfg.eps);

        for i in 0..params.len() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let g = grads[i];
            let p = &mut *params[i];
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mhat = m[j] / mc;
                let vhat = v[j] / vc;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one optimizer step to every trainable tensor of the network.
pub fn adam_step<F: Scalar>(
    net: &mut QNetwork<F>,
    grads: &GradSet<F>,
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
) -> Result<()> {
    let grad_slices: Vec<&[F]> = grads.tensors.iter().map(|t| t.as_slice()).collect();
    let mut params = net.trainable_mut();
    state.step(&mut params, &grad_slices, cfg)
}
