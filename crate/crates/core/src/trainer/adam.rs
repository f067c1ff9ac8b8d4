use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment buffers for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> Moments<T> {
    pub fn zeros(len: usize) -> Self {
        Self { m: vec![T::zero(); len], v: vec![T::zero(); len] }
    }
}

/// Bias-corrected Adam update of one tensor at step `t` (1-based).
pub fn adam_update<T: Real>(param: &mut [T], grad: &[T], moments: &mut Moments<T>, t: u64, lr: f64, cfg: &AdamConfig) {
    assert_eq!(param.len(), grad.len());
    assert_eq!(param.len(), moments.m.len());
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let c1 = T::of(1.0 / (1.0 - cfg.beta1.powf(t as f64)));
    let c2 = T::of(1.0 / (1.0 - cfg.beta2.powf(t as f64)));
    let lr = T::of(lr);
    let eps = T::of(cfg.eps);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut moments.m).zip(&mut moments.v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m * c1;
        let v_hat = *v * c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam state for a list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub t: u64,
    pub moments: Vec<Moments<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, tensor_lens: &[usize]) -> Self {
        Self { config, t: 0, moments: tensor_lens.iter().map(|&n| Moments::zeros(n)).collect() }
    }

    pub fn for_tensors(config: AdamConfig, tensors: &[&[T]]) -> Self {
        let lens: Vec<usize> = tensors.iter().map(|t| t.len()).collect();
        Self::new(config, &lens)
    }

    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != self.moments.len() {
            return Err(Error::Shape(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.moments.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.moments) {
            if p.len() != g.len() || p.len() != m.m.len() {
                return Err(Error::Shape("adam tensor length mismatch".into()));
            }
        }
        self.t += 1;
        for ((p, g), m) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            adam_update(p, g, m, self.t, lr, &self.config);
        }
        Ok(())
    }
}
