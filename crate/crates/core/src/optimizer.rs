//! ADAM with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::Float;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0) || !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid ADAM settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moments for every parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Ok(Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn check_matches(&self, store: &ParamStore) -> Result<()> {
        if self.m.len() != store.len() || self.v.len() != store.len() {
            return Err(Error::shape(
                "adam",
                format!("state for {} tensors, store has {}", self.m.len(), store.len()),
            ));
        }
        for ((_, p), (m, v)) in store.iter().zip(self.m.iter().zip(&self.v)) {
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("moment shape {:?} for {} {:?}", m.shape(), p.name, p.value.shape()),
                ));
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm observed before scaling.
pub fn clip_global_norm(grads: &mut [&mut [Float]], max_norm: Float) -> Result<Float> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidArgument(format!("max_norm {max_norm}")));
    }
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<Float>()
        .sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x *= scale);
        }
    }
    Ok(norm)
}

/// [`clip_global_norm`] over every gradient slot of `store`.
pub fn clip_store(store: &mut ParamStore, max_norm: Float) -> Result<Float> {
    let mut grads: Vec<&mut [Float]> = store.iter_mut().map(|p| p.grad.data_mut()).collect();
    clip_global_norm(&mut grads, max_norm)
}

/// One bias-corrected ADAM update from the stored gradients, which are
/// zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    state.check_matches(store)?;
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (beta1 as Float, beta2 as Float);
    for (p, (m, v)) in store.iter_mut().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (theta, g) = (p.value.data_mut(), p.grad.data_mut());
        for i in 0..theta.len() {
            let gi = g[i];
            let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi as f64 / c1;
            let v_hat = vi as f64 / c2;
            theta[i] -= (lr * m_hat / (v_hat.sqrt() + eps)) as Float;
            g[i] = 0.0;
        }
    }
    Ok(())
}
