use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result, Tensor};

fn check_finite(name: &str, grad: &[f64]) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training {
            param: String::from(name),
            reason: String::from("non-finite gradient"),
        });
    }
    Ok(())
}

/// Plain gradient descent `w ← w − lr·g`.
pub fn sgd_step(name: &str, param: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Validation(format!("learning rate must be positive, got {lr}")));
    }
    if param.len() != grad.len() {
        return Err(Error::shape("sgd_step", &[param.len()], &[grad.len()]));
    }
    check_finite(name, grad)?;
    for (w, g) in param.iter_mut().zip(grad) {
        *w -= lr * g;
    }
    Ok(())
}

/// Rescales gradients in place so that their joint L2 norm is at most `max_norm`.
///
/// Returns the norm before clipping.
pub fn clip_global_norm<'a>(grads: impl IntoIterator<Item = &'a mut [f64]>, max_norm: f64) -> f64 {
    let mut all: Vec<&'a mut [f64]> = grads.into_iter().collect();
    let sq: f64 = all.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum();
    let norm = math::sqrt(sq);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in all.iter_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

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
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with bias correction. Moments are keyed by parameter name so they can
/// be checkpointed alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: BTreeMap<String, MomentState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::Validation(format!("learning rate must be positive, got {}", config.lr)));
        }
        Ok(Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    /// Advances the shared step counter; call once per optimizer step before `update`.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut [f64], grad: &[f64]) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::shape("adam_step", &[param.len()], &[grad.len()]));
        }
        check_finite(name, grad)?;
        let t = self.step.max(1) as i32;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let st = self
            .moments
            .entry(String::from(name))
            .or_insert_with(|| MomentState {
                m: vec![0.0; param.len()],
                v: vec![0.0; param.len()],
            });
        if st.m.len() != param.len() {
            return Err(Error::shape("adam_step", &[st.m.len()], &[param.len()]));
        }
        let c1 = 1.0 - math::powi(beta1, t);
        let c2 = 1.0 - math::powi(beta2, t);
        for j in 0..param.len() {
            st.m[j] = beta1 * st.m[j] + (1.0 - beta1) * grad[j];
            st.v[j] = beta2 * st.v[j] + (1.0 - beta2) * grad[j] * grad[j];
            let mh = st.m[j] / c1;
            let vh = st.v[j] / c2;
            param[j] -= lr * mh / (math::sqrt(vh) + eps);
        }
        Ok(())
    }

    /// Applies one step to every trainable tensor using its accumulated gradient.
    pub fn step_tensors<'a>(&mut self, params: impl IntoIterator<Item = (&'a str, &'a mut Tensor)>) -> Result<()> {
        self.begin_step();
        for (name, t) in params {
            let (value, grad) = t.value_and_grad_mut();
            if let Some(g) = grad {
                let g = g.to_vec();
                self.update(name, value, &g)?;
            }
        }
        Ok(())
    }
}
