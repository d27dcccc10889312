use crate::error::{NnError, Result};
use crate::params::ParameterSet;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2.5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// One bias-corrected Adam update over every non-frozen parameter.
///
/// Gradients are checked for NaN/Inf before anything is modified, so a
/// failed step leaves the set untouched.
pub fn adam_step<T: Real>(params: &mut ParameterSet<T>, cfg: &AdamConfig) -> Result<()> {
    let next = params.step() + 1;
    for (name, p) in params.iter() {
        if params.is_frozen(name) {
            continue;
        }
        if p.grad().iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient { name: name.to_string(), step: next });
        }
    }
    let t = params.bump_step() as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one, lr, eps) = (T::one(), T::lit(cfg.lr), T::lit(cfg.eps));
    let bc1 = one - T::lit(cfg.beta1.powi(t));
    let bc2 = one - T::lit(cfg.beta2.powi(t));
    let names: Vec<String> = params.names().filter(|n| !params.is_frozen(n)).map(str::to_string).collect();
    for name in names {
        let p = params.param_mut(&name).expect("listed above");
        let value = std::sync::Arc::make_mut(&mut p.value);
        for i in 0..p.grad.len() {
            let g = p.grad[i];
            p.m[i] = b1 * p.m[i] + (one - b1) * g;
            p.v[i] = b2 * p.v[i] + (one - b2) * g * g;
            let mhat = p.m[i] / bc1;
            let vhat = p.v[i] / bc2;
            value.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
