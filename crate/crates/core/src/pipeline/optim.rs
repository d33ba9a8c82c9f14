use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterSet;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// First and second moments plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet) -> Self {
        OptimizerState { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

/// One AdamW update with bias correction and decoupled weight decay.
///
/// Parameters and moments are rounded to `f32` after the update so a
/// checkpoint holds the exact training state. A non-finite gradient rejects
/// the step and leaves everything untouched.
pub fn adamw_step(
    params: &mut ParameterSet,
    state: &mut OptimizerState,
    grads: &[Tensor],
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Contract(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::dim("shape", format!("gradient {} for parameter `{name}` {}", g.shape(), p.shape())));
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                op: "adamw_step".into(),
                detail: format!("gradient of `{name}` is {} at element {i}", g.data()[i]),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
    for (((p, m), v), g) in params.tensors_mut().zip(state.m.tensors_mut()).zip(state.v.tensors_mut()).zip(grads) {
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = f32_round(cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi);
            vd[i] = f32_round(cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi);
            let update = (md[i] / c1) / ((vd[i] / c2).sqrt() + cfg.eps);
            pd[i] = f32_round(pd[i] - lr * (update + cfg.weight_decay * pd[i]));
        }
    }
    Ok(())
}
