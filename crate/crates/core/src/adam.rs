//! Adam with bias correction over [`ModelParams`]-shaped buffers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::ModelParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn same_layout(a: &ModelParams, b: &ModelParams) -> bool {
    let (ta, tb) = (a.tensors(), b.tensors());
    ta.len() == tb.len()
        && ta
            .iter()
            .zip(&tb)
            .all(|((na, xa), (nb, xb))| na == nb && xa.len() == xb.len())
}

/// One update. Gradients are checked before anything is modified, so a
/// failed step leaves both `params` and `state` untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !same_layout(params, grads) || !same_layout(params, &state.m) {
        return Err(Error::Dimension(
            "gradient or optimizer buffers do not match parameter shapes".into(),
        ));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Parameter(format!("learning rate {lr} must be positive")));
    }
    for (name, g) in grads.tensors() {
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in {name}[{pos}]: {}",
                g[pos]
            )));
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
