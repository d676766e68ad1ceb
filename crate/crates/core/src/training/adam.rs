//! Bias-corrected Adam with optional global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::model::WDformerParameters;
use crate::numerics::Tensor;

use super::TrainConfig;

/// First/second moment estimates aligned with the canonical parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &WDformerParameters) -> Self {
        let shapes: Vec<Vec<usize>> = params
            .named()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        AdamState {
            m: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update. Gradients must be aligned with the canonical parameter
/// order; a non-finite gradient aborts, naming the parameter path.
pub fn adam_step(
    params: &mut WDformerParameters,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut named = params.named_mut();
    if named.len() != grads.len() {
        return Err(Error::Precondition(format!(
            "gradient list has {} tensors, parameters have {}",
            grads.len(),
            named.len()
        )));
    }
    for ((path, p), g) in named.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Precondition(format!(
                "gradient shape {:?} does not match parameter {path} {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter {path}"
            )));
        }
    }

    let clip_scale = match cfg.gradient_clip_norm {
        Some(max_norm) => {
            let norm: f64 = grads
                .iter()
                .flat_map(|g| g.values())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                max_norm / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.step += 1;
    let t = state.step;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bias1 = 1.0 - b1.powi(t as i32);
    let bias2 = 1.0 - b2.powi(t as i32);

    for (idx, (_, p)) in named.iter_mut().enumerate() {
        let m = state.m[idx].values_mut();
        let v = state.v[idx].values_mut();
        let pv = p.values_mut();
        for ((pv, (m, v)), g) in pv
            .iter_mut()
            .zip(m.iter_mut().zip(v.iter_mut()))
            .zip(grads[idx].values())
        {
            let g = g * clip_scale;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *pv -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
