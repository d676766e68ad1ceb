//! WDformer forward pass built on the autodiff tape.
//!
//! Pipeline: per-variate multi-level DWT of the lookback window, per-level
//! linear embedding concatenated to one width-d token per variate, a stack
//! of post-norm encoder blocks with multi-head differential attention, a
//! linear head, and SplitWave + IDWT back to the time domain. Ablation
//! variants swap the embedding for a raw linear map and/or the differential
//! attention for single-branch softmax attention.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::pad_to_length_edge;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::wavelet;

use super::config::{AblationVariant, ModelConfig};
use super::params::{EmbeddingVars, HeadVars, LayerVars, LinearVars, ParamVars, WDformerParameters};

/// RMSNorm floor for per-head normalization.
const RMS_EPS: f64 = 1e-8;
/// LayerNorm floor for the residual-block normalizations.
const LAYER_NORM_EPS: f64 = 1e-5;
/// Variance floor for per-window instance normalization.
const INSTANCE_EPS: f64 = 1e-5;

/// Per-layer scheduled constant `λ_init = 0.7 − 0.5·exp(−0.3·(l−1))`.
pub fn lambda_init_schedule(layer_index: usize) -> Result<f64> {
    if layer_index < 1 {
        return Err(Error::Precondition(
            "layer index for the λ_init schedule starts at 1".into(),
        ));
    }
    Ok(0.7 - 0.5 * (-0.3 * (layer_index as f64 - 1.0)).exp())
}

/// Structural counters filled during a forward pass.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ForwardStats {
    /// Scalar multiplications spent on attention score matrices (Q·Kᵀ).
    pub attention_score_muls: u64,
}

impl ForwardStats {
    fn count_scores(&mut self, tokens: usize, head_dim: usize) {
        self.attention_score_muls += (tokens * tokens * head_dim) as u64;
    }
}

/// Training mode carries the dropout RNG; evaluation is deterministic.
pub enum ForwardMode<'r> {
    Eval,
    Train { rng: &'r mut ChaCha8Rng },
}

/// Per-variate window standardization. Returns the normalized rows plus the
/// (scale, shift) needed to invert the map on the forecast.
fn instance_normalize(
    window: &Tensor,
    cfg: &ModelConfig,
) -> (Vec<Vec<f64>>, Option<(Vec<f64>, Vec<f64>)>) {
    let rows: Vec<Vec<f64>> = (0..window.rows()).map(|i| window.row(i).to_vec()).collect();
    if !cfg.instance_norm {
        return (rows, None);
    }
    let mut scale = Vec::with_capacity(rows.len());
    let mut shift = Vec::with_capacity(rows.len());
    let normalized = rows
        .into_iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = (var + INSTANCE_EPS).sqrt();
            scale.push(sd);
            shift.push(mean);
            row.iter().map(|v| (v - mean) / sd).collect()
        })
        .collect();
    (normalized, Some((scale, shift)))
}

/// Wavelet embedding (the full-model input path): per-variate multi-level
/// DWT, one linear map per coefficient set, concatenation to width d.
pub fn wavelet_embed(
    tape: &mut Tape,
    rows: &[Vec<f64>],
    maps: &[LinearVars],
    cfg: &ModelConfig,
) -> Result<Var> {
    let filter = cfg.filter();
    let padded = cfg.padded_lookback();
    let mut per_set: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(rows.len()); cfg.levels + 1];
    for row in rows {
        let prow = pad_to_length_edge(row, padded);
        let coeffs = wavelet::dwt_multilevel(&prow, cfg.levels, &filter)?;
        for (bucket, set) in per_set.iter_mut().zip(coeffs.sets()) {
            bucket.push(set.clone());
        }
    }
    if maps.len() != per_set.len() {
        return Err(Error::Precondition(format!(
            "embedding has {} maps but the analysis produced {} coefficient sets",
            maps.len(),
            per_set.len()
        )));
    }
    let mut parts = Vec::with_capacity(maps.len());
    for (set_rows, map) in per_set.iter().zip(maps) {
        let phi = tape.constant(Tensor::from_rows(set_rows)?);
        parts.push(tape.linear(phi, map.weight, map.bias)?);
    }
    tape.concat_cols(&parts)
}

/// `λ = exp(λ_q1·λ_k1) − exp(λ_q2·λ_k2) + λ_init` as a scalar tape node.
fn lambda_graph(tape: &mut Tape, head: &HeadVars, lambda_init: f64) -> Result<Var> {
    let d1 = tape.dot(head.lambda_q1, head.lambda_k1)?;
    let e1 = tape.exp(d1);
    let d2 = tape.dot(head.lambda_q2, head.lambda_k2)?;
    let e2 = tape.exp(d2);
    let diff = tape.sub(e1, e2)?;
    Ok(tape.add_const(diff, lambda_init))
}

/// One differential attention head:
/// `(softmax(Q₁K₁ᵀ/√d_h) − λ·softmax(Q₂K₂ᵀ/√d_h))·V`.
#[allow(clippy::too_many_arguments)]
pub fn diff_attention_head(
    tape: &mut Tape,
    q1: Var,
    q2: Var,
    k1: Var,
    k2: Var,
    v_head: Var,
    lambda: Var,
    head_dim: usize,
    stats: &mut ForwardStats,
) -> Result<Var> {
    let tokens = tape.value(q1).rows();
    let inv_sqrt = 1.0 / (head_dim as f64).sqrt();

    let s1 = tape.matmul_tb(q1, k1)?;
    stats.count_scores(tokens, head_dim);
    let s1 = tape.scale(s1, inv_sqrt);
    let a1 = tape.softmax_rows(s1)?;

    let s2 = tape.matmul_tb(q2, k2)?;
    stats.count_scores(tokens, head_dim);
    let s2 = tape.scale(s2, inv_sqrt);
    let a2 = tape.softmax_rows(s2)?;

    let a2_scaled = tape.mul_scalar(a2, lambda)?;
    let combined = tape.sub(a1, a2_scaled)?;
    tape.matmul(combined, v_head)
}

/// Multi-head differential attention: per-head RMSNorm scaled by
/// `(1 − λ_init)`, heads concatenated, mapped back to width d.
pub fn multi_head_diff_attention(
    tape: &mut Tape,
    x_en: Var,
    layer: &LayerVars,
    cfg: &ModelConfig,
    stats: &mut ForwardStats,
) -> Result<Var> {
    let lambda_init = lambda_init_schedule(layer.layer_index)?;
    let q = tape.matmul(x_en, layer.wq)?;
    let k = tape.matmul(x_en, layer.wk)?;
    let v = tape.matmul(x_en, layer.wv)?;
    let dh = cfg.head_dim();
    let mut heads = Vec::with_capacity(layer.heads.len());
    for (idx, head) in layer.heads.iter().enumerate() {
        let base = idx * 2 * dh;
        let q1 = tape.slice_cols(q, base, dh)?;
        let q2 = tape.slice_cols(q, base + dh, dh)?;
        let k1 = tape.slice_cols(k, base, dh)?;
        let k2 = tape.slice_cols(k, base + dh, dh)?;
        let v_head = tape.slice_cols(v, base, 2 * dh)?;
        let lambda = lambda_graph(tape, head, lambda_init)?;
        let out = diff_attention_head(tape, q1, q2, k1, k2, v_head, lambda, dh, stats)?;
        let normed = tape.rms_norm(out, head.norm_gain, RMS_EPS)?;
        heads.push(tape.scale(normed, 1.0 - lambda_init));
    }
    let cat = tape.concat_cols(&heads)?;
    tape.linear(cat, layer.wo.weight, layer.wo.bias)
}

/// Single-branch softmax attention for the `-DIFF` variants. Reuses the
/// first query/key branch of each head; λ vectors and per-head gains stay
/// untouched so their gradients are exactly zero.
pub fn multi_head_standard_attention(
    tape: &mut Tape,
    x_en: Var,
    layer: &LayerVars,
    cfg: &ModelConfig,
    stats: &mut ForwardStats,
) -> Result<Var> {
    let q = tape.matmul(x_en, layer.wq)?;
    let k = tape.matmul(x_en, layer.wk)?;
    let v = tape.matmul(x_en, layer.wv)?;
    let dh = cfg.head_dim();
    let tokens = tape.value(x_en).rows();
    let mut heads = Vec::with_capacity(layer.heads.len());
    for idx in 0..layer.heads.len() {
        let base = idx * 2 * dh;
        let q1 = tape.slice_cols(q, base, dh)?;
        let k1 = tape.slice_cols(k, base, dh)?;
        let v_head = tape.slice_cols(v, base, 2 * dh)?;
        let s = tape.matmul_tb(q1, k1)?;
        stats.count_scores(tokens, dh);
        let s = tape.scale(s, 1.0 / (dh as f64).sqrt());
        let a = tape.softmax_rows(s)?;
        heads.push(tape.matmul(a, v_head)?);
    }
    let cat = tape.concat_cols(&heads)?;
    tape.linear(cat, layer.wo.weight, layer.wo.bias)
}

fn apply_dropout(
    tape: &mut Tape,
    v: Var,
    cfg: &ModelConfig,
    mode: &mut ForwardMode,
) -> Result<Var> {
    let ForwardMode::Train { rng } = mode else {
        return Ok(v);
    };
    if cfg.dropout == 0.0 {
        return Ok(v);
    }
    let keep = 1.0 - cfg.dropout;
    let mask: Vec<f64> = (0..tape.value(v).len())
        .map(|_| {
            if rng.gen::<f64>() < cfg.dropout {
                0.0
            } else {
                1.0 / keep
            }
        })
        .collect();
    tape.mul_mask(v, mask)
}

/// Post-norm residual block: attention then feed-forward, dropout applied
/// after each sublayer in training mode only.
pub fn encoder_layer_forward(
    tape: &mut Tape,
    x: Var,
    layer: &LayerVars,
    cfg: &ModelConfig,
    variant: AblationVariant,
    mode: &mut ForwardMode,
    stats: &mut ForwardStats,
) -> Result<Var> {
    let attn = if variant.uses_differential_attention() {
        multi_head_diff_attention(tape, x, layer, cfg, stats)?
    } else {
        multi_head_standard_attention(tape, x, layer, cfg, stats)?
    };
    let attn = apply_dropout(tape, attn, cfg, mode)?;
    let sum1 = tape.add(x, attn)?;
    let y = tape.layer_norm(sum1, layer.norm1_gain, LAYER_NORM_EPS)?;

    let hidden = tape.linear(y, layer.ffn1.weight, layer.ffn1.bias)?;
    let act = tape.gelu(hidden);
    let ffn = tape.linear(act, layer.ffn2.weight, layer.ffn2.bias)?;
    let ffn = apply_dropout(tape, ffn, cfg, mode)?;
    let sum2 = tape.add(y, ffn)?;
    tape.layer_norm(sum2, layer.norm2_gain, LAYER_NORM_EPS)
}

/// Builds the full forecasting graph and returns the `N×F` output node.
pub fn forward_graph(
    tape: &mut Tape,
    window: &Tensor,
    vars: &ParamVars,
    cfg: &ModelConfig,
    variant: AblationVariant,
    mode: &mut ForwardMode,
    stats: &mut ForwardStats,
) -> Result<Var> {
    if window.shape() != [cfg.variates, cfg.lookback] {
        return Err(Error::Shape {
            op: "forward",
            lhs: window.shape().to_vec(),
            rhs: vec![cfg.variates, cfg.lookback],
        });
    }
    let (rows, denorm) = instance_normalize(window, cfg);

    let x_en = match (&vars.embedding, variant.uses_wavelet()) {
        (EmbeddingVars::Wavelet(maps), true) => wavelet_embed(tape, &rows, maps, cfg)?,
        (EmbeddingVars::Raw(map), false) => {
            let x = tape.constant(Tensor::from_rows(&rows)?);
            tape.linear(x, map.weight, map.bias)?
        }
        _ => {
            return Err(Error::Usage(format!(
                "parameter set does not match variant {}",
                variant.as_str()
            )))
        }
    };

    let mut h = x_en;
    for layer in &vars.layers {
        h = encoder_layer_forward(tape, h, layer, cfg, variant, mode, stats)?;
    }

    let yhat = tape.linear(h, vars.head.weight, vars.head.bias)?;
    let y_time = if variant.uses_wavelet() {
        let filter = cfg.filter();
        let rec = tape.idwt_rows(yhat, &filter, cfg.levels)?;
        if cfg.padded_horizon() > cfg.horizon {
            tape.slice_cols(rec, 0, cfg.horizon)?
        } else {
            rec
        }
    } else {
        yhat
    };

    match denorm {
        Some((scale, shift)) => tape.affine_rows(y_time, scale, shift),
        None => Ok(y_time),
    }
}

/// Deterministic evaluation-mode forecast for the full model.
pub fn forward(
    window: &Tensor,
    params: &WDformerParameters,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    forward_ablated(window, params, cfg, AblationVariant::Full)
}

/// Evaluation-mode forecast for any ablation variant.
pub fn forward_ablated(
    window: &Tensor,
    params: &WDformerParameters,
    cfg: &ModelConfig,
    variant: AblationVariant,
) -> Result<Tensor> {
    Ok(forward_with_stats(window, params, cfg, variant)?.0)
}

/// Evaluation-mode forecast plus structural counters.
pub fn forward_with_stats(
    window: &Tensor,
    params: &WDformerParameters,
    cfg: &ModelConfig,
    variant: AblationVariant,
) -> Result<(Tensor, ForwardStats)> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let mut stats = ForwardStats::default();
    let y = forward_graph(
        &mut tape,
        window,
        &vars,
        cfg,
        variant,
        &mut ForwardMode::Eval,
        &mut stats,
    )?;
    Ok((tape.value(y).clone(), stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_init_schedule_values() {
        assert!((lambda_init_schedule(1).unwrap() - 0.2).abs() < 1e-12);
        let l2 = lambda_init_schedule(2).unwrap();
        assert!((l2 - (0.7 - 0.5 * (-0.3f64).exp())).abs() < 1e-15);
        assert!((l2 - 0.329590).abs() < 1e-6);
        let mut prev = 0.0;
        for l in 1..=10 {
            let v = lambda_init_schedule(l).unwrap();
            assert!(v > prev && v < 0.7, "l={l} v={v}");
            prev = v;
        }
        assert!(lambda_init_schedule(0).is_err());
    }
}
