//! Learnable parameters, their initialization, and tape binding.
//!
//! Parameter traversal order is fixed and shared by `named`, `named_mut`,
//! and `ParamVars::all_vars`; the optimizer, checkpoints, and gradient
//! extraction all rely on that single ordering.

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Tape, Tensor, Var};

use super::config::{AblationVariant, ModelConfig};
use super::forward::lambda_init_schedule;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `in × out`, row-major.
    pub weight: Tensor,
    /// Length `out`.
    pub bias: Tensor,
}

impl LinearParams {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let weight = Tensor::matrix(
            fan_in,
            fan_out,
            (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect(),
        )
        .expect("consistent init shape");
        let bias = Tensor::vector(vec![0.0; fan_out]);
        LinearParams { weight, bias }
    }
}

/// Per-head reparameterization vectors and the head's RMSNorm gain.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub lambda_q1: Tensor,
    pub lambda_k1: Tensor,
    pub lambda_q2: Tensor,
    pub lambda_k2: Tensor,
    /// Gain over the head output width `2·d_h`.
    pub norm_gain: Tensor,
}

impl HeadParams {
    fn init(rng: &mut ChaCha8Rng, head_dim: usize) -> Self {
        // λ vectors start small so λ ≈ λ_init early in training.
        let mut lvec = || {
            Tensor::vector(
                (0..head_dim)
                    .map(|_| crate::rngutil::normal(rng) * 0.1)
                    .collect(),
            )
        };
        HeadParams {
            lambda_q1: lvec(),
            lambda_k1: lvec(),
            lambda_q2: lvec(),
            lambda_k2: lvec(),
            norm_gain: Tensor::vector(vec![1.0; 2 * head_dim]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffAttentionParams {
    /// `d × 2d`: two query branches per head.
    pub wq: Tensor,
    /// `d × 2d`: two key branches per head.
    pub wk: Tensor,
    /// `d × 2d`: one value block of width `2·d_h` per head.
    pub wv: Tensor,
    /// Output map `2d × d` after head concatenation.
    pub wo: LinearParams,
    pub heads: Vec<HeadParams>,
}

impl DiffAttentionParams {
    fn init(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        let bound = 1.0 / (d as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut proj = || {
            Tensor::matrix(d, 2 * d, (0..d * 2 * d).map(|_| dist.sample(rng)).collect())
                .expect("consistent init shape")
        };
        let wq = proj();
        let wk = proj();
        let wv = proj();
        let wo = LinearParams::init(rng, 2 * d, d);
        let heads = (0..cfg.heads)
            .map(|_| HeadParams::init(rng, cfg.head_dim()))
            .collect();
        DiffAttentionParams {
            wq,
            wk,
            wv,
            wo,
            heads,
        }
    }

    /// The subtraction weight `λ = exp(λ_q1·λ_k1) − exp(λ_q2·λ_k2) + λ_init`
    /// for one head, evaluated on the current parameter values.
    pub fn lambda(&self, head: usize, lambda_init: f64) -> f64 {
        let h = &self.heads[head];
        let d1: f64 = dot(&h.lambda_q1, &h.lambda_k1);
        let d2: f64 = dot(&h.lambda_q2, &h.lambda_k2);
        d1.exp() - d2.exp() + lambda_init
    }
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    /// 1-based layer index; fixes the λ_init schedule position.
    pub layer_index: usize,
    pub attention: DiffAttentionParams,
    pub ffn1: LinearParams,
    pub ffn2: LinearParams,
    pub norm1_gain: Tensor,
    pub norm2_gain: Tensor,
}

impl EncoderLayerParams {
    pub fn lambda_init(&self) -> f64 {
        lambda_init_schedule(self.layer_index).expect("layer_index >= 1")
    }
}

/// Input embedding: per-level wavelet coefficient maps, or a single raw map
/// for the `-wave` ablation variants.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingParams {
    /// One map per coefficient set; output widths partition `d`.
    Wavelet(Vec<LinearParams>),
    /// Single `K → d` map on the raw window.
    Raw(LinearParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WDformerParameters {
    pub embedding: EmbeddingParams,
    pub layers: Vec<EncoderLayerParams>,
    /// Projection `d → F` (padded horizon on the wavelet path).
    pub head: LinearParams,
}

impl WDformerParameters {
    /// Deterministic seeded initialization for the given variant.
    pub fn init(cfg: &ModelConfig, variant: AblationVariant) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rand::SeedableRng::seed_from_u64(cfg.seed);
        let embedding = if variant.uses_wavelet() {
            let widths = cfg.embedding_widths();
            let lengths = crate::wavelet::segment_lengths(cfg.padded_lookback(), cfg.levels)?;
            EmbeddingParams::Wavelet(
                lengths
                    .iter()
                    .zip(&widths)
                    .map(|(&len, &w)| LinearParams::init(&mut rng, len, w))
                    .collect(),
            )
        } else {
            EmbeddingParams::Raw(LinearParams::init(&mut rng, cfg.lookback, cfg.dim))
        };
        let layers = (1..=cfg.layers)
            .map(|layer_index| EncoderLayerParams {
                layer_index,
                attention: DiffAttentionParams::init(&mut rng, cfg),
                ffn1: LinearParams::init(&mut rng, cfg.dim, cfg.ffn_dim),
                ffn2: LinearParams::init(&mut rng, cfg.ffn_dim, cfg.dim),
                norm1_gain: Tensor::vector(vec![1.0; cfg.dim]),
                norm2_gain: Tensor::vector(vec![1.0; cfg.dim]),
            })
            .collect();
        let head_out = if variant.uses_wavelet() {
            cfg.padded_horizon()
        } else {
            cfg.horizon
        };
        let head = LinearParams::init(&mut rng, cfg.dim, head_out);
        Ok(WDformerParameters {
            embedding,
            layers,
            head,
        })
    }

    /// Visits every tensor as `(dotted path, tensor)` in the canonical order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        match &self.embedding {
            EmbeddingParams::Wavelet(maps) => {
                for (i, m) in maps.iter().enumerate() {
                    out.push((format!("embedding.levels.{i}.weight"), &m.weight));
                    out.push((format!("embedding.levels.{i}.bias"), &m.bias));
                }
            }
            EmbeddingParams::Raw(m) => {
                out.push(("embedding.raw.weight".to_string(), &m.weight));
                out.push(("embedding.raw.bias".to_string(), &m.bias));
            }
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let a = &layer.attention;
            out.push((format!("layers.{l}.attention.wq"), &a.wq));
            out.push((format!("layers.{l}.attention.wk"), &a.wk));
            out.push((format!("layers.{l}.attention.wv"), &a.wv));
            out.push((format!("layers.{l}.attention.wo.weight"), &a.wo.weight));
            out.push((format!("layers.{l}.attention.wo.bias"), &a.wo.bias));
            for (k, h) in a.heads.iter().enumerate() {
                out.push((format!("layers.{l}.attention.heads.{k}.lambda_q1"), &h.lambda_q1));
                out.push((format!("layers.{l}.attention.heads.{k}.lambda_k1"), &h.lambda_k1));
                out.push((format!("layers.{l}.attention.heads.{k}.lambda_q2"), &h.lambda_q2));
                out.push((format!("layers.{l}.attention.heads.{k}.lambda_k2"), &h.lambda_k2));
                out.push((format!("layers.{l}.attention.heads.{k}.norm_gain"), &h.norm_gain));
            }
            out.push((format!("layers.{l}.ffn1.weight"), &layer.ffn1.weight));
            out.push((format!("layers.{l}.ffn1.bias"), &layer.ffn1.bias));
            out.push((format!("layers.{l}.ffn2.weight"), &layer.ffn2.weight));
            out.push((format!("layers.{l}.ffn2.bias"), &layer.ffn2.bias));
            out.push((format!("layers.{l}.norm1.gain"), &layer.norm1_gain));
            out.push((format!("layers.{l}.norm2.gain"), &layer.norm2_gain));
        }
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    /// Mutable variant of [`named`](Self::named); same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        match &mut self.embedding {
            EmbeddingParams::Wavelet(maps) => {
                for (i, m) in maps.iter_mut().enumerate() {
                    out.push((format!("embedding.levels.{i}.weight"), &mut m.weight));
                    out.push((format!("embedding.levels.{i}.bias"), &mut m.bias));
                }
            }
            EmbeddingParams::Raw(m) => {
                out.push(("embedding.raw.weight".to_string(), &mut m.weight));
                out.push(("embedding.raw.bias".to_string(), &mut m.bias));
            }
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let a = &mut layer.attention;
            out.push((format!("layers.{l}.attention.wq"), &mut a.wq));
            out.push((format!("layers.{l}.attention.wk"), &mut a.wk));
            out.push((format!("layers.{l}.attention.wv"), &mut a.wv));
            out.push((format!("layers.{l}.attention.wo.weight"), &mut a.wo.weight));
            out.push((format!("layers.{l}.attention.wo.bias"), &mut a.wo.bias));
            for (k, h) in a.heads.iter_mut().enumerate() {
                out.push((format!("layers.{l}.attention.heads.{k}.lambda_q1"), &mut h.lambda_q1));
                out.push((format!("layers.{l}.attention.heads.{k}.lambda_k1"), &mut h.lambda_k1));
                out.push((format!("layers.{l}.attention.heads.{k}.lambda_q2"), &mut h.lambda_q2));
                out.push((format!("layers.{l}.attention.heads.{k}.lambda_k2"), &mut h.lambda_k2));
                out.push((format!("layers.{l}.attention.heads.{k}.norm_gain"), &mut h.norm_gain));
            }
            out.push((format!("layers.{l}.ffn1.weight"), &mut layer.ffn1.weight));
            out.push((format!("layers.{l}.ffn1.bias"), &mut layer.ffn1.bias));
            out.push((format!("layers.{l}.ffn2.weight"), &mut layer.ffn2.weight));
            out.push((format!("layers.{l}.ffn2.bias"), &mut layer.ffn2.bias));
            out.push((format!("layers.{l}.norm1.gain"), &mut layer.norm1_gain));
            out.push((format!("layers.{l}.norm2.gain"), &mut layer.norm2_gain));
        }
        out.push(("head.weight".to_string(), &mut self.head.weight));
        out.push(("head.bias".to_string(), &mut self.head.bias));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Flattens every parameter into one vector, in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (_, t) in self.named() {
            out.extend_from_slice(t.values());
        }
        out
    }

    /// Writes a flat vector (as produced by [`flatten`](Self::flatten)) back.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Precondition(format!(
                "flat parameter vector has {} scalars, expected {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for (_, t) in self.named_mut() {
            let n = t.len();
            t.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Registers every parameter on the tape as a learnable leaf.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        let embedding = match &self.embedding {
            EmbeddingParams::Wavelet(maps) => EmbeddingVars::Wavelet(
                maps.iter().map(|m| LinearVars::bind(tape, m)).collect(),
            ),
            EmbeddingParams::Raw(m) => EmbeddingVars::Raw(LinearVars::bind(tape, m)),
        };
        let layers = self
            .layers
            .iter()
            .map(|layer| LayerVars {
                layer_index: layer.layer_index,
                wq: tape.param(layer.attention.wq.clone()),
                wk: tape.param(layer.attention.wk.clone()),
                wv: tape.param(layer.attention.wv.clone()),
                wo: LinearVars::bind(tape, &layer.attention.wo),
                heads: layer
                    .attention
                    .heads
                    .iter()
                    .map(|h| HeadVars {
                        lambda_q1: tape.param(h.lambda_q1.clone()),
                        lambda_k1: tape.param(h.lambda_k1.clone()),
                        lambda_q2: tape.param(h.lambda_q2.clone()),
                        lambda_k2: tape.param(h.lambda_k2.clone()),
                        norm_gain: tape.param(h.norm_gain.clone()),
                    })
                    .collect(),
                ffn1: LinearVars::bind(tape, &layer.ffn1),
                ffn2: LinearVars::bind(tape, &layer.ffn2),
                norm1_gain: tape.param(layer.norm1_gain.clone()),
                norm2_gain: tape.param(layer.norm2_gain.clone()),
            })
            .collect();
        let head = LinearVars::bind(tape, &self.head);
        ParamVars {
            embedding,
            layers,
            head,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    fn bind(tape: &mut Tape, p: &LinearParams) -> Self {
        LinearVars {
            weight: tape.param(p.weight.clone()),
            bias: tape.param(p.bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub lambda_q1: Var,
    pub lambda_k1: Var,
    pub lambda_q2: Var,
    pub lambda_k2: Var,
    pub norm_gain: Var,
}

#[derive(Debug, Clone)]
pub struct LayerVars {
    pub layer_index: usize,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: LinearVars,
    pub heads: Vec<HeadVars>,
    pub ffn1: LinearVars,
    pub ffn2: LinearVars,
    pub norm1_gain: Var,
    pub norm2_gain: Var,
}

#[derive(Debug, Clone)]
pub enum EmbeddingVars {
    Wavelet(Vec<LinearVars>),
    Raw(LinearVars),
}

/// Tape handles for one bound parameter set.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub embedding: EmbeddingVars,
    pub layers: Vec<LayerVars>,
    pub head: LinearVars,
}

impl ParamVars {
    /// Handles in the same canonical order as [`WDformerParameters::named`].
    pub fn all_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        match &self.embedding {
            EmbeddingVars::Wavelet(maps) => {
                for m in maps {
                    out.push(m.weight);
                    out.push(m.bias);
                }
            }
            EmbeddingVars::Raw(m) => {
                out.push(m.weight);
                out.push(m.bias);
            }
        }
        for layer in &self.layers {
            out.push(layer.wq);
            out.push(layer.wk);
            out.push(layer.wv);
            out.push(layer.wo.weight);
            out.push(layer.wo.bias);
            for h in &layer.heads {
                out.push(h.lambda_q1);
                out.push(h.lambda_k1);
                out.push(h.lambda_q2);
                out.push(h.lambda_k2);
                out.push(h.norm_gain);
            }
            out.push(layer.ffn1.weight);
            out.push(layer.ffn1.bias);
            out.push(layer.ffn2.weight);
            out.push(layer.ffn2.bias);
            out.push(layer.norm1_gain);
            out.push(layer.norm2_gain);
        }
        out.push(self.head.weight);
        out.push(self.head.bias);
        out
    }

    /// Gradient tensors aligned with the canonical parameter order.
    /// Parameters that do not participate in the loss get zero gradients.
    pub fn gradients(&self, grads: &Gradients, reference: &WDformerParameters) -> Vec<Tensor> {
        self.all_vars()
            .iter()
            .zip(reference.named())
            .map(|(v, (_, t))| match grads.wrt(*v) {
                Some(g) => Tensor::new(t.shape().to_vec(), g.to_vec())
                    .expect("gradient shape matches parameter"),
                None => Tensor::zeros(t.shape().to_vec()),
            })
            .collect()
    }
}
