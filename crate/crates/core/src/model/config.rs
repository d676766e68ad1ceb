//! Model hyperparameters and the ablation variant switch.

use crate::error::{Error, Result};
use crate::wavelet::{WaveletFamily, WaveletFilter};

use serde::{Deserialize, Serialize};

/// All model hyperparameters.
///
/// `lookback`/`horizon` are the requested window lengths; when they are not
/// divisible by `2^levels` and `auto_pad` is on, the time axis is padded by
/// edge replication up to the next multiple before any wavelet analysis and
/// forecasts are truncated back after reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Lookback window length K (timestamps).
    pub lookback: usize,
    /// Forecast horizon F.
    pub horizon: usize,
    /// Variate count N.
    pub variates: usize,
    /// Wavelet decomposition levels L.
    pub levels: usize,
    /// Embedding dimension d.
    pub dim: usize,
    /// Attention head count h.
    pub heads: usize,
    /// Encoder layer count.
    pub layers: usize,
    /// Feed-forward hidden width.
    pub ffn_dim: usize,
    /// Dropout rate in [0, 1), applied in training mode only.
    pub dropout: f64,
    pub wavelet: WaveletFamily,
    /// Per-window, per-variate standardization at input, inverted at output.
    pub instance_norm: bool,
    /// Edge-replication padding to satisfy divisibility preconditions.
    pub auto_pad: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lookback: 96,
            horizon: 96,
            variates: 1,
            levels: 2,
            dim: 64,
            heads: 4,
            layers: 1,
            ffn_dim: 128,
            dropout: 0.1,
            wavelet: WaveletFamily::Haar,
            instance_norm: true,
            auto_pad: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn filter(&self) -> WaveletFilter {
        WaveletFilter::new(self.wavelet)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Lookback after padding to the next multiple of `2^levels`.
    pub fn padded_lookback(&self) -> usize {
        next_multiple_pow2(self.lookback, self.levels)
    }

    /// Horizon after padding to the next multiple of `2^levels`.
    pub fn padded_horizon(&self) -> usize {
        next_multiple_pow2(self.horizon, self.levels)
    }

    /// Per-level embedding output widths: the first L coefficient sets map to
    /// `⌊d/(L+1)⌋`, the last takes the remainder so the widths sum to `d`.
    pub fn embedding_widths(&self) -> Vec<usize> {
        embedding_widths(self.dim, self.levels)
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.lookback == 0 {
            problems.push("model.lookback must be >= 1".to_string());
        }
        if self.horizon == 0 {
            problems.push("model.horizon must be >= 1".to_string());
        }
        if self.variates == 0 {
            problems.push("model.variates must be >= 1".to_string());
        }
        if self.levels == 0 {
            problems.push("model.levels must be >= 1".to_string());
        }
        if self.layers == 0 {
            problems.push("model.layers must be >= 1".to_string());
        }
        if self.heads == 0 || self.dim == 0 {
            problems.push("model.dim and model.heads must be >= 1".to_string());
        } else {
            if self.dim % self.heads != 0 {
                problems.push(format!(
                    "model.dim ({}) must be divisible by model.heads ({})",
                    self.dim, self.heads
                ));
            } else if self.dim / self.heads < 2 {
                problems.push(format!(
                    "head dimension {} is too small (need >= 2)",
                    self.dim / self.heads
                ));
            }
        }
        if self.levels > 0 && self.dim < self.levels + 1 {
            problems.push(format!(
                "model.dim ({}) must be >= levels+1 ({}) to partition the embedding",
                self.dim,
                self.levels + 1
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("model.dropout ({}) must be in [0, 1)", self.dropout));
        }
        if self.levels > 0 {
            let div = 1usize << self.levels;
            if !self.auto_pad {
                if self.lookback % div != 0 {
                    problems.push(format!(
                        "model.lookback ({}) not divisible by 2^levels ({div}) and padding is disabled",
                        self.lookback
                    ));
                }
                if self.horizon % div != 0 {
                    problems.push(format!(
                        "model.horizon ({}) not divisible by 2^levels ({div}) and padding is disabled",
                        self.horizon
                    ));
                }
            }
            // The deepest analysis level must still cover the filter support.
            let flen = self.filter().len();
            let deepest_in = self.padded_lookback() >> (self.levels - 1);
            if deepest_in < flen {
                problems.push(format!(
                    "lookback {} cannot support {} wavelet levels with a {}-tap filter",
                    self.lookback, self.levels, flen
                ));
            }
            let deepest_out = self.padded_horizon() >> (self.levels - 1);
            if deepest_out < flen {
                problems.push(format!(
                    "horizon {} cannot support {} wavelet levels with a {}-tap filter",
                    self.horizon, self.levels, flen
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Smallest multiple of `2^levels` that is `>= len`.
pub fn next_multiple_pow2(len: usize, levels: usize) -> usize {
    let div = 1usize << levels;
    len.div_ceil(div) * div
}

pub fn embedding_widths(dim: usize, levels: usize) -> Vec<usize> {
    let base = dim / (levels + 1);
    let mut widths = vec![base; levels];
    widths.push(dim - levels * base);
    widths
}

/// Table-3 ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    Full,
    NoWave,
    NoDiff,
    Neither,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Full,
        AblationVariant::NoWave,
        AblationVariant::NoDiff,
        AblationVariant::Neither,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoWave => "no_wave",
            AblationVariant::NoDiff => "no_diff",
            AblationVariant::Neither => "neither",
        }
    }

    pub fn uses_wavelet(&self) -> bool {
        matches!(self, AblationVariant::Full | AblationVariant::NoDiff)
    }

    pub fn uses_differential_attention(&self) -> bool {
        matches!(self, AblationVariant::Full | AblationVariant::NoWave)
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AblationVariant::Full),
            "no_wave" => Ok(AblationVariant::NoWave),
            "no_diff" => Ok(AblationVariant::NoDiff),
            "neither" => Ok(AblationVariant::Neither),
            other => Err(Error::Usage(format!(
                "unknown ablation variant {other:?} (expected full, no_wave, no_diff, neither)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_widths_partition_dim() {
        assert_eq!(embedding_widths(4, 1), vec![2, 2]);
        assert_eq!(embedding_widths(130, 3), vec![32, 32, 32, 34]);
        for dim in 4..80 {
            for levels in 1..4 {
                if dim >= levels + 1 {
                    let widths = embedding_widths(dim, levels);
                    assert_eq!(widths.len(), levels + 1);
                    assert_eq!(widths.iter().sum::<usize>(), dim);
                }
            }
        }
    }

    #[test]
    fn padding_arithmetic() {
        assert_eq!(next_multiple_pow2(96, 3), 96);
        assert_eq!(next_multiple_pow2(100, 3), 104);
        assert_eq!(next_multiple_pow2(1, 1), 2);
    }

    #[test]
    fn validation_collects_all_violations() {
        let cfg = ModelConfig {
            lookback: 0,
            dim: 7,
            heads: 2,
            dropout: 1.5,
            ..ModelConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        match err {
            Error::Config(problems) => {
                assert!(problems.len() >= 3, "{problems:?}");
            }
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn disabled_padding_requires_divisibility() {
        let cfg = ModelConfig {
            lookback: 96,
            horizon: 100,
            levels: 3,
            auto_pad: false,
            ..ModelConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("not divisible"), "{err}");
    }

    #[test]
    fn variant_round_trip() {
        for v in AblationVariant::ALL {
            assert_eq!(v.as_str().parse::<AblationVariant>().unwrap(), v);
        }
        assert!("bogus".parse::<AblationVariant>().is_err());
    }
}
