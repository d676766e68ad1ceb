//! The WDformer network: wavelet embedding, multi-head differential
//! attention over variate tokens, encoder stack, and time-domain
//! reconstruction of the forecast.

mod config;
mod forward;
mod params;

pub use config::{
    embedding_widths, next_multiple_pow2, AblationVariant, ModelConfig,
};
pub use forward::{
    diff_attention_head, encoder_layer_forward, forward, forward_ablated, forward_graph,
    forward_with_stats, lambda_init_schedule, multi_head_diff_attention,
    multi_head_standard_attention, wavelet_embed, ForwardMode, ForwardStats,
};
pub use params::{
    DiffAttentionParams, EmbeddingParams, EncoderLayerParams, HeadParams, HeadVars, LayerVars,
    LinearParams, LinearVars, ParamVars, WDformerParameters,
};
pub use params::EmbeddingVars;
