//! Convolutional Macaron networks with hand-written reverse-mode gradients.

pub mod checkpoint;
pub mod conv;
pub mod encoder;
pub mod network;
pub mod ops;

pub use checkpoint::{parse_pools, read_model, read_model_config, write_model};
pub use conv::{conv_block_backward, conv_block_forward, ConvBlockParams};
pub use encoder::{
    attention, macaron_layer, multi_head_attention, pff, positional_encoding, AttentionParams,
    LayerNormParams, MacaronLayerParams, PffParams,
};
pub use network::{
    backward, clm_forward, flm_forward, forward, init_params, temporal_max_pool,
    temporal_max_pool_backward, CmnParameters, ForwardTrace, ModelConfig, ParamView, Variant,
};
pub use ops::{layer_norm, mish, sigmoid};
