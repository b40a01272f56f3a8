//! The unified photo/sketch embedding network with conditional SE gates and
//! its two classifier heads.

mod checkpoint;
mod network;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use network::{
    benchmark_logits, cse_forward, cse_gate, domain_code, forward_embed, original_logits, CseVars,
    Modality, ParamVars,
};
pub use params::{
    param_layout, ConvBlockParams, CseBlockParams, ModelConfig, ModelParams, ParamGroup, ParamInfo,
};
