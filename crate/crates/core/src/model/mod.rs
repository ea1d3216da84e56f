//! Decoder-only MoE transformer.

pub mod checkpoint;
mod config;
mod moe;
mod params;
mod transformer;

pub use checkpoint::{Checkpoint, CheckpointManifest, ParamEntry};
pub use config::{
    count_params, ModelCard, ModelConfig, ParamCount, SharedGating, MODEL_CARDS, PRESET_VOCAB,
};
pub use moe::{
    expert_forward, moe_forward, route, select_experts, ExpertFfn, MoeGraphOutput, MoeLayer,
    RoutingOutcome, RoutingSelection,
};
pub use params::{layer_prefix, param_seed, param_shapes, ParamStore, ParamVars};
pub use transformer::{forward, ForwardOutput, LayerRouting, MoeTransformer};
