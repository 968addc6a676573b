//! Test-time adaptation: the bottleneck adapter, the per-image episode, and
//! the baselines it is compared against.

pub mod adapter;
mod episode;

pub use adapter::{
    adapter_param_count, apply_adapter, conv_adapter_param_count, AdaptState, AdapterParams, ParamCount,
};
pub use episode::{postprocess, zero_shot, EpisodeConfig, EpisodeOutcome, EpisodeTrace, Method, TtaEngine};
