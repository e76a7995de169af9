//! The try-on denoiser, its parameters, temporal extensions and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod denoiser;
pub mod dit;
pub mod layers;
pub mod params;
pub mod temporal;

pub use checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint, CheckpointManifest, LoadedCheckpoint};
pub use config::{ConditioningSpec, ModelConfig};
pub use denoiser::{build_model, inflate_temporal, inject_temporal_resampling, Branch, ForwardTrace, TryOnDenoiser};
pub use params::{Init, ParamGroup, ParamStore};
pub use temporal::{temporal_mix, MixingGate, TemporalInit};
