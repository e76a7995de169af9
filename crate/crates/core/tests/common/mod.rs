#![allow(dead_code)]

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vton_core::data::TryOnConditioning;
use vton_core::model::{ConditioningSpec, ModelConfig};
use vton_core::{VideoDims, VideoTensor};

/// Small enough for quick CPU forwards, deep enough to have two
/// temporal levels and a DiT stage.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        base_channels: 8,
        channel_multipliers: vec![1, 2, 2],
        num_dit_blocks: 1,
        attention_heads: 2,
        pose_channels: 3,
        pose_embed_channels: 2,
        ..ModelConfig::default()
    }
}

/// Under 10^4 parameters even after temporal inflation.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        channel_multipliers: vec![1, 1],
        num_dit_blocks: 1,
        attention_heads: 1,
        pose_channels: 2,
        pose_embed_channels: 1,
        ..ModelConfig::default()
    }
}

pub fn spec_for(cfg: &ModelConfig) -> ConditioningSpec {
    ConditioningSpec::standard(cfg.image_channels, cfg.pose_channels)
}

pub fn rand_video(rng: &mut ChaCha8Rng, dims: VideoDims, dtype: DType) -> VideoTensor {
    VideoTensor::randn(rng, dims, dtype).unwrap()
}

/// Gaussian conditioning of the right shapes for `cfg`.
pub fn random_cond(cfg: &ModelConfig, b: usize, t: usize, h: usize, w: usize, seed: u64, dtype: DType) -> TryOnConditioning {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.image_channels + 1;
    let k = cfg.pose_channels;
    TryOnConditioning::new(
        rand_video(&mut rng, VideoDims::new(b, t, h, w, c), dtype),
        rand_video(&mut rng, VideoDims::new(b, 1, h, w, c), dtype),
        rand_video(&mut rng, VideoDims::new(b, t, h, w, k), dtype),
        rand_video(&mut rng, VideoDims::new(b, 1, h, w, k), dtype),
    )
    .unwrap()
}

pub fn times(b: usize, seed: u64) -> Vec<f32> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..b).map(|_| rng.gen_range(0.0..1.0)).collect()
}
