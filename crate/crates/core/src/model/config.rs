use serde::{Deserialize, Serialize};

use crate::data::TryOnConditioning;
use crate::diffusion::PredictionTarget;
use crate::error::{invalid_arg, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_channels: usize,
    pub base_channels: usize,
    /// One entry per resolution level; level `l` has `base * mult[l]` channels.
    pub channel_multipliers: Vec<usize>,
    pub num_dit_blocks: usize,
    pub attention_heads: usize,
    /// Joint count K of the pose maps.
    pub pose_channels: usize,
    /// Width of each pose embedding concatenated into the 2-D layers.
    pub pose_embed_channels: usize,
    pub temporal_enabled: bool,
    pub temporal_resampling_enabled: bool,
    pub frame_length: usize,
    pub prediction_target: PredictionTarget,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 2],
            num_dit_blocks: 8,
            attention_heads: 4,
            pose_channels: crate::data::NUM_JOINTS,
            pose_embed_channels: 8,
            temporal_enabled: false,
            temporal_resampling_enabled: false,
            frame_length: 1,
            prediction_target: PredictionTarget::V,
        }
    }
}

impl ModelConfig {
    /// Small configuration for tests and CPU smoke runs.
    pub fn tiny() -> Self {
        Self {
            base_channels: 8,
            channel_multipliers: vec![1, 2, 2],
            num_dit_blocks: 2,
            attention_heads: 2,
            pose_embed_channels: 4,
            ..Self::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.channel_multipliers.len()
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels * self.channel_multipliers[level]
    }

    pub fn lowest_channels(&self) -> usize {
        self.channels_at(self.levels() - 1)
    }

    /// Spatial downsampling factor between input and lowest resolution.
    pub fn spatial_factor(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn time_embed_dim(&self) -> usize {
        self.base_channels * 4
    }

    /// First level carrying temporal blocks (the two lowest levels do).
    pub fn first_temporal_level(&self) -> usize {
        self.levels().saturating_sub(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_dit_blocks < 1 {
            invalid_arg!("num_dit_blocks must be >= 1");
        }
        if self.channel_multipliers.is_empty() || self.channel_multipliers.contains(&0) {
            invalid_arg!("channel_multipliers must be non-empty and positive");
        }
        if self.base_channels == 0 || self.image_channels == 0 || self.pose_channels == 0 {
            invalid_arg!("channel counts must be positive");
        }
        if self.pose_embed_channels == 0 {
            invalid_arg!("pose_embed_channels must be positive");
        }
        if self.attention_heads == 0 {
            invalid_arg!("attention_heads must be positive");
        }
        for l in 0..self.levels() {
            if self.channels_at(l) % self.attention_heads != 0 {
                invalid_arg!(
                    "level {l} width {} not divisible by {} heads",
                    self.channels_at(l),
                    self.attention_heads
                );
            }
        }
        if self.temporal_resampling_enabled && !self.temporal_enabled {
            invalid_arg!("temporal resampling requires temporal blocks");
        }
        if self.temporal_resampling_enabled && self.frame_length % 2 != 0 {
            invalid_arg!("frame_length {} must be even with temporal resampling", self.frame_length);
        }
        if self.frame_length == 0 {
            invalid_arg!("frame_length must be >= 1");
        }
        Ok(())
    }
}

/// Channel counts of the conditioning inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditioningSpec {
    pub image_channels: usize,
    pub agnostic_channels: usize,
    pub garment_channels: usize,
    pub pose_channels: usize,
}

impl ConditioningSpec {
    /// Image channels plus one mask channel for agnostic and garment inputs.
    pub fn standard(image_channels: usize, pose_channels: usize) -> Self {
        Self {
            image_channels,
            agnostic_channels: image_channels + 1,
            garment_channels: image_channels + 1,
            pose_channels,
        }
    }

    pub fn of(cond: &TryOnConditioning, image_channels: usize) -> Self {
        Self {
            image_channels,
            agnostic_channels: cond.agnostic.dims().channels,
            garment_channels: cond.garment.dims().channels,
            pose_channels: cond.person_pose.dims().channels,
        }
    }

    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        if self.image_channels != cfg.image_channels {
            invalid_arg!("conditioning image channels {} != model {}", self.image_channels, cfg.image_channels);
        }
        if self.agnostic_channels != cfg.image_channels + 1 {
            invalid_arg!(
                "agnostic input must have image channels + mask = {}, got {}",
                cfg.image_channels + 1,
                self.agnostic_channels
            );
        }
        if self.garment_channels != cfg.image_channels + 1 {
            invalid_arg!(
                "garment input must have image channels + mask = {}, got {}",
                cfg.image_channels + 1,
                self.garment_channels
            );
        }
        if self.pose_channels != cfg.pose_channels {
            invalid_arg!("pose maps have {} channels, model expects {}", self.pose_channels, cfg.pose_channels);
        }
        Ok(())
    }
}
