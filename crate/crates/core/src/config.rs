//! Run configuration: one JSON document covering data, model, schedule,
//! training plan, sampler and evaluation. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DataParams, NUM_JOINTS};
use crate::diffusion::{PredictionTarget, ScheduleParams};
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::guidance::{GuidanceMode, GuidanceSchedule, TryOnWeights};
use crate::model::ModelConfig;
use crate::sampler::{SamplerConfig, MAX_FRAMES_WITHOUT_RESAMPLING};
use crate::training::{OptimizerSpec, PhasePlan, TrainSettings, DEFAULT_DROPOUT};

pub const CONFIG_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    pub num_steps: usize,
    pub weights: TryOnWeights,
    #[serde(default)]
    pub mode: GuidanceMode,
    #[serde(default)]
    pub clip_each_step: bool,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            num_steps: crate::sampler::DEFAULT_SAMPLER_STEPS,
            weights: TryOnWeights::DEFAULT,
            mode: GuidanceMode::Strict,
            clip_each_step: false,
        }
    }
}

impl SamplerSettings {
    pub fn to_sampler_config(&self, seed: u64, target: PredictionTarget) -> SamplerConfig {
        let mut guidance: GuidanceSchedule = self.weights.into();
        guidance.mode = self.mode;
        SamplerConfig {
            num_steps: self.num_steps,
            seed,
            guidance,
            prediction_target: target,
            clip_each_step: self.clip_each_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSettings {
    pub optimizer: OptimizerSpec,
    pub dropout: f64,
    /// Extra mid-phase checkpoints every this many steps (0 = phase ends only).
    #[serde(default)]
    pub checkpoint_every: u64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self {
            optimizer: OptimizerSpec::desk_scale(),
            dropout: DEFAULT_DROPOUT,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: String,
    pub seed: u64,
    pub data: DataParams,
    pub model: ModelConfig,
    pub schedule: ScheduleParams,
    pub plan: PhasePlan,
    pub training: TrainingSettings,
    pub sampler: SamplerSettings,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION.to_string(),
            seed: 0,
            data: DataParams::default(),
            model: ModelConfig {
                prediction_target: PredictionTarget::Epsilon,
                ..ModelConfig::default()
            },
            schedule: ScheduleParams::default(),
            plan: PhasePlan::desk_scale(),
            training: TrainingSettings::default(),
            sampler: SamplerSettings::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn err(field: &str, message: impl Into<String>) -> Error {
    Error::config(field, message)
}

impl RunConfig {
    /// CPU-sized run: tiny model, 32x24 frames, plan up to T = 16.
    pub fn cpu_smoke() -> Self {
        let mut c = Self::default();
        c.model = ModelConfig {
            prediction_target: PredictionTarget::Epsilon,
            ..ModelConfig::tiny()
        };
        c.data = DataParams {
            num_scenes: 8,
            frames: 32,
            height: 32,
            width: 24,
        };
        c.plan = PhasePlan::desk_scale().truncated(16);
        c.eval.sampler_steps = 250;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(err(
                "format_version",
                format!("expected {CONFIG_FORMAT_VERSION:?}, got {:?}", self.format_version),
            ));
        }
        self.model.validate().map_err(|e| err("model", e.to_string()))?;
        if self.model.image_channels != 3 {
            return Err(err("model.image_channels", "synthetic data has 3 color channels"));
        }
        if self.model.pose_channels != NUM_JOINTS {
            return Err(err("model.pose_channels", format!("pose maps have {NUM_JOINTS} joints")));
        }
        if self.model.temporal_enabled || self.model.temporal_resampling_enabled {
            return Err(err(
                "model.temporal_enabled",
                "temporal blocks are added by the training plan; the base model must be spatial-only",
            ));
        }
        self.plan.validate()?;
        self.training.optimizer.validate()?;
        if !(0.0..=1.0).contains(&self.training.dropout) {
            return Err(err("training.dropout", "must lie in [0, 1]"));
        }
        if self.schedule.num_steps < 2 {
            return Err(err("schedule.num_steps", "need at least 2 steps"));
        }
        let f = self.model.spatial_factor();
        if self.data.height % f != 0 || self.data.width % f != 0 {
            return Err(err(
                "data.height",
                format!("{}x{} is not divisible by the UNet factor {f}", self.data.height, self.data.width),
            ));
        }
        if self.data.height < 16 || self.data.width < 16 {
            return Err(err("data.height", "frames must be at least 16x16"));
        }
        let max_t = self.plan.frame_lengths().into_iter().max().unwrap_or(1);
        if self.data.frames < max_t {
            return Err(err(
                "data.frames",
                format!("scenes have {} frames but the plan trains on clips of {max_t}", self.data.frames),
            ));
        }
        for (name, steps) in [("sampler.num_steps", self.sampler.num_steps), ("eval.sampler_steps", self.eval.sampler_steps)] {
            if steps == 0 || steps > self.schedule.num_steps {
                return Err(err(name, format!("must be in 1..={}", self.schedule.num_steps)));
            }
        }
        if self.sampler.weights.0.iter().chain(&self.eval.weights.0).any(|w| !w.is_finite()) {
            return Err(err("sampler.weights", "guidance weights must be finite"));
        }
        if self.eval.frames == 0 || self.eval.frames > self.data.frames {
            return Err(err("eval.frames", format!("must be in 1..={}", self.data.frames)));
        }
        let resampling = self.plan.phases.iter().any(|p| p.inject_resampling);
        if resampling && self.eval.frames % 2 != 0 {
            return Err(err("eval.frames", "must be even when the plan injects temporal resampling"));
        }
        if !resampling && self.eval.frames > MAX_FRAMES_WITHOUT_RESAMPLING && max_t > 1 {
            return Err(err(
                "eval.frames",
                format!("more than {MAX_FRAMES_WITHOUT_RESAMPLING} frames requires the resampling phase"),
            ));
        }
        if self.eval.max_pairs == 0 || self.eval.pairs_per_person == 0 {
            return Err(err("eval.max_pairs", "must be positive"));
        }
        if self.data.num_scenes > 0 && self.eval.pairs_per_person >= self.data.num_scenes {
            return Err(err(
                "eval.pairs_per_person",
                format!("needs at least {} scenes", self.eval.pairs_per_person + 1),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| err("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::store::write_atomic(path, self.to_json()?.as_bytes())
    }

    /// Training settings for `run_progressive`, stamped with this config's hash.
    pub fn train_settings(&self) -> Result<TrainSettings> {
        let mut s = TrainSettings::new(self.model.clone(), self.schedule.build()?, self.seed);
        s.optimizer = self.training.optimizer.clone();
        s.dropout = self.training.dropout;
        s.checkpoint_every = (self.training.checkpoint_every > 0).then_some(self.training.checkpoint_every);
        s.config_hash = self.hash()?;
        Ok(s)
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(self)?;
        Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
    }
}
