//! Ancestral DDPM sampling with split classifier-free guidance.
//!
//! For a step `t -> s` (with `s < t`) the posterior of the variance-preserving
//! chain is used with the smaller of the two standard variances:
//!
//! ```text
//! a_ts   = alpha_t / alpha_s
//! var_ts = sigma_t^2 - a_ts^2 sigma_s^2
//! mean   = a_ts sigma_s^2 / sigma_t^2 * z_t + alpha_s var_ts / sigma_t^2 * x0_hat
//! var    = var_ts sigma_s^2 / sigma_t^2
//! ```
//!
//! When fewer sampler steps than schedule steps are requested, the same
//! posterior is taken between evenly spaced timesteps.

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TryOnConditioning;
use crate::diffusion::{DiffusionSchedule, PredictionTarget};
use crate::error::{invalid_arg, Result};
use crate::guidance::{split_cfg, Denoise, GuidanceSchedule, ModelDenoiser, TryOnWeights};
use crate::model::TryOnDenoiser;
use crate::tensor::{VideoDims, VideoTensor};

pub const DEFAULT_SAMPLER_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub num_steps: usize,
    pub seed: u64,
    pub guidance: GuidanceSchedule,
    pub prediction_target: PredictionTarget,
    /// Clip the intermediate x0 estimate to [-1, 1] at every step.
    #[serde(default)]
    pub clip_each_step: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            num_steps: DEFAULT_SAMPLER_STEPS,
            seed: 0,
            guidance: TryOnWeights::DEFAULT.into(),
            prediction_target: PredictionTarget::V,
            clip_each_step: false,
        }
    }
}

/// Descending timesteps visited by a sampler run.
pub fn sampling_timesteps(num_steps: usize, schedule_steps: usize) -> Result<Vec<usize>> {
    if num_steps == 0 {
        invalid_arg!("sampler needs at least one step");
    }
    if num_steps > schedule_steps {
        invalid_arg!("sampler steps {num_steps} exceed schedule steps {schedule_steps}");
    }
    if num_steps == schedule_steps {
        return Ok((0..schedule_steps).rev().collect());
    }
    if num_steps == 1 {
        return Ok(vec![schedule_steps - 1]);
    }
    let last = (schedule_steps - 1) as f64;
    let mut ts: Vec<usize> = (0..num_steps)
        .map(|i| (i as f64 * last / (num_steps - 1) as f64).round() as usize)
        .collect();
    ts.dedup();
    ts.reverse();
    Ok(ts)
}

/// Samples a video. `on_step` sees each timestep and its x0 estimate.
pub fn ddpm_sample_with<D: Denoise + ?Sized>(
    denoiser: &D,
    cond: &TryOnConditioning,
    dims: VideoDims,
    dtype: DType,
    cfg: &SamplerConfig,
    sched: &DiffusionSchedule,
    mut on_step: impl FnMut(usize, &VideoTensor),
) -> Result<VideoTensor> {
    cfg.guidance.validate()?;
    let cd = cond.agnostic.dims();
    if cd.batch != dims.batch || cd.frames != dims.frames || cd.height != dims.height || cd.width != dims.width {
        invalid_arg!(
            "conditioning {:?} does not match requested shape {:?}",
            cd.as_array(),
            dims.as_array()
        );
    }
    let ts = sampling_timesteps(cfg.num_steps, sched.num_steps())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = VideoTensor::randn(&mut rng, dims, dtype)?;
    let mut x0 = z.clone();
    for (i, &t) in ts.iter().enumerate() {
        let tn = sched.normalized_time(t);
        // detached so the autograd graph of one step is freed before the next
        let pred = VideoTensor::new(split_cfg(denoiser, &z, &[tn], cond, &cfg.guidance)?.tensor().detach())?;
        let (mut x0_hat, _) = sched.split_prediction(&z, &pred, t, cfg.prediction_target)?;
        if cfg.clip_each_step {
            x0_hat = x0_hat.clamp_pixels()?;
        }
        on_step(t, &x0_hat);
        match ts.get(i + 1) {
            Some(&s) => {
                let (at, st) = (sched.alpha(t), sched.sigma(t));
                let (as_, ss) = (sched.alpha(s), sched.sigma(s));
                let a_ts = at / as_;
                let var_ts = (st * st - a_ts * a_ts * ss * ss).max(0.0);
                let cz = a_ts * ss * ss / (st * st);
                let cx = as_ * var_ts / (st * st);
                let std = (var_ts * ss * ss / (st * st)).sqrt();
                let noise = VideoTensor::randn(&mut rng, dims, dtype)?;
                let next = ((z.tensor() * cz)? + (x0_hat.tensor() * cx)?)?;
                let next = (next + (noise.tensor() * std)?)?;
                z = VideoTensor::new(next)?;
            }
            None => x0 = x0_hat,
        }
    }
    x0.clamp_pixels()
}

pub fn ddpm_sample<D: Denoise + ?Sized>(
    denoiser: &D,
    cond: &TryOnConditioning,
    dims: VideoDims,
    dtype: DType,
    cfg: &SamplerConfig,
    sched: &DiffusionSchedule,
) -> Result<VideoTensor> {
    ddpm_sample_with(denoiser, cond, dims, dtype, cfg, sched, |_, _| {})
}

/// Samples from a model in one pass over all frames, after checking the
/// requested frame count against the model's temporal capabilities.
pub fn sample_video(
    model: &TryOnDenoiser,
    cond: &TryOnConditioning,
    cfg: &SamplerConfig,
    sched: &DiffusionSchedule,
) -> Result<VideoTensor> {
    let d = cond.agnostic.dims();
    check_frames(model, d.frames)?;
    let dims = VideoDims::new(d.batch, d.frames, d.height, d.width, model.config().image_channels);
    let cfg = SamplerConfig {
        prediction_target: model.config().prediction_target,
        ..cfg.clone()
    };
    ddpm_sample(&ModelDenoiser::auto(model), cond, dims, model.dtype(), &cfg, sched)
}

/// Longest clip a model without temporal resampling may generate.
pub const MAX_FRAMES_WITHOUT_RESAMPLING: usize = 32;

/// Frame-count rules: a per-frame model handles any count frame by frame,
/// long clips need the resampling phase, and resampling needs even counts.
pub fn check_frames(model: &TryOnDenoiser, frames: usize) -> Result<()> {
    let cfg = model.config();
    if frames == 0 {
        invalid_arg!("frame count must be positive");
    }
    if cfg.temporal_resampling_enabled {
        if frames % 2 != 0 {
            invalid_arg!("a temporal-resampling model needs an even frame count, got {frames}");
        }
    } else if cfg.temporal_enabled && frames > MAX_FRAMES_WITHOUT_RESAMPLING {
        return Err(crate::Error::InvalidState(format!(
            "{frames} frames need a checkpoint from the temporal resampling phase (T=64 phase with resampling); \
             this checkpoint supports at most {MAX_FRAMES_WITHOUT_RESAMPLING}"
        )));
    }
    Ok(())
}

/// Record written next to every sampled video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub seed: u64,
    pub weights: Vec<f64>,
    pub guidance_mode: crate::guidance::GuidanceMode,
    pub num_steps: usize,
    pub schedule_steps: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub prediction_target: PredictionTarget,
    pub checkpoint_hash: Option<String>,
}

impl SampleMetadata {
    pub fn new(cfg: &SamplerConfig, sched: &DiffusionSchedule, dims: VideoDims, checkpoint_hash: Option<String>) -> Self {
        Self {
            seed: cfg.seed,
            weights: cfg.guidance.weights.clone(),
            guidance_mode: cfg.guidance.mode,
            num_steps: cfg.num_steps,
            schedule_steps: sched.num_steps(),
            frames: dims.frames,
            height: dims.height,
            width: dims.width,
            prediction_target: cfg.prediction_target,
            checkpoint_hash,
        }
    }
}

/// Mean absolute difference between consecutive x0 estimates of a run.
pub fn refinement_deltas(estimates: &[VideoTensor]) -> Result<Vec<f64>> {
    estimates.windows(2).map(|w| w[1].mean_abs_diff(&w[0])).collect()
}
