//! Progressive temporal training: an image phase followed by video phases
//! of doubling clip length, each starting from the previous checkpoint.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, OptimizerSpec};
use super::step::{train_step, DEFAULT_DROPOUT};
use super::stream::{make_joint_stream, BatchKind, PreparedScene, StreamSpec};
use crate::diffusion::{DiffusionSchedule, ScheduleParams};
use crate::error::{invalid_arg, invalid_state, Error, Result};
use crate::model::checkpoint::{load_checkpoint, save_checkpoint};
use crate::model::{ConditioningSpec, ModelConfig, TemporalInit, TryOnDenoiser};

/// Frame lengths a phase may use.
pub const PHASE_FRAME_LENGTHS: [usize; 5] = [1, 8, 16, 32, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub name: String,
    pub frame_length: usize,
    pub iterations: u64,
    /// Clips per video batch (or images per batch in an image-only phase).
    pub batch_size: usize,
    /// Images per image batch in joint phases.
    pub image_batch_size: usize,
    pub image_fraction: f64,
    pub inflate_temporal: bool,
    pub inject_resampling: bool,
}

impl PhaseSpec {
    pub fn image(iterations: u64) -> Self {
        Self {
            name: "image".into(),
            frame_length: 1,
            iterations,
            batch_size: 8,
            image_batch_size: 8,
            image_fraction: 1.0,
            inflate_temporal: false,
            inject_resampling: false,
        }
    }

    pub fn video(frame_length: usize, iterations: u64) -> Self {
        Self {
            name: format!("t{frame_length}"),
            frame_length,
            iterations,
            batch_size: 1,
            image_batch_size: 8,
            image_fraction: 0.5,
            inflate_temporal: false,
            inject_resampling: frame_length == 64,
        }
    }

    fn stream_spec(&self) -> StreamSpec {
        if self.frame_length == 1 {
            StreamSpec {
                frame_length: 1,
                image_fraction: 1.0,
                image_batch_size: self.batch_size,
                video_batch_size: self.batch_size,
            }
        } else {
            StreamSpec {
                frame_length: self.frame_length,
                image_fraction: self.image_fraction,
                image_batch_size: self.image_batch_size,
                video_batch_size: self.batch_size,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePlan {
    pub phases: Vec<PhaseSpec>,
}

impl PhasePlan {
    fn from_iterations(image: u64, video: u64, lengths: &[usize]) -> Self {
        let mut phases = vec![PhaseSpec::image(image)];
        for (i, &t) in lengths.iter().enumerate() {
            let mut p = PhaseSpec::video(t, video);
            p.inflate_temporal = i == 0;
            phases.push(p);
        }
        Self { phases }
    }

    /// 5K image iterations, then 1K per temporal phase up to T = 64.
    pub fn desk_scale() -> Self {
        Self::from_iterations(5_000, 1_000, &[8, 16, 32, 64])
    }

    /// 1M image iterations, then 150K per temporal phase.
    pub fn paper_scale() -> Self {
        Self::from_iterations(1_000_000, 150_000, &[8, 16, 32, 64])
    }

    /// Drops the T = 8 phase; the T = 16 phase inflates instead.
    pub fn without_t8(&self) -> Self {
        let mut phases: Vec<PhaseSpec> = self.phases.iter().filter(|p| p.frame_length != 8).cloned().collect();
        for (i, p) in phases.iter_mut().enumerate() {
            p.inflate_temporal = i == 1;
        }
        Self { phases }
    }

    /// Keeps phases with `frame_length <= max_frames`.
    pub fn truncated(&self, max_frames: usize) -> Self {
        Self {
            phases: self.phases.iter().filter(|p| p.frame_length <= max_frames).cloned().collect(),
        }
    }

    pub fn frame_lengths(&self) -> Vec<usize> {
        self.phases.iter().map(|p| p.frame_length).collect()
    }

    pub fn phase_index(&self, name: &str) -> Option<usize> {
        self.phases.iter().position(|p| p.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config("plan.phases", msg));
        let Some(first) = self.phases.first() else {
            return bad("plan has no phases".into());
        };
        if first.frame_length != 1 || first.image_fraction != 1.0 || first.inflate_temporal || first.inject_resampling {
            return bad("first phase must be an image phase (T=1, image_fraction=1, no temporal flags)".into());
        }
        let mut names = std::collections::BTreeSet::new();
        let mut prev_video: Option<usize> = None;
        for (i, p) in self.phases.iter().enumerate() {
            if !names.insert(p.name.as_str()) {
                return bad(format!("duplicate phase name {:?}", p.name));
            }
            if p.name.is_empty() || p.name.contains(['/', '\\']) {
                return bad(format!("phase name {:?} is not a plain identifier", p.name));
            }
            if !PHASE_FRAME_LENGTHS.contains(&p.frame_length) {
                return bad(format!("phase {}: frame_length {} not in {:?}", p.name, p.frame_length, PHASE_FRAME_LENGTHS));
            }
            if !(0.0..=1.0).contains(&p.image_fraction) {
                return bad(format!("phase {}: image_fraction outside [0, 1]", p.name));
            }
            if p.batch_size == 0 || (p.image_fraction > 0.0 && p.image_batch_size == 0) {
                return bad(format!("phase {}: batch sizes must be positive", p.name));
            }
            if i == 0 {
                continue;
            }
            if p.frame_length == 1 {
                return bad(format!("phase {}: only the first phase may have T=1", p.name));
            }
            if let Some(t) = prev_video {
                if p.frame_length != 2 * t {
                    return bad(format!("phase {}: T={} does not double the previous T={t}", p.name, p.frame_length));
                }
            }
            let should_inflate = prev_video.is_none();
            if p.inflate_temporal != should_inflate {
                return bad(format!(
                    "phase {}: inflate_temporal must be set exactly on the first video phase",
                    p.name
                ));
            }
            if p.inject_resampling && p.frame_length != 64 {
                return bad(format!("phase {}: resampling may only be injected on the T=64 phase", p.name));
            }
            prev_video = Some(p.frame_length);
        }
        Ok(())
    }

    /// Model config expected after `phase` has been set up.
    pub fn config_at(&self, base: &ModelConfig, phase: usize) -> ModelConfig {
        let mut cfg = ModelConfig {
            temporal_enabled: false,
            temporal_resampling_enabled: false,
            frame_length: 1,
            ..base.clone()
        };
        for p in &self.phases[..=phase] {
            cfg.temporal_enabled |= p.inflate_temporal;
            cfg.temporal_resampling_enabled |= p.inject_resampling;
            cfg.frame_length = p.frame_length;
        }
        cfg
    }
}

impl Default for PhasePlan {
    fn default() -> Self {
        Self::desk_scale()
    }
}

/// Everything besides the plan and data that a training run needs.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub model: ModelConfig,
    pub cond: ConditioningSpec,
    pub schedule: DiffusionSchedule,
    pub optimizer: OptimizerSpec,
    pub dropout: f64,
    pub seed: u64,
    pub dtype: DType,
    /// Also checkpoint every this many steps within a phase.
    pub checkpoint_every: Option<u64>,
    /// Recorded in every checkpoint; a resume with a different value is rejected.
    pub config_hash: String,
}

impl TrainSettings {
    pub fn new(model: ModelConfig, schedule: DiffusionSchedule, seed: u64) -> Self {
        Self {
            cond: ConditioningSpec::standard(model.image_channels, model.pose_channels),
            model,
            schedule,
            optimizer: OptimizerSpec::desk_scale(),
            dropout: DEFAULT_DROPOUT,
            seed,
            dtype: DType::F32,
            checkpoint_every: None,
            config_hash: String::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Run only this phase (earlier phases must already be checkpointed).
    pub only_phase: Option<String>,
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub phase_index: usize,
    pub phase_step: u64,
    pub phase_complete: bool,
    pub config_hash: String,
    pub optimizer: OptimizerSpec,
    pub schedule: ScheduleParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub phase: String,
    pub phase_step: u64,
    pub loss: f64,
    pub lr: f64,
    pub image_batch: bool,
}

#[derive(Debug, Clone)]
pub struct PhaseResult {
    pub name: String,
    pub frame_length: usize,
    pub checkpoint: PathBuf,
    pub losses: Vec<f64>,
    pub global_step: u64,
}

pub fn checkpoint_dir(out_dir: &Path, phase: &str) -> PathBuf {
    out_dir.join("checkpoints").join(phase)
}

pub fn metrics_path(out_dir: &Path, phase: &str) -> PathBuf {
    out_dir.join("logs").join(format!("{phase}.jsonl"))
}

fn mix_seed(seed: u64, phase: usize, step: u64, stream: u64) -> u64 {
    // splitmix64 over the tuple
    let mut z = seed ^ (phase as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step.rotate_left(17) ^ stream.rotate_left(41);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Prepares the model for `phase` given the model at the end of the previous one.
fn setup_phase(prev: &TryOnDenoiser, phase: &PhaseSpec) -> Result<TryOnDenoiser> {
    let mut m = if phase.inflate_temporal {
        prev.inflate_temporal(TemporalInit::Identity)?
    } else {
        prev.duplicate()?
    };
    if phase.inject_resampling {
        m = m.inject_temporal_resampling()?;
    }
    m.with_frame_length(phase.frame_length)
}

fn check_model_matches(model: &TryOnDenoiser, want: &ModelConfig, what: &str) -> Result<()> {
    if model.config() != want {
        invalid_state!(
            "{what}: checkpoint config {:?} does not match the plan's expected config {:?}",
            model.config(),
            want
        );
    }
    Ok(())
}

/// Runs the plan (or one phase of it), writing a checkpoint and a metrics
/// log per phase under `out_dir`.
pub fn run_progressive(
    plan: &PhasePlan,
    settings: &TrainSettings,
    image_ds: &[PreparedScene],
    video_ds: &[PreparedScene],
    out_dir: &Path,
    options: &RunOptions,
) -> Result<Vec<PhaseResult>> {
    plan.validate()?;
    settings.model.validate()?;
    settings.optimizer.validate()?;
    if !(0.0..=1.0).contains(&settings.dropout) {
        invalid_arg!("dropout rate {} outside [0, 1]", settings.dropout);
    }

    // starting point: (model, optimizer, first phase to run, first step in it)
    let (mut model, mut opt, start_phase, mut start_step) = if let Some(ckpt) = &options.resume {
        let loaded = load_checkpoint(ckpt)?;
        let state: TrainerState = serde_json::from_value(loaded.manifest.trainer.clone())
            .map_err(|e| Error::InvalidState(format!("checkpoint has no trainer state: {e}")))?;
        if state.config_hash != settings.config_hash {
            return Err(Error::config(
                "resume",
                format!(
                    "checkpoint was written by config {} but the current config is {}",
                    state.config_hash, settings.config_hash
                ),
            ));
        }
        if state.phase_index >= plan.phases.len() || plan.phases[state.phase_index].name != loaded.manifest.phase {
            invalid_state!("checkpoint phase {:?} is not part of this plan", loaded.manifest.phase);
        }
        check_model_matches(&loaded.model, &plan.config_at(&settings.model, state.phase_index), "resume")?;
        let opt = match &loaded.optimizer {
            Some(s) => Adam::from_state(state.optimizer.clone(), loaded.manifest.step, s, loaded.model.params())?,
            None => {
                let mut o = Adam::new(state.optimizer.clone())?;
                o.set_global_step(loaded.manifest.step);
                o
            }
        };
        if state.phase_complete {
            let next = state.phase_index + 1;
            if next >= plan.phases.len() {
                return Ok(Vec::new());
            }
            (setup_phase(&loaded.model, &plan.phases[next])?, opt, next, 0)
        } else {
            (loaded.model, opt, state.phase_index, state.phase_step)
        }
    } else if let Some(name) = &options.only_phase {
        let idx = plan
            .phase_index(name)
            .ok_or_else(|| Error::config("phase", format!("no phase named {name:?} in the plan")))?;
        if idx == 0 {
            let m = TryOnDenoiser::build(
                &plan.config_at(&settings.model, 0),
                &settings.cond,
                settings.seed,
                settings.dtype,
                TemporalInit::Identity,
            )?;
            (m, Adam::new(settings.optimizer.clone())?, 0, 0)
        } else {
            let prev = &plan.phases[idx - 1];
            let dir = checkpoint_dir(out_dir, &prev.name);
            if !dir.join(crate::model::checkpoint::MANIFEST_FILE).exists() {
                invalid_state!("phase {name} needs the checkpoint of phase {} at {}", prev.name, dir.display());
            }
            let loaded = load_checkpoint(&dir)?;
            check_model_matches(&loaded.model, &plan.config_at(&settings.model, idx - 1), "previous phase")?;
            let state: TrainerState = serde_json::from_value(loaded.manifest.trainer.clone())
                .map_err(|e| Error::InvalidState(format!("checkpoint has no trainer state: {e}")))?;
            let opt = match &loaded.optimizer {
                Some(s) => Adam::from_state(state.optimizer, loaded.manifest.step, s, loaded.model.params())?,
                None => Adam::new(settings.optimizer.clone())?,
            };
            (setup_phase(&loaded.model, &plan.phases[idx])?, opt, idx, 0)
        }
    } else {
        let m = TryOnDenoiser::build(
            &plan.config_at(&settings.model, 0),
            &settings.cond,
            settings.seed,
            settings.dtype,
            TemporalInit::Identity,
        )?;
        (m, Adam::new(settings.optimizer.clone())?, 0, 0)
    };

    let end_phase = if options.only_phase.is_some() {
        start_phase + 1
    } else {
        plan.phases.len()
    };
    let mut results = Vec::new();
    for idx in start_phase..end_phase {
        let phase = &plan.phases[idx];
        if idx > start_phase {
            // reload from disk so every phase starts from its predecessor's checkpoint
            let prev = load_checkpoint(&results.last().map(|r: &PhaseResult| r.checkpoint.clone()).expect("previous phase ran"))?;
            model = setup_phase(&prev.model, phase)?;
            start_step = 0;
        }
        check_model_matches(&model, &plan.config_at(&settings.model, idx), "phase setup")?;
        let result = run_phase(&model, &mut opt, plan, idx, start_step, settings, image_ds, video_ds, out_dir)?;
        results.push(result);
    }
    Ok(results)
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    model: &TryOnDenoiser,
    opt: &mut Adam,
    plan: &PhasePlan,
    idx: usize,
    start_step: u64,
    settings: &TrainSettings,
    image_ds: &[PreparedScene],
    video_ds: &[PreparedScene],
    out_dir: &Path,
) -> Result<PhaseResult> {
    let phase = &plan.phases[idx];
    let mut stream = make_joint_stream(image_ds, video_ds, phase.stream_spec(), 0)?.with_dtype(settings.dtype);
    let log_path = metrics_path(out_dir, &phase.name);
    if let Some(parent) = log_path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = if start_step == 0 {
        File::create(&log_path)
    } else {
        OpenOptions::new().append(true).create(true).open(&log_path)
    }
    .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let ckpt = checkpoint_dir(out_dir, &phase.name);
    let save = |opt: &Adam, phase_step: u64, complete: bool| -> Result<()> {
        let trainer = TrainerState {
            phase_index: idx,
            phase_step,
            phase_complete: complete,
            config_hash: settings.config_hash.clone(),
            optimizer: opt.spec().clone(),
            schedule: settings.schedule.params(),
        };
        save_checkpoint(
            &ckpt,
            model,
            &phase.name,
            opt.global_step(),
            Some(&opt.state_tensors()?),
            serde_json::to_value(&trainer)?,
        )?;
        Ok(())
    };

    let mut losses = Vec::with_capacity(phase.iterations.saturating_sub(start_step) as usize);
    for k in start_step..phase.iterations {
        stream.reseed(mix_seed(settings.seed, idx, k, 1));
        let plan_k = stream.next_plan();
        let batch = stream.materialize(&plan_k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(settings.seed, idx, k, 2));
        let out = train_step(
            model,
            &batch,
            opt,
            &settings.schedule,
            model.config().prediction_target,
            settings.dropout,
            &mut rng,
        )?;
        let rec = MetricsRecord {
            step: opt.global_step() - 1,
            phase: phase.name.clone(),
            phase_step: k,
            loss: out.loss,
            lr: out.lr,
            image_batch: out.kind == BatchKind::Image,
        };
        serde_json::to_writer(&mut log, &rec)?;
        writeln!(log).map_err(|e| Error::io(&log_path, e))?;
        losses.push(out.loss);
        if (k + 1) % 100 == 0 {
            log::info!("phase {} step {}/{} loss {:.4}", phase.name, k + 1, phase.iterations, out.loss);
        }
        if let Some(every) = settings.checkpoint_every {
            if every > 0 && (k + 1) % every == 0 && k + 1 < phase.iterations {
                log.flush().map_err(|e| Error::io(&log_path, e))?;
                save(opt, k + 1, false)?;
            }
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    save(opt, phase.iterations, true)?;
    Ok(PhaseResult {
        name: phase.name.clone(),
        frame_length: phase.frame_length,
        checkpoint: ckpt,
        losses,
        global_step: opt.global_step(),
    })
}

/// Reads a metrics log back.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
