use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use candle_core::DType;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use vton_core::config::RunConfig;
use vton_core::data::store::{create_dir, load_manifest, save_tensors, write_atomic, write_json};
use vton_core::data::{generate_scenes, load_dataset, pair_for_eval, save_dataset, PreprocessOptions, TryOnConditioning};
use vton_core::diffusion::ScheduleParams;
use vton_core::evaluation::{run_ablation_suite, NamedModel};
use vton_core::guidance::TryOnWeights;
use vton_core::model::{checkpoint_hash, load_checkpoint, LoadedCheckpoint};
use vton_core::sampler::{check_frames, sample_video, SampleMetadata, DEFAULT_SAMPLER_STEPS};
use vton_core::training::{prepare_scenes, run_progressive, RunOptions, TrainerState};
use vton_core::{Error, Result, VideoTensor};

#[derive(Parser)]
#[command(name = "vton-lab", version, about = "Synthetic video try-on: data, training, sampling, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    CpuSmoke,
}

#[derive(Subcommand)]
enum Command {
    /// Write a run configuration with all defaults filled in.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
    },
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num_scenes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run the progressive training plan (or one phase of it).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Run only this phase; earlier phases must already be checkpointed under --out.
        #[arg(long)]
        phase: Option<String>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample a try-on video for one person clip and one garment frame.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Person scene index.
        #[arg(long)]
        person: usize,
        /// Garment as SCENE:FRAME.
        #[arg(long)]
        garment: String,
        /// Defaults to the checkpoint's frame length.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value = "1,1,1,1")]
        cfg_weights: TryOnWeights,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SAMPLER_STEPS)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one or more checkpoints on the shared evaluation pairs.
    Eval {
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluation settings are taken from this config's `eval` section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sampler_steps: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn init_config(out: &Path, preset: Preset) -> Result<()> {
    let cfg = match preset {
        Preset::Default => RunConfig::default(),
        Preset::CpuSmoke => RunConfig::cpu_smoke(),
    };
    cfg.save(out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn gen_data(config: Option<&Path>, out: &Path, num_scenes: Option<usize>, seed: Option<u64>, workers: usize) -> Result<()> {
    let cfg = load_config(config)?;
    let mut params = cfg.data;
    if let Some(n) = num_scenes {
        params.num_scenes = n;
    }
    let seed = seed.unwrap_or(cfg.seed);
    let scenes = generate_scenes(&params, seed, workers)?;
    let manifest = save_dataset(out, &scenes, &params, seed)?;
    println!(
        "{} scenes, {} frames each at {}x{} (seed {seed}) -> {}",
        manifest.scenes.len(),
        params.frames,
        params.height,
        params.width,
        out.display()
    );
    Ok(())
}

fn check_dataset(cfg: &RunConfig, data: &Path) -> Result<()> {
    let m = load_manifest(data)?;
    if (m.frames, m.height, m.width) != (cfg.data.frames, cfg.data.height, cfg.data.width) {
        return Err(Error::config(
            "data",
            format!(
                "dataset at {} is {}x{}x{} (frames x height x width), config expects {}x{}x{}",
                data.display(),
                m.frames,
                m.height,
                m.width,
                cfg.data.frames,
                cfg.data.height,
                cfg.data.width
            ),
        ));
    }
    if m.scenes.is_empty() {
        return Err(Error::InvalidArgument(format!("dataset at {} has no scenes", data.display())));
    }
    Ok(())
}

fn train(config: Option<&Path>, out: &Path, data: &Path, phase: Option<String>, resume: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config)?;
    if let Some(p) = &phase {
        if cfg.plan.phase_index(p).is_none() {
            return Err(Error::config("--phase", format!("no phase named {p:?} in the plan")));
        }
    }
    check_dataset(&cfg, data)?;
    let scenes: Vec<Arc<_>> = load_dataset(data)?.into_iter().map(Arc::new).collect();
    let prepared = prepare_scenes(&scenes, &PreprocessOptions::default())?;
    create_dir(out)?;
    cfg.save(&out.join("config.json"))?;
    let settings = cfg.train_settings()?;
    write_json(
        &out.join("run.json"),
        &serde_json::json!({
            "config_hash": settings.config_hash,
            "prediction_target": cfg.model.prediction_target,
            "loss_space_note": "the v-space parameterization and an L2 loss on epsilon are both supported; \
                                model.prediction_target selects the training target",
            "seed": cfg.seed,
            "data": data,
        }),
    )?;
    let options = RunOptions {
        only_phase: phase,
        resume,
    };
    let results = run_progressive(&cfg.plan, &settings, &prepared, &prepared, out, &options)?;
    for r in &results {
        let first = r.losses.first().copied().unwrap_or(f64::NAN);
        let last = r.losses.last().copied().unwrap_or(f64::NAN);
        println!(
            "{:<8} T={:<3} steps={:<6} loss {first:.4} -> {last:.4}  {}",
            r.name,
            r.frame_length,
            r.losses.len(),
            r.checkpoint.display()
        );
    }
    Ok(())
}

fn parse_garment(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("--garment expects SCENE:FRAME, got {s:?}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Schedule recorded by the trainer, or the default when absent.
fn checkpoint_schedule(ckpt: &LoadedCheckpoint) -> ScheduleParams {
    serde_json::from_value::<TrainerState>(ckpt.manifest.trainer.clone())
        .map(|s| s.schedule)
        .unwrap_or_default()
}

#[derive(Serialize)]
struct SampleRecord {
    #[serde(flatten)]
    sample: SampleMetadata,
    checkpoint: PathBuf,
    phase: String,
    data: PathBuf,
    person_scene: usize,
    garment_scene: usize,
    garment_frame: usize,
}

fn to_u8(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

fn write_frames(dir: &Path, video: &VideoTensor) -> Result<()> {
    create_dir(dir)?;
    let d = video.dims();
    let px = video.to_vec()?;
    let frame_len = d.height * d.width * d.channels;
    for t in 0..d.frames {
        let buf: Vec<u8> = px[t * frame_len..(t + 1) * frame_len].iter().map(|&v| to_u8(v)).collect();
        let img = image::RgbImage::from_raw(d.width as u32, d.height as u32, buf)
            .ok_or_else(|| Error::InvalidState("frame buffer size mismatch".into()))?;
        let path = dir.join(format!("frame_{t:03}.png"));
        img.save(&path)
            .map_err(|e| Error::InvalidState(format!("writing {}: {e}", path.display())))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sample(
    ckpt_dir: &Path,
    data: &Path,
    person: usize,
    garment: &str,
    frames: Option<usize>,
    weights: TryOnWeights,
    seed: u64,
    steps: usize,
    out: &Path,
) -> Result<()> {
    let (g_scene, g_frame) = parse_garment(garment)?;
    let ckpt = load_checkpoint(ckpt_dir)?;
    let hash = checkpoint_hash(ckpt_dir)?;
    let sched = checkpoint_schedule(&ckpt).build()?;
    if steps == 0 || steps > sched.num_steps() {
        return Err(Error::InvalidArgument(format!("--steps must be in 1..={}", sched.num_steps())));
    }
    let model = &ckpt.model;
    let n = frames.unwrap_or(model.config().frame_length);
    check_frames(model, n)?;
    let scenes = load_dataset(data)?;
    for (what, idx) in [("--person", person), ("--garment", g_scene)] {
        if idx >= scenes.len() {
            return Err(Error::InvalidArgument(format!("{what} scene {idx} not in dataset of {}", scenes.len())));
        }
    }
    let cond = TryOnConditioning::from_scenes(
        &scenes[person],
        0,
        n,
        &scenes[g_scene],
        g_frame,
        &PreprocessOptions::default(),
    )?
    .to_dtype(model.dtype())?;
    let mut scfg = vton_core::sampler::SamplerConfig {
        num_steps: steps,
        seed,
        guidance: weights.into(),
        ..Default::default()
    };
    scfg.prediction_target = model.config().prediction_target;
    let video = sample_video(model, &cond, &scfg, &sched)?.to_dtype(DType::F32)?;

    create_dir(out)?;
    let mut map = HashMap::new();
    map.insert("video".to_string(), video.tensor().clone());
    save_tensors(&out.join("video.safetensors"), &map)?;
    write_frames(&out.join("frames"), &video)?;
    let record = SampleRecord {
        sample: SampleMetadata::new(&scfg, &sched, video.dims(), Some(hash)),
        checkpoint: ckpt_dir.to_path_buf(),
        phase: ckpt.manifest.phase.clone(),
        data: data.to_path_buf(),
        person_scene: person,
        garment_scene: g_scene,
        garment_frame: g_frame,
    };
    write_json(&out.join("metadata.json"), &record)?;
    println!("{} frames at {}x{} -> {}", n, video.dims().height, video.dims().width, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    ckpts: &[PathBuf],
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    sampler_steps: Option<usize>,
    frames: Option<usize>,
    workers: Option<usize>,
) -> Result<()> {
    let mut ecfg = load_config(config)?.eval;
    if let Some(s) = sampler_steps {
        ecfg.sampler_steps = s;
    }
    if let Some(f) = frames {
        ecfg.frames = f;
    }
    if let Some(w) = workers {
        ecfg.workers = w;
    }
    let scenes = load_dataset(data)?;
    let mut loaded = Vec::with_capacity(ckpts.len());
    for c in ckpts {
        loaded.push((load_checkpoint(c)?, checkpoint_hash(c)?));
    }
    let schedule = checkpoint_schedule(&loaded[0].0);
    if loaded.iter().any(|(c, _)| checkpoint_schedule(c) != schedule) {
        return Err(Error::InvalidArgument("checkpoints were trained with different noise schedules".into()));
    }
    let sched = schedule.build()?;
    if ecfg.sampler_steps == 0 || ecfg.sampler_steps > sched.num_steps() {
        return Err(Error::InvalidArgument(format!("sampler steps must be in 1..={}", sched.num_steps())));
    }
    let pairs = pair_for_eval(&scenes, ecfg.pairing_seed, ecfg.pairs_per_person)?;
    let models: Vec<NamedModel> = ckpts
        .iter()
        .zip(&loaded)
        .map(|(path, (c, h))| NamedModel {
            name: path.display().to_string(),
            model: &c.model,
            checkpoint_hash: Some(h.clone()),
        })
        .collect();
    let table = run_ablation_suite(&models, &scenes, &pairs, &sched, &ecfg)?;
    create_dir(out)?;
    write_json(&out.join("scores.json"), &table)?;
    let text = table.to_text();
    write_atomic(&out.join("scores.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InitConfig { out, preset } => init_config(&out, preset),
        Command::GenData {
            config,
            out,
            num_scenes,
            seed,
            workers,
        } => gen_data(config.as_deref(), &out, num_scenes, seed, workers),
        Command::Train {
            config,
            out,
            data,
            phase,
            resume,
        } => train(config.as_deref(), &out, &data, phase, resume),
        Command::Sample {
            ckpt,
            data,
            person,
            garment,
            frames,
            cfg_weights,
            seed,
            steps,
            out,
        } => sample(&ckpt, &data, person, &garment, frames, cfg_weights, seed, steps, &out),
        Command::Eval {
            ckpt,
            data,
            out,
            config,
            sampler_steps,
            frames,
            workers,
        } => eval(&ckpt, &data, &out, config.as_deref(), sampler_steps, frames, workers),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
