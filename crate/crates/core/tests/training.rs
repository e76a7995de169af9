mod common;

use std::sync::Arc;

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vton_core::data::{generate_scene, ConditionInput, PreprocessOptions, SyntheticScene};
use vton_core::diffusion::{make_schedule, ScheduleKind};
use vton_core::model::{load_checkpoint, Branch, ModelConfig, ParamGroup};
use vton_core::training::{
    checkpoint_dir, lr_at, make_joint_stream, metrics_path, prepare_scenes, read_metrics, run_progressive,
    sample_null_flags, BatchKind, OptimizerSpec, PhasePlan, PhaseSpec, PreparedScene, RunOptions, StreamSpec,
    TrainSettings,
};
use vton_core::{Error, VideoDims};

fn scenes(n: usize, frames: usize) -> Vec<Arc<SyntheticScene>> {
    (0..n)
        .map(|i| Arc::new(generate_scene(100 + i as u64, frames, 16, 16).unwrap()))
        .collect()
}

fn prepared(n: usize, frames: usize) -> Vec<PreparedScene> {
    prepare_scenes(&scenes(n, frames), &PreprocessOptions::default()).unwrap()
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        num_dit_blocks: 1,
        attention_heads: 1,
        pose_embed_channels: 2,
        ..ModelConfig::tiny()
    }
}

fn tiny_plan(image: u64, video: u64) -> PhasePlan {
    let mut img = PhaseSpec::image(image);
    img.batch_size = 2;
    img.image_batch_size = 2;
    let mut vid = PhaseSpec::video(8, video);
    vid.inflate_temporal = true;
    vid.image_batch_size = 2;
    PhasePlan { phases: vec![img, vid] }
}

fn settings(seed: u64) -> TrainSettings {
    let mut s = TrainSettings::new(tiny_model(), make_schedule(100, ScheduleKind::Cosine).unwrap(), seed);
    s.config_hash = "test-config".into();
    s
}

#[test]
fn joint_stream_statistics() {
    let ds = prepared(3, 10);
    let spec = StreamSpec {
        frame_length: 8,
        image_fraction: 0.5,
        image_batch_size: 4,
        video_batch_size: 1,
    };
    let mut stream = make_joint_stream(&ds, &ds, spec, 7).unwrap();
    let mut images = 0;
    for _ in 0..10_000 {
        let p = stream.next_plan();
        match p.kind {
            BatchKind::Image => {
                images += 1;
                assert_eq!(p.clips.len(), 4);
                assert!(p.clips.iter().all(|c| c.len == 1));
            }
            BatchKind::Video => {
                assert_eq!(p.clips.len(), 1);
                let c = p.clips[0];
                assert_eq!(c.len, 8);
                assert!(c.start + c.len <= 10);
            }
        }
    }
    let frac = images as f64 / 10_000.0;
    assert!((0.47..=0.53).contains(&frac), "image fraction {frac}");
}

#[test]
fn video_batches_are_consecutive_frames_of_one_scene() {
    let raw = scenes(2, 10);
    let ds = prepare_scenes(&raw, &PreprocessOptions::default()).unwrap();
    let spec = StreamSpec {
        frame_length: 8,
        image_fraction: 0.0,
        image_batch_size: 1,
        video_batch_size: 1,
    };
    let mut stream = make_joint_stream(&ds, &ds, spec, 1).unwrap();
    for _ in 0..5 {
        let plan = stream.next_plan();
        let batch = stream.materialize(&plan).unwrap();
        assert_eq!(batch.kind, BatchKind::Video);
        let c = plan.clips[0];
        let want = raw[c.scene].frames.narrow_frames(c.start, 8).unwrap();
        assert_eq!(batch.x0.max_abs_diff(&want).unwrap(), 0.0);
        assert_eq!(batch.x0.dims(), VideoDims::new(1, 8, 16, 16, 3));
        assert_eq!(batch.cond.frames(), 8);
    }
}

#[test]
fn stream_rejects_impossible_specs() {
    let ds = prepared(1, 4);
    let spec = StreamSpec {
        frame_length: 8,
        image_fraction: 0.5,
        image_batch_size: 1,
        video_batch_size: 1,
    };
    assert!(matches!(make_joint_stream(&ds, &ds, spec, 0), Err(Error::InvalidArgument(_))));
    let spec = StreamSpec {
        image_fraction: 1.5,
        frame_length: 1,
        ..spec
    };
    assert!(make_joint_stream(&ds, &ds, spec, 0).is_err());
    assert!(make_joint_stream(&[], &ds, StreamSpec { image_fraction: 1.0, ..spec }, 0).is_err());
}

#[test]
fn dropout_frequency() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut per_input = [0usize; 4];
    let draws = 10_000;
    for _ in 0..draws {
        let f = sample_null_flags(&mut rng, 0.1);
        for (k, input) in ConditionInput::ALL.iter().enumerate() {
            per_input[k] += f.get(*input) as usize;
        }
    }
    for count in per_input {
        let rate = count as f64 / draws as f64;
        assert!((0.09..=0.11).contains(&rate), "rate {rate}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert!((0..100).all(|_| sample_null_flags(&mut rng, 0.0) == vton_core::data::NullFlags::NONE));
}

#[test]
fn learning_rate_schedule() {
    let s = OptimizerSpec::desk_scale();
    assert_eq!(lr_at(0, &s), 0.0);
    assert!((lr_at(s.warmup_steps, &s) - s.lr_start).abs() < 1e-15);
    assert!((lr_at(s.warmup_steps + s.decay_steps, &s) - s.lr_end).abs() < 1e-15);
    assert_eq!(lr_at(10 * (s.warmup_steps + s.decay_steps), &s), s.lr_end);
    let p = OptimizerSpec::paper_scale();
    assert_eq!((p.lr_start, p.lr_end, p.warmup_steps, p.decay_steps), (1e-4, 1e-5, 10_000, 1_000_000));
}

#[test]
fn zero_iteration_plan_is_function_preserving() {
    let ds = prepared(2, 8);
    let tmp = tempfile::tempdir().unwrap();
    let results = run_progressive(&tiny_plan(0, 0), &settings(1), &ds, &ds, tmp.path(), &RunOptions::default()).unwrap();
    assert_eq!(results.len(), 2);
    assert!(results.iter().all(|r| r.losses.is_empty()));
    let img = load_checkpoint(&checkpoint_dir(tmp.path(), "image")).unwrap().model;
    let vid = load_checkpoint(&checkpoint_dir(tmp.path(), "t8")).unwrap().model;
    assert!(vid.config().temporal_enabled);
    assert_eq!(vid.config().frame_length, 8);
    assert_eq!(
        img.params().group_tensors(ParamGroup::Spatial).unwrap().len(),
        vid.params().group_tensors(ParamGroup::Spatial).unwrap().len()
    );
    let (_, cond) = ds[0].clip(0, 8, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = common::rand_video(&mut rng, VideoDims::new(1, 8, 16, 16, 3), DType::F32);
    let nulls = [vton_core::data::NullFlags::NONE];
    let a = img.forward(&z, &[0.5], &cond, &nulls, Branch::Image).unwrap();
    let b = vid.forward(&z, &[0.5], &cond, &nulls, Branch::Video).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-5);
}

#[test]
fn metrics_log_one_line_per_step() {
    let ds = prepared(2, 8);
    let tmp = tempfile::tempdir().unwrap();
    let results = run_progressive(&tiny_plan(3, 2), &settings(2), &ds, &ds, tmp.path(), &RunOptions::default()).unwrap();
    assert_eq!(results[0].losses.len(), 3);
    assert_eq!(results[1].global_step, 5);
    let img = read_metrics(&metrics_path(tmp.path(), "image")).unwrap();
    let vid = read_metrics(&metrics_path(tmp.path(), "t8")).unwrap();
    assert_eq!(img.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(vid.iter().map(|r| r.step).collect::<Vec<_>>(), vec![3, 4]);
    assert!(img.iter().all(|r| r.image_batch && r.loss.is_finite() && r.phase == "image"));
    assert_eq!(img.iter().map(|r| r.loss).collect::<Vec<_>>(), results[0].losses);
}

fn param_bits(dir: &std::path::Path) -> Vec<(String, Vec<u32>)> {
    let m = load_checkpoint(dir).unwrap().model;
    m.params()
        .iter()
        .map(|(n, p)| {
            let v = p.var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            (n.clone(), v.iter().map(|x| x.to_bits()).collect())
        })
        .collect()
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let ds = prepared(2, 8);
    let full = tempfile::tempdir().unwrap();
    run_progressive(&tiny_plan(4, 2), &settings(3), &ds, &ds, full.path(), &RunOptions::default()).unwrap();

    // a run stopped after 2 image steps, marked as mid-phase
    let part = tempfile::tempdir().unwrap();
    run_progressive(&tiny_plan(2, 2), &settings(3), &ds, &ds, part.path(), &RunOptions {
        only_phase: Some("image".into()),
        resume: None,
    })
    .unwrap();
    let ckpt = checkpoint_dir(part.path(), "image");
    let manifest_path = ckpt.join("manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    manifest["trainer"]["phase_complete"] = serde_json::json!(false);
    std::fs::write(&manifest_path, manifest.to_string()).unwrap();

    let resumed = run_progressive(&tiny_plan(4, 2), &settings(3), &ds, &ds, part.path(), &RunOptions {
        only_phase: None,
        resume: Some(ckpt.clone()),
    })
    .unwrap();
    assert_eq!(resumed.len(), 2);
    assert_eq!(resumed[0].losses.len(), 2);
    for phase in ["image", "t8"] {
        assert_eq!(
            param_bits(&checkpoint_dir(full.path(), phase)),
            param_bits(&checkpoint_dir(part.path(), phase)),
            "phase {phase}"
        );
    }
    let a = read_metrics(&metrics_path(full.path(), "image")).unwrap();
    let b = read_metrics(&metrics_path(part.path(), "image")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resume_with_other_config_hash_is_a_config_error() {
    let ds = prepared(2, 8);
    let tmp = tempfile::tempdir().unwrap();
    run_progressive(&tiny_plan(1, 0), &settings(4), &ds, &ds, tmp.path(), &RunOptions::default()).unwrap();
    let mut other = settings(4);
    other.config_hash = "something-else".into();
    let res = run_progressive(&tiny_plan(1, 0), &other, &ds, &ds, tmp.path(), &RunOptions {
        only_phase: None,
        resume: Some(checkpoint_dir(tmp.path(), "image")),
    });
    assert!(matches!(res, Err(Error::Config { .. })), "{res:?}");
}

#[test]
fn single_phase_runs_need_their_predecessor() {
    let ds = prepared(2, 8);
    let tmp = tempfile::tempdir().unwrap();
    let only = |name: &str| RunOptions {
        only_phase: Some(name.into()),
        resume: None,
    };
    assert!(matches!(
        run_progressive(&tiny_plan(1, 1), &settings(5), &ds, &ds, tmp.path(), &only("t8")),
        Err(Error::InvalidState(_))
    ));
    let r = run_progressive(&tiny_plan(1, 1), &settings(5), &ds, &ds, tmp.path(), &only("image")).unwrap();
    assert_eq!(r.len(), 1);
    assert!(!checkpoint_dir(tmp.path(), "t8").exists());
    let r = run_progressive(&tiny_plan(1, 1), &settings(5), &ds, &ds, tmp.path(), &only("t8")).unwrap();
    assert_eq!(r.len(), 1);
    assert!(checkpoint_dir(tmp.path(), "t8").join("manifest.json").exists());
    assert!(matches!(
        run_progressive(&tiny_plan(1, 1), &settings(5), &ds, &ds, tmp.path(), &only("t99")),
        Err(Error::Config { .. })
    ));
}

#[test]
fn plan_presets() {
    let desk = PhasePlan::desk_scale();
    assert_eq!(desk.frame_lengths(), vec![1, 8, 16, 32, 64]);
    assert_eq!(desk.phases[0].iterations, 5_000);
    assert!(desk.phases[1..].iter().all(|p| p.iterations == 1_000));
    assert!(desk.phases[1].inflate_temporal);
    assert!(desk.phases[4].inject_resampling && !desk.phases[3].inject_resampling);
    assert_eq!(desk.phases[0].batch_size, 8);
    assert_eq!(desk.phases[1].batch_size, 1);
    let paper = PhasePlan::paper_scale();
    assert_eq!(paper.phases[0].iterations, 1_000_000);
    assert_eq!(paper.phases[1].iterations, 150_000);
    let ablated = desk.without_t8();
    ablated.validate().unwrap();
    assert_eq!(ablated.frame_lengths(), vec![1, 16, 32, 64]);
    let bad = PhasePlan {
        phases: vec![desk.phases[0].clone(), desk.phases[2].clone()],
    };
    assert!(matches!(bad.validate(), Err(Error::Config { .. })));
}
