use candle_core::DType;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vton_core::data::{generate_scene, make_garment_inputs, pair_for_eval, SyntheticScene};
use vton_core::diffusion::{make_schedule, ScheduleKind};
use vton_core::evaluation::{
    fid_frames, frechet_distance, fvd_videos, garment_similarity, run_ablation_suite, EvalConfig, FeatureExtractor,
    GaussianStats, HueHistogramEmbedder, NamedModel, PaletteSegmenter, RandomConvExtractor, TemporalDiffExtractor,
};
use vton_core::model::{build_model, ConditioningSpec, ModelConfig, TemporalInit};
use vton_core::{Error, VideoDims, VideoTensor};

#[test]
fn frechet_scalar_closed_forms() {
    let s = |m, v| GaussianStats::scalar(m, v).unwrap();
    assert!(frechet_distance(&s(0.5, 2.0), &s(0.5, 2.0)).unwrap().abs() <= 1e-6);
    assert!((frechet_distance(&s(0.0, 1.0), &s(3.0, 1.0)).unwrap() - 9.0).abs() <= 1e-6);
    assert!((frechet_distance(&s(0.0, 1.0), &s(0.0, 4.0)).unwrap() - 1.0).abs() <= 1e-6);
}

#[test]
fn frechet_rejects_bad_inputs() {
    let a = GaussianStats::scalar(0.0, 1.0).unwrap();
    let b = GaussianStats::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    assert!(matches!(frechet_distance(&a, &b), Err(Error::InvalidArgument(_))));
    let not_psd = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(matches!(GaussianStats::new(DVector::zeros(2), not_psd), Err(Error::NumericalFailure(_))));
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    assert!(GaussianStats::new(DVector::zeros(2), asym).is_err());
}

/// A random rotation, so diagonal covariances become non-diagonal but
/// still commute.
fn rotation(d: usize, seed: u64) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    m.qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn commuting_covariances_match_closed_form(
        seed in any::<u64>(),
        va in proptest::collection::vec(0.01f64..5.0, 4),
        vb in proptest::collection::vec(0.01f64..5.0, 4),
        ma in proptest::collection::vec(-2.0f64..2.0, 4),
        mb in proptest::collection::vec(-2.0f64..2.0, 4),
    ) {
        let q = rotation(4, seed);
        let cov = |v: &[f64]| {
            let c = &q * DMatrix::from_diagonal(&DVector::from_row_slice(v)) * q.transpose();
            (&c + c.transpose()) * 0.5
        };
        let a = GaussianStats::new(DVector::from_row_slice(&ma), cov(&va)).unwrap();
        let b = GaussianStats::new(DVector::from_row_slice(&mb), cov(&vb)).unwrap();
        let want: f64 = (0..4).map(|i| (ma[i] - mb[i]).powi(2) + (va[i].sqrt() - vb[i].sqrt()).powi(2)).sum();
        let got = frechet_distance(&a, &b).unwrap();
        prop_assert!((got - want).abs() <= 1e-6 * (1.0 + want), "{} vs {}", got, want);
        let back = frechet_distance(&b, &a).unwrap();
        prop_assert!((got - back).abs() <= 1e-8 * (1.0 + got));
        prop_assert!(frechet_distance(&a, &a).unwrap().abs() <= 1e-6);
    }
}

#[test]
fn fit_recovers_sample_moments() {
    let samples = vec![vec![1.0, 0.0], vec![3.0, 2.0], vec![2.0, 4.0]];
    let g = GaussianStats::fit(&samples).unwrap();
    assert!((g.mean[0] - 2.0).abs() < 1e-12 && (g.mean[1] - 2.0).abs() < 1e-12);
    // unbiased covariance plus the fixed ridge
    assert!((g.cov[(0, 0)] - (1.0 + 1e-6)).abs() < 1e-12);
    assert!((g.cov[(0, 1)] - 1.0).abs() < 1e-12);
    assert!((g.cov[(1, 1)] - (4.0 + 1e-6)).abs() < 1e-12);
    assert!(!g.rank_deficient);
    assert!(GaussianStats::fit(&samples[..2]).unwrap().rank_deficient);
}

fn scene_videos(range: std::ops::Range<u64>) -> Vec<VideoTensor> {
    range.map(|s| generate_scene(s, 8, 16, 16).unwrap().frames).collect()
}

#[test]
fn fvd_reacts_to_frame_order_and_fid_does_not() {
    let fx = RandomConvExtractor::new(0).unwrap();
    let vx = TemporalDiffExtractor { frame: fx.clone() };
    let real = scene_videos(0..12);
    let gen = scene_videos(100..112);
    let order = [0, 4, 1, 7, 2, 5, 3, 6];
    let shuffled: Vec<VideoTensor> = gen.iter().map(|v| v.permute_frames(&order).unwrap()).collect();
    let fid = fid_frames(&real, &gen, &fx, 1).unwrap().value;
    let fid_s = fid_frames(&real, &shuffled, &fx, 1).unwrap().value;
    let fvd = fvd_videos(&real, &gen, &vx, 1).unwrap();
    let fvd_s = fvd_videos(&real, &shuffled, &vx, 1).unwrap();
    assert!((fid_s - fid).abs() <= 0.05 * fid.abs().max(1e-12), "fid {fid} -> {fid_s}");
    assert!(fvd_s.value > fvd.value, "fvd {} -> {}", fvd.value, fvd_s.value);
    assert!(fvd.rank_deficient);

    assert!(fid_frames(&real, &real, &fx, 1).unwrap().value.abs() <= 1e-5);
    assert!(fvd_videos(&real, &real, &vx, 1).unwrap().value.abs() <= 1e-5);
    assert!(fid_frames(&real, &[], &fx, 1).is_err());
    assert!(fid_frames(&real, &gen, &vx, 1).is_err());
    // worker count does not change the result
    assert_eq!(fvd_videos(&real, &shuffled, &vx, 3).unwrap().value, fvd_s.value);
}

#[test]
fn scores_grow_with_noise() {
    let fx = RandomConvExtractor::new(1).unwrap();
    let real = scene_videos(0..6);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise: Vec<VideoTensor> = real
        .iter()
        .map(|v| VideoTensor::randn(&mut rng, v.dims(), DType::F32).unwrap())
        .collect();
    let mut last = -1.0;
    for level in [0.0, 0.2, 0.6, 1.2] {
        let noisy: Vec<VideoTensor> = real
            .iter()
            .zip(&noise)
            .map(|(v, n)| VideoTensor::new((v.tensor() + (n.tensor() * level).unwrap()).unwrap()).unwrap())
            .collect();
        let d = fid_frames(&real, &noisy, &fx, 1).unwrap().value;
        assert!(d >= last, "level {level}: {d} < {last}");
        last = d;
    }
    assert!(last > 0.0);
}

#[test]
fn extractor_dimension_is_fixed() {
    let fx = RandomConvExtractor::new(5).unwrap();
    for (h, w) in [(16, 16), (32, 24)] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = VideoTensor::randn(&mut rng, VideoDims::new(1, 2, h, w, 3), DType::F32).unwrap();
        assert!(fx.extract(&v).unwrap().iter().all(|f| f.len() == fx.dim()));
    }
    assert_ne!(RandomConvExtractor::new(6).unwrap().id(), fx.id());
}

/// (1, 1, H, W, 4) garment image, its mask, and (1, T, H, W, 3) frames that
/// show only that garment.
fn garment_fixture(seed: u64, frames: usize) -> (VideoTensor, Vec<bool>, VideoTensor) {
    let scene = generate_scene(seed, 4, 32, 24).unwrap();
    let (img, _) = make_garment_inputs(&scene, 0).unwrap();
    let d = img.dims();
    let px = img.to_vec().unwrap();
    let mask: Vec<bool> = (0..d.height * d.width).map(|i| px[i * 4 + 3] > 0.5).collect();
    let rgb: Vec<f32> = (0..d.height * d.width).flat_map(|i| px[i * 4..i * 4 + 3].to_vec()).collect();
    let video: Vec<f32> = (0..frames).flat_map(|_| rgb.clone()).collect();
    let v = VideoTensor::from_vec(video, VideoDims::new(1, frames, d.height, d.width, 3)).unwrap();
    (img, mask, v)
}

#[test]
fn identical_garment_scores_one() {
    let (img, mask, video) = garment_fixture(3, 3);
    assert!(mask.iter().any(|m| *m));
    let seg = |_: usize, _: &[[f32; 3]], _: usize, _: usize| mask.clone();
    let s = garment_similarity(&img, &video, &seg, &HueHistogramEmbedder).unwrap();
    assert!((s - 1.0).abs() <= 1e-6, "{s}");
    // the palette segmenter agrees on clean synthetic frames
    let s = garment_similarity(&img, &video, &PaletteSegmenter::default(), &HueHistogramEmbedder).unwrap();
    assert!((s - 1.0).abs() <= 1e-6, "{s}");
}

#[test]
fn orthogonal_embeddings_score_zero() {
    let (img, mask, video) = garment_fixture(4, 2);
    let seg = |_: usize, _: &[[f32; 3]], _: usize, _: usize| mask.clone();
    let calls = std::cell::Cell::new(0);
    let emb = |_: &[[f32; 3]]| {
        calls.set(calls.get() + 1);
        if calls.get() == 1 {
            vec![1.0, 0.0]
        } else {
            vec![0.0, 1.0]
        }
    };
    assert_eq!(garment_similarity(&img, &video, &seg, &emb).unwrap(), 0.0);
}

#[test]
fn hue_rotation_lowers_similarity() {
    let (img, mask, video) = garment_fixture(5, 2);
    let seg = |_: usize, _: &[[f32; 3]], _: usize, _: usize| mask.clone();
    // max + min - c keeps lightness and saturation and turns hue by 180 degrees
    let rotated: Vec<f32> = video
        .to_vec()
        .unwrap()
        .chunks(3)
        .flat_map(|p| {
            let (mx, mn) = (p[0].max(p[1]).max(p[2]), p[0].min(p[1]).min(p[2]));
            [mx + mn - p[0], mx + mn - p[1], mx + mn - p[2]]
        })
        .collect();
    let rotated = VideoTensor::from_vec(rotated, video.dims()).unwrap();
    let base = garment_similarity(&img, &video, &seg, &HueHistogramEmbedder).unwrap();
    let turned = garment_similarity(&img, &rotated, &seg, &HueHistogramEmbedder).unwrap();
    assert!(turned < base, "{turned} !< {base}");
}

#[test]
fn garment_similarity_edge_cases() {
    let (img, mask, video) = garment_fixture(6, 3);
    let none = |_: usize, _: &[[f32; 3]], _: usize, _: usize| vec![false; mask.len()];
    assert!(matches!(
        garment_similarity(&img, &video, &none, &HueHistogramEmbedder),
        Err(Error::UndefinedScore(_))
    ));
    // frame order does not matter
    let seg_by_frame = |t: usize, _: &[[f32; 3]], _: usize, _: usize| if t == 1 { vec![false; mask.len()] } else { mask.clone() };
    let s1 = garment_similarity(&img, &video, &seg_by_frame, &HueHistogramEmbedder).unwrap();
    let s2 = garment_similarity(&img, &video.permute_frames(&[2, 0, 1]).unwrap(), &seg_by_frame, &HueHistogramEmbedder).unwrap();
    assert!((s1 - s2).abs() < 1e-12);
}

fn eval_scenes() -> Vec<SyntheticScene> {
    (0..3).map(|s| generate_scene(50 + s, 4, 16, 16).unwrap()).collect()
}

#[test]
fn ablation_table_is_deterministic_with_fixed_schema() {
    let cfg = ModelConfig {
        base_channels: 4,
        num_dit_blocks: 1,
        attention_heads: 1,
        pose_embed_channels: 2,
        ..ModelConfig::tiny()
    };
    let spec = ConditioningSpec::standard(cfg.image_channels, cfg.pose_channels);
    let full = build_model(&cfg, &spec, 0).unwrap().inflate_temporal(TemporalInit::Random).unwrap();
    let image_only = build_model(&cfg, &spec, 0).unwrap();
    let scenes = eval_scenes();
    let pairs = pair_for_eval(&scenes, 0, 1).unwrap();
    let sched = make_schedule(10, ScheduleKind::Cosine).unwrap();
    let ecfg = EvalConfig {
        frames: 2,
        sampler_steps: 3,
        max_pairs: 3,
        ..EvalConfig::default()
    };
    let models = vec![
        NamedModel {
            name: "full".into(),
            model: &full,
            checkpoint_hash: None,
        },
        NamedModel {
            name: "no_temporal".into(),
            model: &image_only,
            checkpoint_hash: Some("x".into()),
        },
    ];
    let a = run_ablation_suite(&models, &scenes, &pairs, &sched, &ecfg).unwrap();
    let b = run_ablation_suite(&models, &scenes, &pairs, &sched, &ecfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.rows.len(), 2);
    assert_eq!(a.num_pairs, 3);
    let json = serde_json::to_value(&a).unwrap();
    for row in json["rows"].as_array().unwrap() {
        let keys: Vec<&String> = row["scores"].as_object().unwrap().keys().collect();
        assert_eq!(keys, vec!["fid", "fvd", "garment_sim"]);
    }
    assert!(a.to_text().contains("no_temporal"));
    assert!(run_ablation_suite(&[], &scenes, &pairs, &sched, &ecfg).is_err());
}
