//! Scores several models on the same evaluation pairs and seeds.

use serde::{Deserialize, Serialize};

use super::features::{ExtractorId, FeatureExtractor, RandomConvExtractor, TemporalDiffExtractor};
use super::garment::{garment_similarity, HueHistogramEmbedder, PaletteSegmenter};
use super::{fid_frames, fvd_videos};
use crate::data::{make_garment_inputs, EvalPair, PreprocessOptions, SyntheticScene, TryOnConditioning};
use crate::diffusion::DiffusionSchedule;
use crate::error::{invalid_arg, Result};
use crate::guidance::TryOnWeights;
use crate::model::TryOnDenoiser;
use crate::sampler::{sample_video, SamplerConfig};
use crate::tensor::VideoTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Use at most this many pairs (in pairing order).
    pub max_pairs: usize,
    /// Garment frames drawn per person clip when pairing.
    pub pairs_per_person: usize,
    pub pairing_seed: u64,
    /// Frames sampled per clip (from the start of the person clip).
    pub frames: usize,
    pub sampler_steps: usize,
    pub seed: u64,
    pub weights: TryOnWeights,
    pub extractor_seed: u64,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_pairs: 4,
            pairs_per_person: 1,
            pairing_seed: 0,
            frames: 16,
            sampler_steps: 1000,
            seed: 0,
            weights: TryOnWeights::DEFAULT,
            extractor_seed: 0,
            workers: 1,
        }
    }
}

pub struct NamedModel<'a> {
    pub name: String,
    pub model: &'a TryOnDenoiser,
    pub checkpoint_hash: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scores {
    pub fid: f64,
    pub fvd: f64,
    pub garment_sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub checkpoint: String,
    pub checkpoint_hash: Option<String>,
    pub scores: Scores,
    /// Sample-count caveats (covariances regularized by the ridge only).
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub frame_extractor: ExtractorId,
    pub video_extractor: ExtractorId,
    pub num_pairs: usize,
    pub config: EvalConfig,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.checkpoint.len()).max().unwrap_or(0).max(10);
        let mut s = format!("{:<w$}  {:>12}  {:>12}  {:>12}\n", "checkpoint", "fid", "fvd", "garment_sim");
        for r in &self.rows {
            s += &format!(
                "{:<w$}  {:>12.4}  {:>12.4}  {:>12.4}\n",
                r.checkpoint, r.scores.fid, r.scores.fvd, r.scores.garment_sim
            );
        }
        s += &format!(
            "pairs: {}  frame extractor: {} [{}]  video extractor: {} [{}]\n",
            self.num_pairs,
            self.frame_extractor.name,
            self.frame_extractor.param_hash,
            self.video_extractor.name,
            self.video_extractor.param_hash
        );
        s
    }
}

/// Conditioning for a batch of pairs, first `frames` frames of each person clip.
pub fn pair_conditioning(scenes: &[SyntheticScene], pairs: &[EvalPair], frames: usize) -> Result<TryOnConditioning> {
    let opts = PreprocessOptions::default();
    let parts = pairs
        .iter()
        .map(|p| {
            TryOnConditioning::from_scenes(
                &scenes[p.person_scene],
                0,
                frames,
                &scenes[p.garment_scene],
                p.garment_frame,
                &opts,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    TryOnConditioning::concat(&parts)
}

pub fn run_ablation_suite(
    models: &[NamedModel],
    scenes: &[SyntheticScene],
    pairs: &[EvalPair],
    sched: &DiffusionSchedule,
    cfg: &EvalConfig,
) -> Result<ScoreTable> {
    if models.is_empty() {
        invalid_arg!("no checkpoints to evaluate");
    }
    let pairs = &pairs[..pairs.len().min(cfg.max_pairs)];
    if pairs.is_empty() {
        invalid_arg!("no evaluation pairs");
    }
    for p in pairs {
        if p.person_scene >= scenes.len() || p.garment_scene >= scenes.len() {
            invalid_arg!("pair {p:?} refers to a missing scene");
        }
    }
    let frame_fx = RandomConvExtractor::new(cfg.extractor_seed)?;
    let video_fx = TemporalDiffExtractor { frame: frame_fx.clone() };
    let cond = pair_conditioning(scenes, pairs, cfg.frames)?;
    let real: Vec<VideoTensor> = pairs
        .iter()
        .map(|p| VideoTensor::new(scenes[p.person_scene].frames.tensor().narrow(1, 0, cfg.frames)?))
        .collect::<Result<_>>()?;
    let garments: Vec<VideoTensor> = pairs
        .iter()
        .map(|p| Ok(make_garment_inputs(&scenes[p.garment_scene], p.garment_frame)?.0))
        .collect::<Result<_>>()?;

    let sampler = SamplerConfig {
        num_steps: cfg.sampler_steps,
        seed: cfg.seed,
        guidance: cfg.weights.into(),
        ..SamplerConfig::default()
    };
    let mut rows = Vec::with_capacity(models.len());
    for m in models {
        log::info!("evaluating {} on {} pairs", m.name, pairs.len());
        let video = sample_video(m.model, &cond.to_dtype(m.model.dtype())?, &sampler, sched)?;
        let generated: Vec<VideoTensor> = (0..pairs.len())
            .map(|i| video.narrow_batch(i, 1))
            .collect::<Result<_>>()?;
        let fid = fid_frames(&real, &generated, &frame_fx, cfg.workers)?;
        let fvd = fvd_videos(&real, &generated, &video_fx, cfg.workers)?;
        let seg = PaletteSegmenter::default();
        let mut sims = Vec::with_capacity(pairs.len());
        for (g, v) in garments.iter().zip(&generated) {
            // a frame set with no garment pixels counts as zero similarity
            sims.push(garment_similarity(g, v, &seg, &HueHistogramEmbedder).unwrap_or(0.0));
        }
        let mut notes = Vec::new();
        if fid.rank_deficient {
            notes.push("fid: fewer frames than feature dimension + 1".into());
        }
        if fvd.rank_deficient {
            notes.push("fvd: fewer clips than feature dimension + 1".into());
        }
        rows.push(ScoreRow {
            checkpoint: m.name.clone(),
            checkpoint_hash: m.checkpoint_hash.clone(),
            scores: Scores {
                fid: fid.value,
                fvd: fvd.value,
                garment_sim: sims.iter().sum::<f64>() / sims.len() as f64,
            },
            notes,
        });
    }
    Ok(ScoreTable {
        frame_extractor: frame_fx.id(),
        video_extractor: video_fx.id(),
        num_pairs: pairs.len(),
        config: cfg.clone(),
        rows,
    })
}
