//! FID / FVD analogs over fixed feature extractors, garment similarity, and
//! the checkpoint comparison harness.

pub mod ablation;
pub mod features;
pub mod frechet;
pub mod garment;

pub use ablation::{run_ablation_suite, EvalConfig, NamedModel, ScoreRow, ScoreTable, Scores};
pub use features::{
    extract_all, ExtractorId, ExtractorScope, FeatureExtractor, RandomConvExtractor, TemporalDiffExtractor, CACHE_ENV,
};
pub use frechet::{frechet_distance, GaussianStats, COVARIANCE_RIDGE};
pub use garment::{garment_similarity, Embedder, HueHistogramEmbedder, PaletteSegmenter, Segmenter};

use crate::error::{invalid_arg, Result};
use crate::tensor::VideoTensor;

/// A distance plus whether either side had too few samples for a full-rank covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    pub value: f64,
    pub rank_deficient: bool,
}

fn distance<F: FeatureExtractor + ?Sized>(
    real: &[VideoTensor],
    generated: &[VideoTensor],
    fx: &F,
    workers: usize,
) -> Result<Distance> {
    if real.is_empty() || generated.is_empty() {
        invalid_arg!("both video sets must be non-empty");
    }
    let a = GaussianStats::fit(&extract_all(fx, real, workers)?)?;
    let b = GaussianStats::fit(&extract_all(fx, generated, workers)?)?;
    Ok(Distance {
        value: frechet_distance(&a, &b)?,
        rank_deficient: a.rank_deficient || b.rank_deficient,
    })
}

/// Frechet distance between per-frame feature distributions.
pub fn fid_frames<F: FeatureExtractor + ?Sized>(
    real: &[VideoTensor],
    generated: &[VideoTensor],
    fx: &F,
    workers: usize,
) -> Result<Distance> {
    if fx.scope() != ExtractorScope::Frame {
        invalid_arg!("fid_frames needs a frame-scope extractor");
    }
    distance(real, generated, fx, workers)
}

/// Frechet distance between whole-clip feature distributions.
pub fn fvd_videos<F: FeatureExtractor + ?Sized>(
    real: &[VideoTensor],
    generated: &[VideoTensor],
    fx: &F,
    workers: usize,
) -> Result<Distance> {
    if fx.scope() != ExtractorScope::Video {
        invalid_arg!("fvd_videos needs a video-scope extractor");
    }
    distance(real, generated, fx, workers)
}
