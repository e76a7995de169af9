//! Fixed random convolutional feature extractors for the FID / FVD analogs.

use std::collections::HashMap;
use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::store::{load_tensors, save_tensors};
use crate::error::{invalid_arg, Result};
use crate::tensor::VideoTensor;

/// Directory override for cached extractor weights.
pub const CACHE_ENV: &str = "VTON_LAB_CACHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorScope {
    Frame,
    Video,
}

/// Name plus a hash of the parameters, recorded with every score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorId {
    pub name: String,
    pub param_hash: String,
}

pub trait FeatureExtractor: Sync {
    fn id(&self) -> ExtractorId;
    fn scope(&self) -> ExtractorScope;
    fn dim(&self) -> usize;
    /// Frame scope: one vector per frame of every clip, clip-major.
    /// Video scope: one vector per clip.
    fn extract(&self, video: &VideoTensor) -> Result<Vec<Vec<f64>>>;
}

const C1: usize = 8;
const C2: usize = 16;

/// Two random 3x3 conv layers with ReLU, then per-channel spatial mean and
/// standard deviation.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    w1: Tensor,
    w2: Tensor,
    seed: u64,
    hash: String,
}

fn random_weights(seed: u64) -> Result<HashMap<String, Tensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |shape: (usize, usize, usize, usize)| -> Result<Tensor> {
        let fan_in = shape.1 * shape.2 * shape.3;
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let n = shape.0 * fan_in;
        let v: Vec<f32> = (0..n).map(|_| dist.sample(&mut rng) as f32).collect();
        Ok(Tensor::from_vec(v, shape, &Device::Cpu)?)
    };
    let mut out = HashMap::new();
    out.insert("w1".to_string(), draw((C1, 3, 3, 3))?);
    out.insert("w2".to_string(), draw((C2, C1, 3, 3))?);
    Ok(out)
}

pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

impl RandomConvExtractor {
    /// Weights drawn from `seed`; when `VTON_LAB_CACHE` is set they are
    /// read from (or written to) that directory.
    pub fn new(seed: u64) -> Result<Self> {
        let weights = match cache_dir() {
            Some(dir) => {
                let path = dir.join(format!("random_conv_{seed}.safetensors"));
                if path.exists() {
                    load_tensors(&path)?
                } else {
                    let w = random_weights(seed)?;
                    crate::data::store::create_dir(&dir)?;
                    save_tensors(&path, &w)?;
                    w
                }
            }
            None => random_weights(seed)?,
        };
        Self::from_weights(&weights, seed)
    }

    fn from_weights(weights: &HashMap<String, Tensor>, seed: u64) -> Result<Self> {
        let get = |k: &str, shape: &[usize]| -> Result<Tensor> {
            match weights.get(k) {
                Some(t) if t.dims() == shape => Ok(t.to_dtype(DType::F32)?),
                _ => Err(crate::Error::InvalidState(format!("extractor weights missing or malformed: {k}"))),
            }
        };
        let w1 = get("w1", &[C1, 3, 3, 3])?;
        let w2 = get("w2", &[C2, C1, 3, 3])?;
        let mut h = Sha256::new();
        for t in [&w1, &w2] {
            for v in t.flatten_all()?.to_vec1::<f32>()? {
                h.update(v.to_le_bytes());
            }
        }
        let hash = format!("{:x}", h.finalize())[..16].to_string();
        Ok(Self { w1, w2, seed, hash })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// (N, 3, H, W) -> N feature vectors.
    fn features_nchw(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let h = x.conv2d(&self.w1, 1, 1, 1, 1)?.relu()?;
        let (_, _, hh, ww) = h.dims4()?;
        let h = if hh >= 2 && ww >= 2 { h.avg_pool2d(2)? } else { h };
        let h = h.conv2d(&self.w2, 1, 1, 1, 1)?.relu()?;
        let flat = h.flatten_from(2)?;
        let mean = flat.mean_keepdim(2)?;
        let std = flat.broadcast_sub(&mean)?.sqr()?.mean_keepdim(2)?.sqrt()?;
        let f = Tensor::cat(&[mean.squeeze(2)?, std.squeeze(2)?], 1)?.to_dtype(DType::F64)?;
        Ok(f.to_vec2::<f64>()?)
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn id(&self) -> ExtractorId {
        ExtractorId {
            name: format!("random_conv_frame(seed={})", self.seed),
            param_hash: self.hash.clone(),
        }
    }

    fn scope(&self) -> ExtractorScope {
        ExtractorScope::Frame
    }

    fn dim(&self) -> usize {
        2 * C2
    }

    fn extract(&self, video: &VideoTensor) -> Result<Vec<Vec<f64>>> {
        let d = video.dims();
        if d.channels < 3 {
            invalid_arg!("extractor needs 3 color channels, got {}", d.channels);
        }
        let x = video
            .tensor()
            .narrow(4, 0, 3)?
            .to_dtype(DType::F32)?
            .permute((0, 1, 4, 2, 3))?
            .contiguous()?
            .reshape((d.batch * d.frames, 3, d.height, d.width))?;
        self.features_nchw(&x)
    }
}

/// Frame features pooled over time, concatenated with the mean absolute
/// difference between consecutive frame features. The second half reacts
/// to frame order.
#[derive(Debug, Clone)]
pub struct TemporalDiffExtractor<F> {
    pub frame: F,
}

impl<F: FeatureExtractor> FeatureExtractor for TemporalDiffExtractor<F> {
    fn id(&self) -> ExtractorId {
        let inner = self.frame.id();
        ExtractorId {
            name: format!("temporal_diff({})", inner.name),
            param_hash: inner.param_hash,
        }
    }

    fn scope(&self) -> ExtractorScope {
        ExtractorScope::Video
    }

    fn dim(&self) -> usize {
        2 * self.frame.dim()
    }

    fn extract(&self, video: &VideoTensor) -> Result<Vec<Vec<f64>>> {
        let d = video.dims();
        let per_frame = self.frame.extract(video)?;
        let k = self.frame.dim();
        Ok(per_frame
            .chunks(d.frames)
            .map(|clip| {
                let mut out = vec![0.0; 2 * k];
                for f in clip {
                    for (o, v) in out[..k].iter_mut().zip(f) {
                        *o += v / clip.len() as f64;
                    }
                }
                if clip.len() > 1 {
                    for pair in clip.windows(2) {
                        for (j, o) in out[k..].iter_mut().enumerate() {
                            *o += (pair[1][j] - pair[0][j]).abs() / (clip.len() - 1) as f64;
                        }
                    }
                }
                out
            })
            .collect())
    }
}

/// Extracts from many videos, optionally on a rayon pool, keeping input order.
pub fn extract_all<F: FeatureExtractor + ?Sized>(fx: &F, videos: &[VideoTensor], workers: usize) -> Result<Vec<Vec<f64>>> {
    let per: Vec<Result<Vec<Vec<f64>>>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| crate::Error::InvalidState(format!("thread pool: {e}")))?;
        pool.install(|| videos.par_iter().map(|v| fx.extract(v)).collect())
    } else {
        videos.iter().map(|v| fx.extract(v)).collect()
    };
    let mut out = Vec::new();
    for r in per {
        out.extend(r?);
    }
    Ok(out)
}
