//! Joint image/video batch stream. Every batch is either all images
//! (T = 1) or all video clips (consecutive frames of one scene each).

use std::sync::Arc;

use candle_core::DType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_agnostic, render_pose_video, PreprocessOptions, SyntheticScene, TryOnConditioning};
use crate::data::preprocess::{make_garment_inputs, render_pose_map};
use crate::error::{invalid_arg, Result};
use crate::tensor::VideoTensor;

/// A scene with its per-frame conditioning precomputed.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scene: Arc<SyntheticScene>,
    /// (1, T, H, W, C+1).
    pub agnostic: VideoTensor,
    /// (1, T, H, W, K).
    pub person_pose: VideoTensor,
    pub pose_sigma: f32,
}

impl PreparedScene {
    pub fn new(scene: Arc<SyntheticScene>, opts: &PreprocessOptions) -> Result<Self> {
        let (h, w) = (scene.height(), scene.width());
        Ok(Self {
            agnostic: make_agnostic(&scene, opts)?,
            person_pose: render_pose_video(&scene.person_poses, h, w, opts.pose_sigma)?,
            pose_sigma: opts.pose_sigma,
            scene,
        })
    }

    /// Target frames and conditioning for `[start, start+len)`, with the
    /// garment taken from frame `garment_frame` of the same scene.
    pub fn clip(&self, start: usize, len: usize, garment_frame: usize) -> Result<(VideoTensor, TryOnConditioning)> {
        let s = &self.scene;
        let x0 = VideoTensor::new(s.frames.tensor().narrow(1, start, len)?)?;
        let (garment, jg) = make_garment_inputs(s, garment_frame)?;
        let gpose = render_pose_map(&jg, s.height(), s.width(), self.pose_sigma)?;
        let cond = TryOnConditioning::new(
            self.agnostic.narrow_frames(start, len)?,
            garment,
            self.person_pose.narrow_frames(start, len)?,
            gpose,
        )?;
        Ok((x0, cond))
    }
}

pub fn prepare_scenes(scenes: &[Arc<SyntheticScene>], opts: &PreprocessOptions) -> Result<Vec<PreparedScene>> {
    scenes.iter().map(|s| PreparedScene::new(s.clone(), opts)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    Image,
    Video,
}

/// One clip of a batch: scene index, first frame, garment frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipRef {
    pub scene: usize,
    pub start: usize,
    pub len: usize,
    pub garment_frame: usize,
}

/// Indices of a batch before tensors are built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub kind: BatchKind,
    pub clips: Vec<ClipRef>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub kind: BatchKind,
    pub x0: VideoTensor,
    pub cond: TryOnConditioning,
    pub clips: Vec<ClipRef>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.clips.len()
    }

    pub fn frames(&self) -> usize {
        self.x0.dims().frames
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub frame_length: usize,
    pub image_fraction: f64,
    pub image_batch_size: usize,
    pub video_batch_size: usize,
}

pub struct JointStream<'a> {
    image: &'a [PreparedScene],
    video: &'a [PreparedScene],
    spec: StreamSpec,
    rng: ChaCha8Rng,
    dtype: DType,
}

pub fn make_joint_stream<'a>(
    image_ds: &'a [PreparedScene],
    video_ds: &'a [PreparedScene],
    spec: StreamSpec,
    seed: u64,
) -> Result<JointStream<'a>> {
    if !(0.0..=1.0).contains(&spec.image_fraction) {
        invalid_arg!("image_fraction {} outside [0, 1]", spec.image_fraction);
    }
    if spec.image_fraction > 0.0 {
        if image_ds.is_empty() {
            invalid_arg!("image dataset is empty but image_fraction is {}", spec.image_fraction);
        }
        if spec.image_batch_size == 0 {
            invalid_arg!("image batch size must be positive");
        }
    }
    if spec.image_fraction < 1.0 {
        if video_ds.is_empty() {
            invalid_arg!("video dataset is empty but image_fraction is {}", spec.image_fraction);
        }
        if spec.video_batch_size == 0 || spec.frame_length == 0 {
            invalid_arg!("video batch size and frame length must be positive");
        }
        if let Some(s) = video_ds.iter().find(|s| s.scene.num_frames() < spec.frame_length) {
            invalid_arg!(
                "scene with {} frames is shorter than the clip length {}",
                s.scene.num_frames(),
                spec.frame_length
            );
        }
    }
    Ok(JointStream {
        image: image_ds,
        video: video_ds,
        spec,
        rng: ChaCha8Rng::seed_from_u64(seed),
        dtype: DType::F32,
    })
}

impl<'a> JointStream<'a> {
    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    /// Restarts the index stream from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn spec(&self) -> &StreamSpec {
        &self.spec
    }

    /// Draws the next batch's indices.
    pub fn next_plan(&mut self) -> BatchPlan {
        let image = self.spec.image_fraction >= 1.0 || self.rng.gen::<f64>() < self.spec.image_fraction;
        let (ds, kind, n, len) = if image {
            (self.image, BatchKind::Image, self.spec.image_batch_size, 1)
        } else {
            (self.video, BatchKind::Video, self.spec.video_batch_size, self.spec.frame_length)
        };
        let clips = (0..n)
            .map(|_| {
                let scene = self.rng.gen_range(0..ds.len());
                let frames = ds[scene].scene.num_frames();
                ClipRef {
                    scene,
                    start: self.rng.gen_range(0..=frames - len),
                    len,
                    garment_frame: self.rng.gen_range(0..frames),
                }
            })
            .collect();
        BatchPlan { kind, clips }
    }

    pub fn materialize(&self, plan: &BatchPlan) -> Result<Batch> {
        let ds = match plan.kind {
            BatchKind::Image => self.image,
            BatchKind::Video => self.video,
        };
        let mut xs = Vec::with_capacity(plan.clips.len());
        let mut conds = Vec::with_capacity(plan.clips.len());
        for c in &plan.clips {
            let (x, cond) = ds[c.scene].clip(c.start, c.len, c.garment_frame)?;
            xs.push(x);
            conds.push(cond);
        }
        Ok(Batch {
            kind: plan.kind,
            x0: VideoTensor::cat_batch(&xs)?.to_dtype(self.dtype)?,
            cond: TryOnConditioning::concat(&conds)?.to_dtype(self.dtype)?,
            clips: plan.clips.clone(),
        })
    }
}

impl Iterator for JointStream<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let plan = self.next_plan();
        Some(self.materialize(&plan))
    }
}
