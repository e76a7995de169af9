//! Try-on input preprocessing: clothing-agnostic frames, garment
//! segmentation, and pose splat maps.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::scene::{Joint, Region, SyntheticScene};
use crate::error::{invalid_arg, Result};
use crate::tensor::{VideoDims, VideoTensor};

/// Default splat width for pose maps, in pixels.
pub const POSE_SIGMA: f32 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessOptions {
    /// Keep the original bottoms visible (top-only try-on).
    #[serde(default)]
    pub keep_bottoms: bool,
    #[serde(default = "default_sigma")]
    pub pose_sigma: f32,
}

fn default_sigma() -> f32 {
    POSE_SIGMA
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            keep_bottoms: false,
            pose_sigma: POSE_SIGMA,
        }
    }
}

/// Clothing-agnostic frames with the person mask appended: (1, T, H, W, 4).
///
/// Inside each frame's person bounding box every pixel is zeroed except the
/// visible body regions (and bottoms when `keep_bottoms`).
pub fn make_agnostic(scene: &SyntheticScene, opts: &PreprocessOptions) -> Result<VideoTensor> {
    let d = scene.frames.dims();
    let (t_n, h, w) = (d.frames, d.height, d.width);
    if scene.labels.len() != t_n * h * w {
        invalid_arg!("scene labels do not match frame dims");
    }
    let pix = scene.frames.to_vec()?;
    let mut out = Vec::with_capacity(t_n * h * w * 4);
    for t in 0..t_n {
        let bbox = person_bbox(scene, t);
        for row in 0..h {
            for col in 0..w {
                let i = (t * h + row) * w + col;
                let region = scene.region(t, row, col);
                let inside = bbox.is_some_and(|(r0, r1, c0, c1)| row >= r0 && row <= r1 && col >= c0 && col <= c1);
                let keep = !inside
                    || region.is_visible_body()
                    || (opts.keep_bottoms && region == Region::Bottoms);
                if keep {
                    out.extend_from_slice(&pix[3 * i..3 * i + 3]);
                } else {
                    out.extend_from_slice(&[0.0, 0.0, 0.0]);
                }
                out.push(if region.is_person() { 1.0 } else { 0.0 });
            }
        }
    }
    VideoTensor::from_vec(out, d.with_channels(4))
}

/// Inclusive (row0, row1, col0, col1) of the person mask in frame `t`.
pub fn person_bbox(scene: &SyntheticScene, t: usize) -> Option<(usize, usize, usize, usize)> {
    let (h, w) = (scene.height(), scene.width());
    let mut bb: Option<(usize, usize, usize, usize)> = None;
    for row in 0..h {
        for col in 0..w {
            if scene.region(t, row, col).is_person() {
                bb = Some(match bb {
                    None => (row, row, col, col),
                    Some((r0, r1, c0, c1)) => (r0.min(row), r1.max(row), c0.min(col), c1.max(col)),
                });
            }
        }
    }
    bb
}

/// Garment segmentation image with its mask appended, (1, 1, H, W, 4), and
/// the wearer's pose at that frame.
pub fn make_garment_inputs(scene: &SyntheticScene, frame_index: usize) -> Result<(VideoTensor, Vec<Joint>)> {
    let t_n = scene.num_frames();
    if frame_index >= t_n {
        invalid_arg!("garment frame {frame_index} out of range 0..{t_n}");
    }
    let (h, w) = (scene.height(), scene.width());
    let frame = scene.frames.narrow_frames(frame_index, 1)?.to_vec()?;
    let mut out = Vec::with_capacity(h * w * 4);
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if scene.region(frame_index, row, col) == Region::Garment {
                out.extend_from_slice(&frame[3 * i..3 * i + 3]);
                out.push(1.0);
            } else {
                out.extend_from_slice(&[0.0; 4]);
            }
        }
    }
    let img = VideoTensor::from_vec(out, VideoDims::new(1, 1, h, w, 4))?;
    Ok((img, scene.person_poses[frame_index].clone()))
}

/// One Gaussian splat channel per joint: (1, 1, H, W, K).
pub fn render_pose_map(joints: &[Joint], height: usize, width: usize, sigma: f32) -> Result<VideoTensor> {
    let k = joints.len();
    for (i, j) in joints.iter().enumerate() {
        if !(j[0] >= 0.0 && j[0] <= (height - 1) as f32 && j[1] >= 0.0 && j[1] <= (width - 1) as f32) {
            invalid_arg!("joint {i} at {:?} outside {height}x{width} frame", j);
        }
    }
    if k == 0 {
        // A zero-channel tensor is not a valid VideoTensor; callers get a single
        // all-zero channel instead.
        return VideoTensor::zeros(VideoDims::new(1, 1, height, width, 1), DType::F32);
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut out = Vec::with_capacity(height * width * k);
    for row in 0..height {
        for col in 0..width {
            for j in joints {
                let dr = row as f32 - j[0];
                let dc = col as f32 - j[1];
                out.push((-(dr * dr + dc * dc) * inv).exp());
            }
        }
    }
    VideoTensor::from_vec(out, VideoDims::new(1, 1, height, width, k))
}

/// Per-frame pose maps for a whole scene: (1, T, H, W, K).
pub fn render_pose_video(poses: &[Vec<Joint>], height: usize, width: usize, sigma: f32) -> Result<VideoTensor> {
    if poses.is_empty() {
        invalid_arg!("no poses to render");
    }
    let maps = poses
        .iter()
        .map(|p| render_pose_map(p, height, width, sigma).map(|m| m.into_tensor()))
        .collect::<Result<Vec<_>>>()?;
    VideoTensor::new(Tensor::cat(&maps, 1)?)
}

/// The conditioning inputs that can be independently dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionInput {
    /// Clothing-agnostic frames plus person mask.
    Agnostic,
    /// Garment segmentation plus garment mask.
    Garment,
    GarmentPose,
    PersonPose,
}

impl ConditionInput {
    pub const ALL: [ConditionInput; 4] = [
        ConditionInput::Agnostic,
        ConditionInput::Garment,
        ConditionInput::GarmentPose,
        ConditionInput::PersonPose,
    ];
}

/// Which inputs are replaced by their learned null embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct NullFlags {
    pub agnostic: bool,
    pub garment: bool,
    pub garment_pose: bool,
    pub person_pose: bool,
}

impl NullFlags {
    pub const NONE: NullFlags = NullFlags {
        agnostic: false,
        garment: false,
        garment_pose: false,
        person_pose: false,
    };
    pub const ALL: NullFlags = NullFlags {
        agnostic: true,
        garment: true,
        garment_pose: true,
        person_pose: true,
    };

    /// Nulls everything except `active`.
    pub fn keep_only(active: &[ConditionInput]) -> Self {
        let mut f = Self::ALL;
        for &a in active {
            f.set(a, false);
        }
        f
    }

    pub fn get(&self, input: ConditionInput) -> bool {
        match input {
            ConditionInput::Agnostic => self.agnostic,
            ConditionInput::Garment => self.garment,
            ConditionInput::GarmentPose => self.garment_pose,
            ConditionInput::PersonPose => self.person_pose,
        }
    }

    pub fn set(&mut self, input: ConditionInput, null: bool) {
        match input {
            ConditionInput::Agnostic => self.agnostic = null,
            ConditionInput::Garment => self.garment = null,
            ConditionInput::GarmentPose => self.garment_pose = null,
            ConditionInput::PersonPose => self.person_pose = null,
        }
    }
}

/// The full conditioning bundle for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TryOnConditioning {
    /// (B, T, H, W, C+1): agnostic frames with person mask.
    pub agnostic: VideoTensor,
    /// (B, 1, H, W, C+1): garment segmentation with garment mask.
    pub garment: VideoTensor,
    /// (B, T, H, W, K).
    pub person_pose: VideoTensor,
    /// (B, 1, H, W, K).
    pub garment_pose: VideoTensor,
}

impl TryOnConditioning {
    /// Conditioning for `person` frames `[start, start+len)` wearing the
    /// garment shown in `garment_scene` at `garment_frame`.
    pub fn from_scenes(
        person: &SyntheticScene,
        start: usize,
        len: usize,
        garment_scene: &SyntheticScene,
        garment_frame: usize,
        opts: &PreprocessOptions,
    ) -> Result<Self> {
        if len == 0 || start + len > person.num_frames() {
            invalid_arg!(
                "frame window [{start}, {}) outside scene of {} frames",
                start + len,
                person.num_frames()
            );
        }
        if (person.height(), person.width()) != (garment_scene.height(), garment_scene.width()) {
            invalid_arg!("person and garment scenes have different resolutions");
        }
        let (h, w) = (person.height(), person.width());
        let agnostic = make_agnostic(person, opts)?.narrow_frames(start, len)?;
        let person_pose = render_pose_video(&person.person_poses[start..start + len], h, w, opts.pose_sigma)?;
        let (garment, jg) = make_garment_inputs(garment_scene, garment_frame)?;
        let garment_pose = render_pose_map(&jg, h, w, opts.pose_sigma)?;
        Self::new(agnostic, garment, person_pose, garment_pose)
    }

    pub fn new(
        agnostic: VideoTensor,
        garment: VideoTensor,
        person_pose: VideoTensor,
        garment_pose: VideoTensor,
    ) -> Result<Self> {
        let a = agnostic.dims();
        let g = garment.dims();
        let p = person_pose.dims();
        let q = garment_pose.dims();
        if g.frames != 1 || q.frames != 1 {
            invalid_arg!("garment image and garment pose must be single frames");
        }
        if p.frames != a.frames {
            invalid_arg!("person poses have {} frames, agnostic has {}", p.frames, a.frames);
        }
        for (name, d) in [("garment", g), ("person_pose", p), ("garment_pose", q)] {
            if d.batch != a.batch || d.height != a.height || d.width != a.width {
                invalid_arg!("{name} dims {:?} inconsistent with agnostic {:?}", d.as_array(), a.as_array());
            }
        }
        if g.channels != a.channels {
            invalid_arg!("garment has {} channels, agnostic {}", g.channels, a.channels);
        }
        if p.channels != q.channels {
            invalid_arg!("person pose has {} channels, garment pose {}", p.channels, q.channels);
        }
        Ok(Self {
            agnostic,
            garment,
            person_pose,
            garment_pose,
        })
    }

    pub fn batch(&self) -> usize {
        self.agnostic.dims().batch
    }

    pub fn frames(&self) -> usize {
        self.agnostic.dims().frames
    }

    pub fn pose_channels(&self) -> usize {
        self.person_pose.dims().channels
    }

    pub fn concat(parts: &[TryOnConditioning]) -> Result<Self> {
        let pick = |f: fn(&TryOnConditioning) -> &VideoTensor| {
            VideoTensor::cat_batch(&parts.iter().map(|p| f(p).clone()).collect::<Vec<_>>())
        };
        Self::new(
            pick(|c| &c.agnostic)?,
            pick(|c| &c.garment)?,
            pick(|c| &c.person_pose)?,
            pick(|c| &c.garment_pose)?,
        )
    }

    pub fn narrow_frames(&self, start: usize, len: usize) -> Result<Self> {
        Self::new(
            self.agnostic.narrow_frames(start, len)?,
            self.garment.clone(),
            self.person_pose.narrow_frames(start, len)?,
            self.garment_pose.clone(),
        )
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Self::new(
            self.agnostic.to_dtype(dtype)?,
            self.garment.to_dtype(dtype)?,
            self.person_pose.to_dtype(dtype)?,
            self.garment_pose.to_dtype(dtype)?,
        )
    }
}
