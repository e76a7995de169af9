//! Procedural articulated figures with exact labels.
//!
//! A figure is a kinematic tree of 13 joints rooted at the pelvis. Each limb
//! segment has an angle measured from "straight down" (positive toward +col)
//! that oscillates as `base + amp * scale * sin(omega * t + phase)`, and
//! child segments add their angle to the parent's. The pelvis itself sways:
//!
//! ```text
//! pelvis_row(t) = 0.55 H + 0.02 u sin(omega t + phase_root)
//! pelvis_col(t) = 0.50 W + 0.06 W sin(0.5 omega t + phase_root)
//! ```
//!
//! with `u = min(H, 4W/3)` the figure scale. Joints are clamped to the frame.
//! The per-frame joint displacement is bounded by [`max_joint_step`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::tensor::{VideoDims, VideoTensor};

/// (row, col) in pixel units.
pub type Joint = [f32; 2];

pub const NUM_JOINTS: usize = 13;
pub const MIN_SIDE: usize = 16;

pub mod joint {
    pub const HEAD: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const L_SHOULDER: usize = 3;
    pub const R_ELBOW: usize = 4;
    pub const L_ELBOW: usize = 5;
    pub const R_HAND: usize = 6;
    pub const L_HAND: usize = 7;
    pub const PELVIS: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const L_KNEE: usize = 10;
    pub const R_FOOT: usize = 11;
    pub const L_FOOT: usize = 12;
}

/// Per-pixel region labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Region {
    Background = 0,
    Head = 1,
    Garment = 2,
    Arms = 3,
    Hands = 4,
    Legs = 5,
    Shoes = 6,
    Bottoms = 7,
}

impl Region {
    pub const ALL: [Region; 8] = [
        Region::Background,
        Region::Head,
        Region::Garment,
        Region::Arms,
        Region::Hands,
        Region::Legs,
        Region::Shoes,
        Region::Bottoms,
    ];

    pub fn from_u8(v: u8) -> Option<Region> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Background => "background",
            Region::Head => "head",
            Region::Garment => "garment",
            Region::Arms => "arms",
            Region::Hands => "hands",
            Region::Legs => "legs",
            Region::Shoes => "shoes",
            Region::Bottoms => "bottoms",
        }
    }

    /// Regions left untouched by clothing-agnostic masking.
    pub fn is_visible_body(self) -> bool {
        matches!(self, Region::Head | Region::Hands | Region::Legs | Region::Shoes)
    }

    pub fn is_person(self) -> bool {
        self != Region::Background
    }
}

pub const BACKGROUND: [f32; 3] = [0.6, 0.6, 0.6];

/// Garment base colors, indexed by `garment_color_id`.
pub const GARMENT_PALETTE: [[f32; 3]; 8] = [
    [0.9, -0.7, -0.7],
    [-0.7, 0.8, -0.6],
    [-0.6, -0.5, 0.9],
    [0.9, 0.8, -0.8],
    [0.8, -0.6, 0.8],
    [-0.7, 0.8, 0.8],
    [0.9, 0.2, -0.8],
    [-0.1, -0.8, 0.6],
];

const SKIN_TONES: [[f32; 3]; 3] = [[0.7, 0.3, 0.1], [0.4, 0.0, -0.3], [0.1, -0.3, -0.5]];
const HAND_SHIFT: [f32; 3] = [0.15, 0.15, 0.15];
const ARM_SHIFT: [f32; 3] = [-0.1, -0.05, 0.0];
const LEG_COLOR: [f32; 3] = [-0.2, -0.5, -0.1];
const BOTTOMS_COLOR: [f32; 3] = [-0.8, -0.8, -0.4];
const SHOE_COLOR: [f32; 3] = [-0.95, -0.95, -0.95];

/// Segment lengths as fractions of the figure scale `u`.
pub mod body {
    pub const TORSO: f32 = 0.25;
    pub const NECK_TO_HEAD: f32 = 0.08;
    pub const SHOULDER_HALF: f32 = 0.08;
    pub const UPPER_ARM: f32 = 0.12;
    pub const FOREARM: f32 = 0.11;
    pub const THIGH: f32 = 0.14;
    pub const SHIN: f32 = 0.14;

    pub const HEAD_RADIUS: f32 = 0.065;
    pub const TORSO_RADIUS: f32 = 0.09;
    pub const ARM_RADIUS: f32 = 0.03;
    pub const HAND_RADIUS: f32 = 0.035;
    pub const LEG_RADIUS: f32 = 0.045;
    pub const SHOE_RADIUS: f32 = 0.04;

    pub const ROOT_ROW: f32 = 0.55;
    pub const ROOT_ROW_AMP: f32 = 0.02;
    pub const ROOT_COL_AMP: f32 = 0.06;
}

/// Limb angle laws: `(base, amp)` in radians; the phase comes from [`MotionParams`].
pub mod limbs {
    pub const R_UPPER_ARM: (f32, f32) = (-0.4, 0.45);
    pub const L_UPPER_ARM: (f32, f32) = (0.4, 0.45);
    pub const R_FOREARM: (f32, f32) = (-0.3, 0.3);
    pub const L_FOREARM: (f32, f32) = (0.3, 0.3);
    pub const R_THIGH: (f32, f32) = (-0.08, 0.3);
    pub const L_THIGH: (f32, f32) = (0.08, 0.3);
    pub const R_SHIN: (f32, f32) = (0.0, 0.15);
    pub const L_SHIN: (f32, f32) = (0.0, 0.15);
}

/// Shortest allowed oscillation period, in frames.
pub const MIN_PERIOD: f32 = 24.0;
pub const MAX_PERIOD: f32 = 40.0;

/// Seed-derived parameters of the motion law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    /// Oscillation period in frames, in `[MIN_PERIOD, MAX_PERIOD]`.
    pub period: f32,
    /// Amplitude multiplier in `[0.7, 1.0]`.
    pub amp_scale: f32,
    pub phase_root: f32,
    pub phase_arms: f32,
    pub phase_legs: f32,
}

impl MotionParams {
    pub fn omega(&self) -> f32 {
        2.0 * std::f32::consts::PI / self.period
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub skin: [f32; 3],
    pub garment_color_id: u32,
    /// Stripe band height in pixels (0 = solid garment).
    pub stripe_width: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    /// (1, T, H, W, 3) pixels in [-1, 1].
    pub frames: VideoTensor,
    /// (1, T, H, W, 1), values 0 or 1.
    pub person_masks: VideoTensor,
    /// (1, T, H, W, 1), values 0 or 1.
    pub garment_segmentation: VideoTensor,
    /// Region label per pixel, T*H*W in row-major order.
    pub labels: Vec<u8>,
    /// T frames of `NUM_JOINTS` joints.
    pub person_poses: Vec<Vec<Joint>>,
    pub garment_color_id: u32,
    pub motion: MotionParams,
    pub appearance: Appearance,
}

impl SyntheticScene {
    pub fn num_frames(&self) -> usize {
        self.frames.dims().frames
    }

    pub fn height(&self) -> usize {
        self.frames.dims().height
    }

    pub fn width(&self) -> usize {
        self.frames.dims().width
    }

    pub fn region(&self, t: usize, row: usize, col: usize) -> Region {
        let (h, w) = (self.height(), self.width());
        Region::from_u8(self.labels[(t * h + row) * w + col]).unwrap_or(Region::Background)
    }

    /// Builds a scene from explicit labels, painting every pixel with its
    /// region's color (garment pixels use `garment_color`). Used for fixtures.
    pub fn from_labels(
        frames_n: usize,
        height: usize,
        width: usize,
        labels: Vec<u8>,
        person_poses: Vec<Vec<Joint>>,
        garment_color: [f32; 3],
    ) -> Result<Self> {
        if labels.len() != frames_n * height * width {
            invalid_arg!("label buffer has {} entries, expected {}", labels.len(), frames_n * height * width);
        }
        if person_poses.len() != frames_n {
            invalid_arg!("need one pose per frame");
        }
        let appearance = Appearance {
            skin: SKIN_TONES[0],
            garment_color_id: 0,
            stripe_width: 0,
        };
        let mut pix = Vec::with_capacity(labels.len() * 3);
        for &l in &labels {
            let region = Region::from_u8(l)
                .ok_or_else(|| crate::Error::InvalidArgument(format!("unknown label {l}")))?;
            let c = match region {
                Region::Garment => garment_color,
                r => region_color(r, &appearance),
            };
            pix.extend_from_slice(&c);
        }
        assemble(
            0,
            frames_n,
            height,
            width,
            pix,
            labels,
            person_poses,
            MotionParams {
                period: MIN_PERIOD,
                amp_scale: 0.0,
                phase_root: 0.0,
                phase_arms: 0.0,
                phase_legs: 0.0,
            },
            appearance,
        )
    }
}

fn region_color(region: Region, app: &Appearance) -> [f32; 3] {
    let add = |a: [f32; 3], b: [f32; 3]| [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
    match region {
        Region::Background => BACKGROUND,
        Region::Head => app.skin,
        Region::Hands => add(app.skin, HAND_SHIFT),
        Region::Arms => add(app.skin, ARM_SHIFT),
        Region::Legs => LEG_COLOR,
        Region::Shoes => SHOE_COLOR,
        Region::Bottoms => BOTTOMS_COLOR,
        Region::Garment => GARMENT_PALETTE[app.garment_color_id as usize % GARMENT_PALETTE.len()],
    }
}

/// Every color a non-garment pixel can take.
pub fn non_garment_colors() -> Vec<[f32; 3]> {
    let mut out = vec![BACKGROUND, LEG_COLOR, SHOE_COLOR, BOTTOMS_COLOR];
    for skin in SKIN_TONES {
        for region in [Region::Head, Region::Hands, Region::Arms] {
            let app = Appearance {
                skin,
                garment_color_id: 0,
                stripe_width: 0,
            };
            out.push(region_color(region, &app));
        }
    }
    out
}

/// Every garment color, base and stripe.
pub fn garment_colors() -> Vec<[f32; 3]> {
    GARMENT_PALETTE.iter().flat_map(|&c| [c, stripe_color(c)]).collect()
}

/// Darker companion color used for garment stripes.
pub fn stripe_color(base: [f32; 3]) -> [f32; 3] {
    base.map(|c| 0.6 * c - 0.2)
}

pub fn figure_scale(height: usize, width: usize) -> f32 {
    (height as f32).min(width as f32 * 4.0 / 3.0)
}

fn dir(theta: f32) -> [f32; 2] {
    [theta.cos(), theta.sin()]
}

fn step(from: Joint, theta: f32, len: f32) -> Joint {
    let d = dir(theta);
    [from[0] + len * d[0], from[1] + len * d[1]]
}

/// Joint positions at frame `t` under the motion law, before clamping.
pub fn pose_at(motion: &MotionParams, t: usize, height: usize, width: usize) -> Vec<Joint> {
    use body::*;
    use joint::*;
    let (h, w) = (height as f32, width as f32);
    let u = figure_scale(height, width);
    let om = motion.omega();
    let tf = t as f32;
    let s = motion.amp_scale;
    let osc = |law: (f32, f32), phase: f32| law.0 + law.1 * s * (om * tf + phase).sin();

    let pelvis = [
        ROOT_ROW * h + ROOT_ROW_AMP * u * (om * tf + motion.phase_root).sin(),
        0.5 * w + ROOT_COL_AMP * w * (0.5 * om * tf + motion.phase_root).sin(),
    ];
    let neck = [pelvis[0] - TORSO * u, pelvis[1]];
    let head = [neck[0] - NECK_TO_HEAD * u, neck[1]];
    let r_sh = [neck[0], neck[1] - SHOULDER_HALF * u];
    let l_sh = [neck[0], neck[1] + SHOULDER_HALF * u];

    let ra = osc(limbs::R_UPPER_ARM, motion.phase_arms);
    let la = osc(limbs::L_UPPER_ARM, motion.phase_arms + std::f32::consts::PI);
    let rf = ra + osc(limbs::R_FOREARM, motion.phase_arms);
    let lf = la + osc(limbs::L_FOREARM, motion.phase_arms + std::f32::consts::PI);
    let rt = osc(limbs::R_THIGH, motion.phase_legs);
    let lt = osc(limbs::L_THIGH, motion.phase_legs + std::f32::consts::PI);
    let rs = rt + osc(limbs::R_SHIN, motion.phase_legs);
    let ls = lt + osc(limbs::L_SHIN, motion.phase_legs + std::f32::consts::PI);

    let r_el = step(r_sh, ra, UPPER_ARM * u);
    let l_el = step(l_sh, la, UPPER_ARM * u);
    let r_ha = step(r_el, rf, FOREARM * u);
    let l_ha = step(l_el, lf, FOREARM * u);
    let r_kn = step(pelvis, rt, THIGH * u);
    let l_kn = step(pelvis, lt, THIGH * u);
    let r_ft = step(r_kn, rs, SHIN * u);
    let l_ft = step(l_kn, ls, SHIN * u);

    let mut j = vec![[0.0f32; 2]; NUM_JOINTS];
    j[HEAD] = head;
    j[NECK] = neck;
    j[R_SHOULDER] = r_sh;
    j[L_SHOULDER] = l_sh;
    j[R_ELBOW] = r_el;
    j[L_ELBOW] = l_el;
    j[R_HAND] = r_ha;
    j[L_HAND] = l_ha;
    j[PELVIS] = pelvis;
    j[R_KNEE] = r_kn;
    j[L_KNEE] = l_kn;
    j[R_FOOT] = r_ft;
    j[L_FOOT] = l_ft;
    j
}

pub fn clamp_joint(j: Joint, height: usize, width: usize) -> Joint {
    [
        j[0].clamp(0.0, (height - 1) as f32),
        j[1].clamp(0.0, (width - 1) as f32),
    ]
}

/// Upper bound on any joint's per-frame displacement (pixels).
///
/// Every joint is the pelvis plus a chain of at most two limb segments, and
/// `|d(a) - d(b)| <= |a - b|` for unit direction vectors, so the step is at
/// most `|d pelvis| + sum_i len_i * |d angle_i|`, with each angle moving at
/// most `omega * (sum of amplitudes along the chain)` per frame.
pub fn max_joint_step(height: usize, width: usize) -> f32 {
    use body::*;
    let (h, w) = (height as f32, width as f32);
    let _ = h;
    let u = figure_scale(height, width);
    let om = 2.0 * std::f32::consts::PI / MIN_PERIOD;
    let root = ((ROOT_ROW_AMP * u * om).powi(2) + (ROOT_COL_AMP * w * 0.5 * om).powi(2)).sqrt();
    let arm = UPPER_ARM * u * limbs::R_UPPER_ARM.1 * om
        + FOREARM * u * (limbs::R_UPPER_ARM.1 + limbs::R_FOREARM.1) * om;
    let leg = THIGH * u * limbs::R_THIGH.1 * om + SHIN * u * (limbs::R_THIGH.1 + limbs::R_SHIN.1) * om;
    root + arm.max(leg)
}

fn seg_dist2(p: [f32; 2], a: Joint, b: Joint) -> f32 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    d[0] * d[0] + d[1] * d[1]
}

enum Shape {
    Capsule(Joint, Joint, f32),
    Disc(Joint, f32),
}

impl Shape {
    fn contains(&self, p: [f32; 2]) -> bool {
        match *self {
            Shape::Capsule(a, b, r) => seg_dist2(p, a, b) <= r * r,
            Shape::Disc(c, r) => {
                let d = [p[0] - c[0], p[1] - c[1]];
                d[0] * d[0] + d[1] * d[1] <= r * r
            }
        }
    }
}

/// Shapes in paint order; later entries overwrite earlier ones.
fn figure_shapes(j: &[Joint], u: f32) -> Vec<(Region, Shape)> {
    use body::*;
    use joint::*;
    let r = |f: f32| (f * u).max(0.75);
    vec![
        (Region::Bottoms, Shape::Capsule(j[PELVIS], j[R_KNEE], r(LEG_RADIUS))),
        (Region::Bottoms, Shape::Capsule(j[PELVIS], j[L_KNEE], r(LEG_RADIUS))),
        (Region::Legs, Shape::Capsule(j[R_KNEE], j[R_FOOT], r(LEG_RADIUS) * 0.8)),
        (Region::Legs, Shape::Capsule(j[L_KNEE], j[L_FOOT], r(LEG_RADIUS) * 0.8)),
        (Region::Shoes, Shape::Disc(j[R_FOOT], r(SHOE_RADIUS))),
        (Region::Shoes, Shape::Disc(j[L_FOOT], r(SHOE_RADIUS))),
        (Region::Garment, Shape::Capsule(j[NECK], j[PELVIS], r(TORSO_RADIUS))),
        (Region::Arms, Shape::Capsule(j[R_SHOULDER], j[R_ELBOW], r(ARM_RADIUS))),
        (Region::Arms, Shape::Capsule(j[L_SHOULDER], j[L_ELBOW], r(ARM_RADIUS))),
        (Region::Arms, Shape::Capsule(j[R_ELBOW], j[R_HAND], r(ARM_RADIUS))),
        (Region::Arms, Shape::Capsule(j[L_ELBOW], j[L_HAND], r(ARM_RADIUS))),
        (Region::Hands, Shape::Disc(j[R_HAND], r(HAND_RADIUS))),
        (Region::Hands, Shape::Disc(j[L_HAND], r(HAND_RADIUS))),
        (Region::Head, Shape::Disc(j[HEAD], r(HEAD_RADIUS))),
    ]
}

pub fn sample_motion(rng: &mut ChaCha8Rng) -> MotionParams {
    let tau = 2.0 * std::f32::consts::PI;
    MotionParams {
        period: rng.gen_range(MIN_PERIOD..=MAX_PERIOD),
        amp_scale: rng.gen_range(0.7..=1.0),
        phase_root: rng.gen_range(0.0..tau),
        phase_arms: rng.gen_range(0.0..tau),
        phase_legs: rng.gen_range(0.0..tau),
    }
}

/// Renders a deterministic scene from `(seed, frames, height, width)`.
pub fn generate_scene(seed: u64, frames: usize, height: usize, width: usize) -> Result<SyntheticScene> {
    if frames < 1 {
        invalid_arg!("scene needs at least one frame");
    }
    if height < MIN_SIDE || width < MIN_SIDE {
        invalid_arg!("scene dims {height}x{width} below minimum {MIN_SIDE}x{MIN_SIDE}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let motion = sample_motion(&mut rng);
    let appearance = Appearance {
        skin: SKIN_TONES[rng.gen_range(0..SKIN_TONES.len())],
        garment_color_id: rng.gen_range(0..GARMENT_PALETTE.len() as u32),
        stripe_width: rng.gen_range(0..=3),
    };
    let u = figure_scale(height, width);

    let mut labels = vec![0u8; frames * height * width];
    let mut pix = Vec::with_capacity(frames * height * width * 3);
    let mut poses = Vec::with_capacity(frames);
    let garment = region_color(Region::Garment, &appearance);
    let stripe = stripe_color(garment);
    for t in 0..frames {
        let raw = pose_at(&motion, t, height, width);
        let shapes = figure_shapes(&raw, u);
        let neck_row = raw[joint::NECK][0];
        for row in 0..height {
            for col in 0..width {
                let p = [row as f32, col as f32];
                let mut region = Region::Background;
                for (r, s) in &shapes {
                    if s.contains(p) {
                        region = *r;
                    }
                }
                labels[(t * height + row) * width + col] = region as u8;
                let c = if region == Region::Garment && appearance.stripe_width > 0 {
                    let band = ((row as f32 - neck_row).floor() as i64).div_euclid(appearance.stripe_width as i64);
                    if band % 2 == 0 {
                        garment
                    } else {
                        stripe
                    }
                } else {
                    region_color(region, &appearance)
                };
                pix.extend_from_slice(&c);
            }
        }
        poses.push(raw.into_iter().map(|j| clamp_joint(j, height, width)).collect());
    }
    assemble(seed, frames, height, width, pix, labels, poses, motion, appearance)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    seed: u64,
    frames: usize,
    height: usize,
    width: usize,
    pix: Vec<f32>,
    labels: Vec<u8>,
    person_poses: Vec<Vec<Joint>>,
    motion: MotionParams,
    appearance: Appearance,
) -> Result<SyntheticScene> {
    let dims = VideoDims::new(1, frames, height, width, 3);
    let mask: Vec<f32> = labels.iter().map(|&l| if l != 0 { 1.0 } else { 0.0 }).collect();
    let garment: Vec<f32> = labels
        .iter()
        .map(|&l| if l == Region::Garment as u8 { 1.0 } else { 0.0 })
        .collect();
    Ok(SyntheticScene {
        seed,
        frames: VideoTensor::from_vec(pix, dims)?,
        person_masks: VideoTensor::from_vec(mask, dims.with_channels(1))?,
        garment_segmentation: VideoTensor::from_vec(garment, dims.with_channels(1))?,
        labels,
        person_poses,
        garment_color_id: appearance.garment_color_id,
        motion,
        appearance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_dims() {
        assert!(generate_scene(1, 4, 15, 48).is_err());
        assert!(generate_scene(1, 4, 64, 15).is_err());
        assert!(generate_scene(1, 0, 64, 48).is_err());
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(7, 8, 64, 48).unwrap();
        let b = generate_scene(7, 8, 64, 48).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(8, 8, 64, 48).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn labels_are_consistent_with_masks_and_pixels() {
        let s = generate_scene(3, 5, 32, 24).unwrap();
        let pix = s.frames.to_vec().unwrap();
        let mask = s.person_masks.to_vec().unwrap();
        let garm = s.garment_segmentation.to_vec().unwrap();
        let mut garment_pixels = 0;
        for (i, &l) in s.labels.iter().enumerate() {
            // garment subset of person
            if garm[i] > 0.5 {
                assert!(mask[i] > 0.5);
                garment_pixels += 1;
            }
            if l == 0 {
                assert_eq!(mask[i], 0.0);
                assert_eq!(&pix[3 * i..3 * i + 3], &BACKGROUND);
            }
        }
        assert!(garment_pixels > 0);
        assert!(pix.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn joints_stay_in_frame_and_move_smoothly() {
        for seed in 0..20 {
            let s = generate_scene(seed, 16, 16, 16).unwrap();
            let bound = max_joint_step(16, 16);
            for (t, pose) in s.person_poses.iter().enumerate() {
                assert_eq!(pose.len(), NUM_JOINTS);
                for j in pose {
                    assert!(j[0] >= 0.0 && j[0] <= 15.0 && j[1] >= 0.0 && j[1] <= 15.0);
                }
                if t > 0 {
                    for (a, b) in pose.iter().zip(&s.person_poses[t - 1]) {
                        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                        assert!(d <= bound + 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn visible_regions_exist_in_default_resolution() {
        let s = generate_scene(11, 1, 64, 48).unwrap();
        for r in [Region::Head, Region::Hands, Region::Legs, Region::Shoes, Region::Garment] {
            assert!(s.labels.iter().any(|&l| l == r as u8), "missing {:?}", r);
        }
    }
}
