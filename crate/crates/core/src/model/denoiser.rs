//! The conditional try-on denoiser: a 2-D UNet with pose conditioning in
//! every spatial layer, DiT fusion blocks at the lowest resolution, and
//! optional temporal blocks / temporal resampling.
//!
//! Data flow (levels `0..L`, level `L-1` lowest):
//!
//! ```text
//! z_t ─ stem ─ down[0] ─ pool ─ ... ─ [t-down] ─ down[L-1] ─ DiT×N ─ up[L-1] ─ [t-up] ─ ... ─ up[0] ─ head
//!                  │ pose maps → linear embed → pooled and concatenated into every ResBlock
//! agnostic ─ encoder ─────────────────────────────── concatenated in each DiT block
//! garment  ─ encoder ─────────────────────────────── cross-attended in each DiT block
//! ```
//!
//! Temporal blocks follow the ResBlocks of the two lowest levels on both
//! paths; image-branch calls skip them (and the resampling) entirely.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::config::{ConditioningSpec, ModelConfig};
use super::dit::DitBlock;
use super::layers::{grid_positions, sinusoidal, Conv2d, GroupNorm, Linear, Scope};
use super::params::{Init, ParamGroup, ParamStore};
use super::temporal::{pair_mean, TemporalBlock, TemporalInit, TemporalResample};
use crate::data::{NullFlags, TryOnConditioning};
use crate::error::{invalid_arg, invalid_state, Result};
use crate::tensor::VideoTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Frames are independent; temporal blocks are bypassed.
    Image,
    Video,
}

/// Instrumentation collected during a forward pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    /// Frames per clip at the lowest resolution.
    pub lowest_res_frames: usize,
    pub temporal_blocks_run: usize,
    pub resampled: bool,
}

#[derive(Debug, Clone)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    temb: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Linear>,
}

impl ResBlock {
    fn new(s: &mut Scope, in_ch: usize, pose_ch: usize, out_ch: usize, temb_dim: usize) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(&mut s.sub("norm1"), in_ch)?,
            conv1: Conv2d::new(&mut s.sub("conv1"), in_ch + pose_ch, out_ch, 3)?,
            temb: Linear::new(&mut s.sub("temb"), temb_dim, out_ch)?,
            norm2: GroupNorm::new(&mut s.sub("norm2"), out_ch)?,
            conv2: Conv2d::new(&mut s.sub("conv2"), out_ch, out_ch, 3)?,
            skip: if in_ch != out_ch {
                Some(Linear::new(&mut s.sub("skip"), in_ch, out_ch)?)
            } else {
                None
            },
        })
    }

    /// `x`: (N, C, h, w); `pose`: (N, 2P, h, w); `temb`: (N, D).
    fn forward(&self, x: &Tensor, pose: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(x)?.silu()?;
        let h = self.conv1.forward(&Tensor::cat(&[&h, pose], 1)?)?;
        let t = self.temb.forward(&temb.silu()?)?.unsqueeze(2)?.unsqueeze(3)?;
        let h = h.broadcast_add(&t)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let skip = match &self.skip {
            Some(s) => s.forward_nchw(x)?,
            None => x.clone(),
        };
        Ok((h + skip)?)
    }
}

/// Fully convolutional encoder down to the lowest resolution.
#[derive(Debug, Clone)]
struct CondEncoder {
    convs: Vec<Conv2d>,
    out: Linear,
}

impl CondEncoder {
    fn new(s: &mut Scope, in_ch: usize, cfg: &ModelConfig) -> Result<Self> {
        let mut convs = Vec::new();
        let mut prev = in_ch;
        for l in 0..cfg.levels() {
            let ch = cfg.channels_at(l);
            convs.push(Conv2d::new(&mut s.sub(&format!("conv{l}")), prev, ch, 3)?);
            prev = ch;
        }
        Ok(Self {
            convs,
            out: Linear::new(&mut s.sub("out"), prev, cfg.lowest_channels())?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (l, conv) in self.convs.iter().enumerate() {
            if l > 0 {
                h = h.avg_pool2d(2)?;
            }
            h = conv.forward(&h)?.silu()?;
        }
        self.out.forward_nchw(&h)
    }
}

#[derive(Debug, Clone)]
struct Level {
    down: ResBlock,
    down_temporal: Option<TemporalBlock>,
    up: ResBlock,
    up_temporal: Option<TemporalBlock>,
    upsample_conv: Option<Conv2d>,
}

#[derive(Debug, Clone)]
pub struct TryOnDenoiser {
    config: ModelConfig,
    cond_spec: ConditioningSpec,
    store: ParamStore,
    time_in: Linear,
    time_out: Linear,
    stem: Conv2d,
    levels: Vec<Level>,
    head_norm: GroupNorm,
    head: Conv2d,
    person_pose: Linear,
    garment_pose: Linear,
    person_pose_null: Tensor,
    garment_pose_null: Tensor,
    agnostic_encoder: CondEncoder,
    garment_encoder: CondEncoder,
    agnostic_null: Tensor,
    garment_null: Tensor,
    dit: Vec<DitBlock>,
    resample: Option<TemporalResample>,
}

/// Builds a denoiser with parameters drawn from `seed`.
pub fn build_model(config: &ModelConfig, cond: &ConditioningSpec, seed: u64) -> Result<TryOnDenoiser> {
    TryOnDenoiser::build(config, cond, seed, DType::F32, TemporalInit::Random)
}

impl TryOnDenoiser {
    pub fn build(
        config: &ModelConfig,
        cond: &ConditioningSpec,
        seed: u64,
        dtype: DType,
        temporal_init: TemporalInit,
    ) -> Result<Self> {
        config.validate()?;
        cond.check_against(config)?;
        let cfg = config;
        let mut store = ParamStore::new(seed, dtype);
        let temb_dim = cfg.time_embed_dim();
        let pose_ch = 2 * cfg.pose_embed_channels;
        let heads = cfg.attention_heads;

        let (time_in, time_out, stem, head_norm, head) = {
            let mut s = Scope::new(&mut store, ParamGroup::Spatial, "");
            (
                Linear::new(&mut s.sub("time_in"), cfg.base_channels, temb_dim)?,
                Linear::new(&mut s.sub("time_out"), temb_dim, temb_dim)?,
                Conv2d::new(&mut s.sub("stem"), cfg.image_channels, cfg.channels_at(0), 3)?,
                GroupNorm::new(&mut s.sub("head_norm"), cfg.channels_at(0))?,
                Conv2d::new(&mut s.sub("head"), cfg.channels_at(0), cfg.image_channels, 3)?,
            )
        };

        let mut levels = Vec::with_capacity(cfg.levels());
        let n = cfg.levels();
        for l in 0..n {
            let ch = cfg.channels_at(l);
            let in_down = if l == 0 { ch } else { cfg.channels_at(l - 1) };
            let in_up = if l == n - 1 { ch + ch } else { cfg.channels_at(l + 1) + ch };
            let temporal = cfg.temporal_enabled && l >= cfg.first_temporal_level();
            let mut s = Scope::new(&mut store, ParamGroup::Spatial, format!("level{l}"));
            let down = ResBlock::new(&mut s.sub("down"), in_down, pose_ch, ch, temb_dim)?;
            let up = ResBlock::new(&mut s.sub("up"), in_up, pose_ch, ch, temb_dim)?;
            let upsample_conv = if l > 0 {
                Some(Conv2d::new(&mut s.sub("upsample"), ch, ch, 3)?)
            } else {
                None
            };
            let (down_temporal, up_temporal) = if temporal {
                let mut t = Scope::new(&mut store, ParamGroup::Temporal, format!("level{l}"));
                (
                    Some(TemporalBlock::new(&mut t.sub("down"), ch, heads, temporal_init)?),
                    Some(TemporalBlock::new(&mut t.sub("up"), ch, heads, temporal_init)?),
                )
            } else {
                (None, None)
            };
            levels.push(Level {
                down,
                down_temporal,
                up,
                up_temporal,
                upsample_conv,
            });
        }

        let low = cfg.lowest_channels();
        let (agnostic_encoder, garment_encoder, agnostic_null, garment_null) = {
            let mut s = Scope::new(&mut store, ParamGroup::ConditioningEncoders, "");
            (
                CondEncoder::new(&mut s.sub("agnostic"), cond.agnostic_channels, cfg)?,
                CondEncoder::new(&mut s.sub("garment"), cond.garment_channels, cfg)?,
                s.param("agnostic_null", low, Init::Normal(1.0))?,
                s.param("garment_null", low, Init::Normal(1.0))?,
            )
        };

        let (person_pose, garment_pose, person_pose_null, garment_pose_null) = {
            let mut s = Scope::new(&mut store, ParamGroup::PoseEmbedders, "");
            let p = cfg.pose_embed_channels;
            (
                Linear::new(&mut s.sub("person"), cfg.pose_channels, p)?,
                Linear::new(&mut s.sub("garment"), cfg.pose_channels, p)?,
                s.param("person_null", p, Init::Normal(1.0))?,
                s.param("garment_null", p, Init::Normal(1.0))?,
            )
        };

        let mut dit = Vec::with_capacity(cfg.num_dit_blocks);
        for i in 0..cfg.num_dit_blocks {
            let mut s = Scope::new(&mut store, ParamGroup::Dit, format!("block{i}"));
            dit.push(DitBlock::new(&mut s, low, low, temb_dim, heads)?);
        }

        let resample = if cfg.temporal_resampling_enabled {
            let mut s = Scope::new(&mut store, ParamGroup::TemporalResampling, "lowest");
            let in_ch = if n > 1 { cfg.channels_at(n - 2) } else { low };
            Some(TemporalResample::new(&mut s, in_ch, low)?)
        } else {
            None
        };

        Ok(Self {
            config: config.clone(),
            cond_spec: *cond,
            store,
            time_in,
            time_out,
            stem,
            levels,
            head_norm,
            head,
            person_pose,
            garment_pose,
            person_pose_null,
            garment_pose_null,
            agnostic_encoder,
            garment_encoder,
            agnostic_null,
            garment_null,
            dit,
            resample,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn cond_spec(&self) -> &ConditioningSpec {
        &self.cond_spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn seed(&self) -> u64 {
        self.store.seed()
    }

    pub fn num_dit_blocks(&self) -> usize {
        self.dit.len()
    }

    /// Mixing gates of all temporal blocks, down path first.
    pub fn mixing_gates(&self) -> Vec<&super::temporal::MixingGate> {
        self.levels
            .iter()
            .flat_map(|l| [l.down_temporal.as_ref(), l.up_temporal.as_ref()])
            .flatten()
            .map(|b| b.gate())
            .collect()
    }

    pub fn forward(
        &self,
        z_t: &VideoTensor,
        t: &[f32],
        cond: &TryOnConditioning,
        nulls: &[NullFlags],
        branch: Branch,
    ) -> Result<VideoTensor> {
        Ok(self.forward_traced(z_t, t, cond, nulls, branch)?.0)
    }

    pub fn forward_traced(
        &self,
        z_t: &VideoTensor,
        t: &[f32],
        cond: &TryOnConditioning,
        nulls: &[NullFlags],
        branch: Branch,
    ) -> Result<(VideoTensor, ForwardTrace)> {
        let cfg = &self.config;
        let d = z_t.dims();
        let (b, frames, hgt, wid) = (d.batch, d.frames, d.height, d.width);
        if d.channels != cfg.image_channels {
            invalid_arg!("input has {} channels, model expects {}", d.channels, cfg.image_channels);
        }
        let f = cfg.spatial_factor();
        if hgt % f != 0 || wid % f != 0 {
            invalid_arg!("input {hgt}x{wid} not divisible by the UNet factor {f}");
        }
        let cd = cond.agnostic.dims();
        if cd.batch != b || cd.frames != frames || cd.height != hgt || cd.width != wid {
            invalid_arg!(
                "conditioning dims {:?} do not match input {:?}",
                cd.as_array(),
                d.as_array()
            );
        }
        ConditioningSpec::of(cond, cfg.image_channels).check_against(cfg)?;
        if t.len() != b && t.len() != 1 {
            invalid_arg!("got {} timesteps for a batch of {b}", t.len());
        }
        if nulls.len() != b && nulls.len() != 1 {
            invalid_arg!("got {} null-flag sets for a batch of {b}", nulls.len());
        }
        let video = branch == Branch::Video;
        if video && !cfg.temporal_enabled {
            invalid_state!("video branch requested on a model without temporal blocks");
        }
        let resample = if video { self.resample.as_ref() } else { None };
        if resample.is_some() && frames % 2 != 0 {
            invalid_arg!("temporal resampling requires an even frame count, got {frames}");
        }

        let dtype = self.dtype();
        let bt = b * frames;
        let to_nchw = |v: &VideoTensor| -> Result<Tensor> {
            let dd = v.dims();
            Ok(v.tensor()
                .to_dtype(dtype)?
                .permute((0, 1, 4, 2, 3))?
                .contiguous()?
                .reshape((dd.batch * dd.frames, dd.channels, dd.height, dd.width))?)
        };
        // (B, ...) per-clip tensor -> (B*T, ...) per-frame
        let per_frame = |x: &Tensor| -> Result<Tensor> {
            let mut shape = x.dims().to_vec();
            let rest = shape.split_off(1);
            let mut bshape = vec![b, frames];
            bshape.extend_from_slice(&rest);
            let mut out_shape = vec![bt];
            out_shape.extend_from_slice(&rest);
            Ok(x.unsqueeze(1)?.broadcast_as(bshape)?.contiguous()?.reshape(out_shape)?)
        };
        let keep_mask = |pick: fn(&NullFlags) -> bool, rank: usize| -> Result<Tensor> {
            let vals: Vec<f64> = (0..b)
                .map(|i| if pick(&nulls[if nulls.len() == 1 { 0 } else { i }]) { 0.0 } else { 1.0 })
                .collect();
            let mut shape = vec![b];
            shape.extend(std::iter::repeat(1).take(rank - 1));
            Ok(Tensor::from_vec(vals, shape, &Device::Cpu)?.to_dtype(dtype)?)
        };
        // feats * keep + null * (1 - keep), with `feats` batched on axis 0 by clip
        let select = |feats: &Tensor, null: &Tensor, keep: &Tensor| -> Result<Tensor> {
            let rank = feats.rank();
            let mut nshape = vec![1; rank];
            // channel axis: 1 for (N, C, h, w), 2 for (B, T, C, h, w)
            let pos = rank - 3;
            nshape[pos] = null.dim(0)?;
            let null = null.reshape(nshape)?;
            let drop = keep.affine(-1.0, 1.0)?;
            Ok((feats.broadcast_mul(keep)? + null.broadcast_mul(&drop)?.broadcast_as(feats.shape())?)?)
        };

        // time embedding, per frame
        let times: Vec<f32> = (0..b).map(|i| t[if t.len() == 1 { 0 } else { i }] * 1000.0).collect();
        let temb = sinusoidal(&times, cfg.base_channels, dtype)?;
        let temb = self.time_out.forward(&self.time_in.forward(&temb)?.silu()?)?;
        let temb_frames = per_frame(&temb)?;

        // pose embeddings: (B*T, 2P, H, W)
        let pp = self.person_pose.forward_nchw(&to_nchw(&cond.person_pose)?)?;
        let p = cfg.pose_embed_channels;
        let pp = select(
            &pp.reshape((b, frames, p, hgt, wid))?,
            &self.person_pose_null,
            &keep_mask(|n| n.person_pose, 5)?,
        )?;
        let pp = pp.reshape((bt, p, hgt, wid))?;
        let gp = self.garment_pose.forward_nchw(&to_nchw(&cond.garment_pose)?)?;
        let gp = select(&gp, &self.garment_pose_null, &keep_mask(|n| n.garment_pose, 4)?)?;
        let pose_full = Tensor::cat(&[&pp, &per_frame(&gp)?], 1)?;
        let mut pose_pyramid = Vec::with_capacity(cfg.levels());
        for l in 0..cfg.levels() {
            pose_pyramid.push(if l == 0 {
                pose_full.clone()
            } else {
                pose_full.avg_pool2d(1 << l)?
            });
        }

        // conditioning encoders
        let low = cfg.lowest_channels();
        let (lh, lw) = (hgt / f, wid / f);
        let agn = self.agnostic_encoder.forward(&to_nchw(&cond.agnostic)?)?;
        let agn = select(
            &agn.reshape((b, frames, low, lh, lw))?,
            &self.agnostic_null,
            &keep_mask(|n| n.agnostic, 5)?,
        )?
        .reshape((bt, low, lh, lw))?;
        let garm = self.garment_encoder.forward(&to_nchw(&cond.garment)?)?;
        let garm = select(&garm, &self.garment_null, &keep_mask(|n| n.garment, 4)?)?;
        let pos = grid_positions(lh, lw, low, dtype)?;
        let garm_tokens = garm
            .flatten_from(2)?
            .transpose(1, 2)?
            .contiguous()?
            .broadcast_add(&pos)?;

        // UNet
        let mut trace = ForwardTrace {
            lowest_res_frames: frames,
            ..Default::default()
        };
        let n = cfg.levels();
        let mut h = self.stem.forward(&to_nchw(z_t)?)?;
        let mut skips = Vec::with_capacity(n);
        let mut cur_temb = temb_frames.clone();
        let mut cur_pose_low = pose_pyramid[n - 1].clone();
        let mut agn_low = agn;
        for (l, level) in self.levels.iter().enumerate() {
            if l > 0 {
                h = h.avg_pool2d(2)?;
            }
            let mut pose_l = pose_pyramid[l].clone();
            let mut temb_l = temb_frames.clone();
            if l == n - 1 {
                if let Some(rs) = resample {
                    h = rs.down(&h, b)?;
                    cur_pose_low = pair_mean(&cur_pose_low, b)?;
                    agn_low = pair_mean(&agn_low, b)?;
                    cur_temb = pair_mean(&cur_temb.unsqueeze(2)?.unsqueeze(3)?, b)?.squeeze(3)?.squeeze(2)?;
                    trace.lowest_res_frames = frames / 2;
                    trace.resampled = true;
                }
                pose_l = cur_pose_low.clone();
                temb_l = cur_temb.clone();
            }
            h = level.down.forward(&h, &pose_l, &temb_l)?;
            if video {
                if let Some(tb) = &level.down_temporal {
                    h = tb.forward(&h, b)?;
                    trace.temporal_blocks_run += 1;
                }
            }
            skips.push(h.clone());
        }

        // DiT at the lowest resolution
        let nf = h.dim(0)?;
        let to_tokens = |x: &Tensor| -> Result<Tensor> {
            Ok(x.flatten_from(2)?.transpose(1, 2)?.contiguous()?)
        };
        let mut tokens = to_tokens(&h)?.broadcast_add(&pos)?;
        let agn_tokens = to_tokens(&agn_low)?;
        let clip_frames = nf / b;
        let garm_frames = {
            let (_, lg, c) = garm_tokens.dims3()?;
            garm_tokens
                .unsqueeze(1)?
                .broadcast_as((b, clip_frames, lg, c))?
                .contiguous()?
                .reshape((nf, lg, c))?
        };
        for blk in &self.dit {
            tokens = blk.forward(&tokens, &agn_tokens, &garm_frames, &cur_temb)?;
        }
        h = tokens.transpose(1, 2)?.contiguous()?.reshape((nf, low, lh, lw))?;

        for (l, level) in self.levels.iter().enumerate().rev() {
            let skip = skips.pop().expect("one skip per level");
            let (pose_l, temb_l) = if l == n - 1 {
                (cur_pose_low.clone(), cur_temb.clone())
            } else {
                (pose_pyramid[l].clone(), temb_frames.clone())
            };
            h = level.up.forward(&Tensor::cat(&[&h, &skip], 1)?, &pose_l, &temb_l)?;
            if video {
                if let Some(tb) = &level.up_temporal {
                    h = tb.forward(&h, b)?;
                    trace.temporal_blocks_run += 1;
                }
            }
            if l == n - 1 {
                if let Some(rs) = resample {
                    h = rs.up(&h, b)?;
                }
            }
            if let Some(conv) = &level.upsample_conv {
                let (_, _, hh, ww) = h.dims4()?;
                h = conv.forward(&h.upsample_nearest2d(hh * 2, ww * 2)?)?;
            }
        }

        let out = self.head.forward(&self.head_norm.forward(&h)?.silu()?)?;
        let out = out
            .reshape((b, frames, cfg.image_channels, hgt, wid))?
            .permute((0, 1, 3, 4, 2))?
            .contiguous()?;
        Ok((VideoTensor::new(out)?, trace))
    }

    /// Rebuilds with a changed config, copying every parameter that exists in both.
    fn rebuild(&self, config: ModelConfig, init: TemporalInit) -> Result<Self> {
        let next = Self::build(&config, &self.cond_spec, self.seed(), self.dtype(), init)?;
        next.store.copy_from(&self.store)?;
        Ok(next)
    }

    /// Adds temporal blocks to an image model; all existing parameters are copied.
    pub fn inflate_temporal(&self, init: TemporalInit) -> Result<Self> {
        if self.config.temporal_enabled {
            invalid_state!("model already has temporal blocks");
        }
        let cfg = ModelConfig {
            temporal_enabled: true,
            ..self.config.clone()
        };
        self.rebuild(cfg, init)
    }

    /// Adds factor-2 temporal down/up sampling around the lowest level.
    pub fn inject_temporal_resampling(&self) -> Result<Self> {
        if !self.config.temporal_enabled {
            invalid_state!("temporal resampling requires a temporal model");
        }
        if self.config.temporal_resampling_enabled {
            invalid_state!("temporal resampling already present");
        }
        let frame_length = if self.config.frame_length % 2 == 0 {
            self.config.frame_length
        } else {
            self.config.frame_length + 1
        };
        let cfg = ModelConfig {
            temporal_resampling_enabled: true,
            frame_length,
            ..self.config.clone()
        };
        self.rebuild(cfg, TemporalInit::Identity)
    }

    /// Same parameters, new recorded frame length.
    pub fn with_frame_length(&self, frame_length: usize) -> Result<Self> {
        let cfg = ModelConfig {
            frame_length,
            ..self.config.clone()
        };
        cfg.validate()?;
        let mut next = self.clone();
        next.config = cfg;
        Ok(next)
    }

    /// Deep copy with independent parameter storage.
    pub fn duplicate(&self) -> Result<Self> {
        let init = TemporalInit::Identity;
        let next = Self::build(&self.config, &self.cond_spec, self.seed(), self.dtype(), init)?;
        next.store.copy_from(&self.store)?;
        Ok(next)
    }
}

/// Convenience inflation entry point.
pub fn inflate_temporal(image_model: &TryOnDenoiser, init: TemporalInit) -> Result<TryOnDenoiser> {
    image_model.inflate_temporal(init)
}

pub fn inject_temporal_resampling(model: &TryOnDenoiser) -> Result<TryOnDenoiser> {
    model.inject_temporal_resampling()
}
