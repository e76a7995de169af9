//! Temporal blocks inserted into the two lowest UNet levels, and the
//! factor-2 temporal resampling used for long clips.
//!
//! Feature layout inside the network is (B*T, C, h, w); temporal code
//! reshapes to (B, T, C, h, w) when it needs the time axis.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{layer_norm, sigmoid, Attention, GroupNorm, Linear, Scope};
use super::params::Init;
use crate::error::{invalid_arg, Result};

/// Initialization of newly added temporal parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalInit {
    /// Residual branches start at zero, so the block is a pass-through.
    #[default]
    Identity,
    /// Residual branches drawn from `N(0, (RANDOM_GAIN^2) / fan_in)`.
    Random,
}

/// Gain of the random temporal initializer (std = gain / sqrt(fan_in)).
pub const RANDOM_GAIN: f64 = 0.5;

/// Initial pre-squash value of every mixing gate; `sigmoid(2) ~= 0.88`.
pub const GATE_INIT_LOGIT: f64 = 2.0;

/// Learned scalar mixing weight, stored pre-squash and mapped to [0, 1] by a sigmoid.
#[derive(Debug, Clone)]
pub struct MixingGate {
    logit: Tensor,
}

impl MixingGate {
    pub fn new(s: &mut Scope) -> Result<Self> {
        Ok(Self {
            logit: s.param("gate", 1, Init::Const(GATE_INIT_LOGIT))?,
        })
    }

    /// A constant gate with squashed value `alpha` (0 and 1 are exact).
    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            invalid_arg!("alpha {alpha} outside [0, 1]");
        }
        let logit = (alpha / (1.0 - alpha)).ln();
        Ok(Self {
            logit: Tensor::new(&[logit], &Device::Cpu)?,
        })
    }

    pub fn alpha(&self) -> Result<Tensor> {
        sigmoid(&self.logit)
    }

    pub fn alpha_value(&self) -> Result<f64> {
        Ok(self.alpha()?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?[0])
    }
}

/// `alpha * z_spatial + (1 - alpha) * z_temporal`.
pub fn temporal_mix(z_spatial: &Tensor, z_temporal: &Tensor, gate: &MixingGate) -> Result<Tensor> {
    if z_spatial.dims() != z_temporal.dims() {
        invalid_arg!("temporal_mix shape mismatch {:?} vs {:?}", z_spatial.dims(), z_temporal.dims());
    }
    let a = gate.alpha()?.to_dtype(z_spatial.dtype())?;
    let one_minus = a.affine(-1.0, 1.0)?;
    Ok((z_spatial.broadcast_mul(&a)? + z_temporal.broadcast_mul(&one_minus)?)?)
}

/// 3x3x3 convolution split into one 2-D kernel per temporal offset,
/// zero-padded in time.
#[derive(Debug, Clone)]
struct Conv3d {
    kernels: [Tensor; 3],
    bias: Tensor,
}

impl Conv3d {
    fn new(s: &mut Scope, ch: usize, init: TemporalInit) -> Result<Self> {
        let w_init = match init {
            TemporalInit::Identity => Init::Zeros,
            TemporalInit::Random => Init::FanIn {
                fan_in: ch * 27,
                gain: RANDOM_GAIN,
            },
        };
        Ok(Self {
            kernels: [
                s.param("w_prev", (ch, ch, 3, 3), w_init)?,
                s.param("w_cur", (ch, ch, 3, 3), w_init)?,
                s.param("w_next", (ch, ch, 3, 3), w_init)?,
            ],
            bias: s.param("bias", ch, Init::Zeros)?,
        })
    }

    /// `x`: (B, T, C, h, w).
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, c, h, w) = x.dims5()?;
        let zero = Tensor::zeros((b, 1, c, h, w), x.dtype(), x.device())?;
        let padded = Tensor::cat(&[&zero, x, &zero], 1)?;
        let mut acc: Option<Tensor> = None;
        for (k, kernel) in self.kernels.iter().enumerate() {
            let frames = padded.narrow(1, k, t)?.reshape((b * t, c, h, w))?;
            let y = frames.conv2d(kernel, 1, 1, 1, 1)?;
            acc = Some(match acc {
                None => y,
                Some(a) => (a + y)?,
            });
        }
        let y = acc.expect("three kernels").broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?;
        Ok(y.reshape((b, t, c, h, w))?)
    }
}

/// 3-D conv, temporal attention over T per spatial location, and a learned
/// mix with the incoming spatial features.
#[derive(Debug, Clone)]
pub struct TemporalBlock {
    norm: GroupNorm,
    conv: Conv3d,
    attn: Attention,
    gate: MixingGate,
}

impl TemporalBlock {
    pub fn new(s: &mut Scope, ch: usize, heads: usize, init: TemporalInit) -> Result<Self> {
        let out_init = match init {
            TemporalInit::Identity => Init::Zeros,
            TemporalInit::Random => Init::FanIn {
                fan_in: ch,
                gain: RANDOM_GAIN,
            },
        };
        Ok(Self {
            norm: GroupNorm::new(&mut s.sub("norm"), ch)?,
            conv: Conv3d::new(&mut s.sub("conv3d"), ch, init)?,
            attn: Attention::new(&mut s.sub("attn"), ch, ch, heads, out_init)?,
            gate: MixingGate::new(&mut s.sub("mix"))?,
        })
    }

    pub fn gate(&self) -> &MixingGate {
        &self.gate
    }

    /// `x`: (B*T, C, h, w) spatial features of `batch` clips.
    pub fn forward(&self, x: &Tensor, batch: usize) -> Result<Tensor> {
        let (bt, c, h, w) = x.dims4()?;
        let t = bt / batch;
        let normed = self.norm.forward(x)?.silu()?;
        let conv = self.conv.forward(&normed.reshape((batch, t, c, h, w))?)?;
        let u = (x + conv.reshape((bt, c, h, w))?)?;

        // (B, T, C, h, w) -> (B*h*w, T, C)
        let tokens = u
            .reshape((batch, t, c, h, w))?
            .permute((0, 3, 4, 1, 2))?
            .contiguous()?
            .reshape((batch * h * w, t, c))?;
        let normed = layer_norm(&tokens)?;
        let attended = (&tokens + self.attn.forward(&normed, &normed)?)?;
        let z_temporal = attended
            .reshape((batch, h, w, t, c))?
            .permute((0, 3, 4, 1, 2))?
            .contiguous()?
            .reshape((bt, c, h, w))?;
        temporal_mix(x, &z_temporal, &self.gate)
    }
}

/// Factor-2 temporal down/up sampling around the lowest-resolution stage.
///
/// Down: pair mean plus a learned 1x1 projection of the pair difference.
/// Up: nearest repeat plus a learned 1x1 projection per output phase.
/// The learned parts start at zero (mean down, nearest up).
#[derive(Debug, Clone)]
pub struct TemporalResample {
    down_diff: Linear,
    up_even: Linear,
    up_odd: Linear,
}

impl TemporalResample {
    pub fn new(s: &mut Scope, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            down_diff: Linear::with_init(&mut s.sub("down_diff"), in_ch, in_ch, Init::Zeros)?,
            up_even: Linear::with_init(&mut s.sub("up_even"), out_ch, out_ch, Init::Zeros)?,
            up_odd: Linear::with_init(&mut s.sub("up_odd"), out_ch, out_ch, Init::Zeros)?,
        })
    }

    /// (B*T, C, h, w) -> (B*T/2, C, h, w).
    pub fn down(&self, x: &Tensor, batch: usize) -> Result<Tensor> {
        let (even, odd) = split_pairs(x, batch)?;
        let mean = ((&even + &odd)? * 0.5)?;
        Ok((mean + self.down_diff.forward_nchw(&(even - odd)?)?)?)
    }

    /// (B*T/2, C, h, w) -> (B*T, C, h, w).
    pub fn up(&self, y: &Tensor, batch: usize) -> Result<Tensor> {
        let even = (y + self.up_even.forward_nchw(y)?)?;
        let odd = (y + self.up_odd.forward_nchw(y)?)?;
        interleave_pairs(&even, &odd, batch)
    }
}

/// Parameter-free pair mean, used to bring conditioning features to T/2.
pub fn pair_mean(x: &Tensor, batch: usize) -> Result<Tensor> {
    let (even, odd) = split_pairs(x, batch)?;
    Ok(((even + odd)? * 0.5)?)
}

fn split_pairs(x: &Tensor, batch: usize) -> Result<(Tensor, Tensor)> {
    let (bt, c, h, w) = x.dims4()?;
    let t = bt / batch;
    if t % 2 != 0 {
        invalid_arg!("temporal downsampling needs an even frame count, got {t}");
    }
    let pairs = x.reshape((batch, t / 2, 2, c, h, w))?;
    let pick = |i| -> Result<Tensor> { Ok(pairs.narrow(2, i, 1)?.contiguous()?.reshape((bt / 2, c, h, w))?) };
    Ok((pick(0)?, pick(1)?))
}

fn interleave_pairs(even: &Tensor, odd: &Tensor, batch: usize) -> Result<Tensor> {
    let (bt2, c, h, w) = even.dims4()?;
    let t2 = bt2 / batch;
    let e = even.reshape((batch, t2, 1, c, h, w))?;
    let o = odd.reshape((batch, t2, 1, c, h, w))?;
    Ok(Tensor::cat(&[e, o], 2)?.reshape((bt2 * 2, c, h, w))?)
}
