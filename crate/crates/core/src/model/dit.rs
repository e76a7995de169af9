//! Transformer blocks at the lowest UNet resolution.
//!
//! Layout per block (pre-norm, adaLN modulation from the time embedding):
//!
//! ```text
//! x = x + W_cat [LN(x) ; agnostic]                      agnostic fusion by concatenation
//! x = x + g1 * SelfAttn(LN(x) * (1 + s1) + b1)
//! x = x + CrossAttn(LN(x), garment tokens)
//! x = x + g2 * MLP(LN(x) * (1 + s2) + b2)
//! ```
//!
//! The modulation projection starts at zero weight with bias (b=0, s=0, g=1).

use candle_core::Tensor;

use super::layers::{layer_norm, Attention, Linear, Scope};
use super::params::Init;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct DitBlock {
    fuse: Linear,
    modulation: Linear,
    self_attn: Attention,
    cross_attn: Attention,
    mlp_in: Linear,
    mlp_out: Linear,
    dim: usize,
}

impl DitBlock {
    pub fn new(s: &mut Scope, dim: usize, cond_dim: usize, temb_dim: usize, heads: usize) -> Result<Self> {
        let modulation = Linear::with_init(&mut s.sub("modulation"), temb_dim, 6 * dim, Init::Zeros)?;
        // gates g1 and g2 start open
        let mut bias = vec![0.0f64; 6 * dim];
        bias[2 * dim..3 * dim].fill(1.0);
        bias[5 * dim..6 * dim].fill(1.0);
        let bias = Tensor::from_vec(bias, 6 * dim, &candle_core::Device::Cpu)?.to_dtype(s.dtype())?;
        let prefix = format!("{}.{}.modulation.bias", s.group.name(), s.prefix);
        s.store.set(&prefix, &bias)?;

        let out_init = Init::FanIn { fan_in: dim, gain: 1.0 };
        Ok(Self {
            fuse: Linear::new(&mut s.sub("fuse"), dim + cond_dim, dim)?,
            modulation,
            self_attn: Attention::new(&mut s.sub("self_attn"), dim, dim, heads, out_init)?,
            cross_attn: Attention::new(&mut s.sub("cross_attn"), dim, dim, heads, out_init)?,
            mlp_in: Linear::new(&mut s.sub("mlp_in"), dim, 4 * dim)?,
            mlp_out: Linear::new(&mut s.sub("mlp_out"), 4 * dim, dim)?,
            dim,
        })
    }

    /// `x`: (N, L, C) noisy tokens, `agnostic`: (N, L, Ca), `garment`: (N, Lg, C),
    /// `temb`: (N, D) per-frame time embedding.
    pub fn forward(&self, x: &Tensor, agnostic: &Tensor, garment: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let d = self.dim;
        let fused = self.fuse.forward(&Tensor::cat(&[&layer_norm(x)?, agnostic], 2)?)?;
        let x = (x + fused)?;

        let m = self.modulation.forward(&temb.silu()?)?.unsqueeze(1)?;
        let chunk = |i: usize| m.narrow(2, i * d, d);
        let (b1, s1, g1, b2, s2, g2) = (chunk(0)?, chunk(1)?, chunk(2)?, chunk(3)?, chunk(4)?, chunk(5)?);

        let h = layer_norm(&x)?.broadcast_mul(&(s1 + 1.0)?)?.broadcast_add(&b1)?;
        let x = (&x + self.self_attn.forward(&h, &h)?.broadcast_mul(&g1)?)?;

        let x = (&x + self.cross_attn.forward(&layer_norm(&x)?, garment)?)?;

        let h = layer_norm(&x)?.broadcast_mul(&(s2 + 1.0)?)?.broadcast_add(&b2)?;
        let h = self.mlp_out.forward(&self.mlp_in.forward(&h)?.gelu()?)?;
        Ok((&x + h.broadcast_mul(&g2)?)?)
    }
}
