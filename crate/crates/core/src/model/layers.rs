//! Small differentiable building blocks over candle tensors.

use candle_core::{DType, Device, Tensor, D};

use super::params::{Init, ParamGroup, ParamStore};
use crate::error::Result;

/// Parameter-creation context: a store plus a group and name prefix.
pub struct Scope<'a> {
    pub store: &'a mut ParamStore,
    pub group: ParamGroup,
    pub prefix: String,
}

impl<'a> Scope<'a> {
    pub fn new(store: &'a mut ParamStore, group: ParamGroup, prefix: impl Into<String>) -> Self {
        Self {
            store,
            group,
            prefix: prefix.into(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Scope<'_> {
        Scope {
            store: self.store,
            group: self.group,
            prefix: join(&self.prefix, name),
        }
    }

    pub fn with_group(&mut self, group: ParamGroup, name: &str) -> Scope<'_> {
        Scope {
            store: self.store,
            group,
            prefix: join(&self.prefix, name),
        }
    }

    pub fn param(&mut self, name: &str, shape: impl Into<candle_core::Shape>, init: Init) -> Result<Tensor> {
        let full = join(&self.prefix, name);
        self.store.create(self.group, &full, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(s: &mut Scope, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_init(s, in_dim, out_dim, Init::FanIn { fan_in: in_dim, gain: 1.0 })
    }

    pub fn with_init(s: &mut Scope, in_dim: usize, out_dim: usize, init: Init) -> Result<Self> {
        Ok(Self {
            weight: s.param("weight", (out_dim, in_dim), init)?,
            bias: s.param("bias", out_dim, Init::Zeros)?,
        })
    }

    /// Applies over the last axis of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }

    /// Per-pixel application on NCHW input (a 1x1 convolution).
    pub fn forward_nchw(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.permute((0, 2, 3, 1))?.contiguous()?;
        Ok(self.forward(&x)?.permute((0, 3, 1, 2))?.contiguous()?)
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
}

impl Conv2d {
    pub fn new(s: &mut Scope, in_ch: usize, out_ch: usize, kernel: usize) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        Self::with_init(s, in_ch, out_ch, kernel, Init::FanIn { fan_in, gain: 1.0 })
    }

    pub fn with_init(s: &mut Scope, in_ch: usize, out_ch: usize, kernel: usize, init: Init) -> Result<Self> {
        Ok(Self {
            weight: s.param("weight", (out_ch, in_ch, kernel, kernel), init)?,
            bias: s.param("bias", out_ch, Init::Zeros)?,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, 1, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: Tensor,
    beta: Tensor,
    groups: usize,
}

pub const NORM_EPS: f64 = 1e-5;

/// Largest group count <= 4 dividing `channels`.
pub fn norm_groups(channels: usize) -> usize {
    (1..=4).rev().find(|g| channels % g == 0).unwrap_or(1)
}

impl GroupNorm {
    pub fn new(s: &mut Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: s.param("gamma", channels, Init::Ones)?,
            beta: s.param("beta", channels, Init::Zeros)?,
            groups: norm_groups(channels),
        })
    }

    /// NCHW input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let g = self.groups;
        let xg = x.reshape((n, g, (c / g) * h * w))?;
        let mean = xg.mean_keepdim(2)?;
        let centered = xg.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?.reshape((n, c, h, w))?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

/// Layer norm over the last axis, without affine parameters.
pub fn layer_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&sum)?)
}

/// `1 / (1 + exp(-x))`; exact 0 and 1 at -inf and +inf.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Multi-head attention with separate query and key/value sources.
#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(s: &mut Scope, dim: usize, kv_dim: usize, heads: usize, out_init: Init) -> Result<Self> {
        Ok(Self {
            q: Linear::new(&mut s.sub("q"), dim, dim)?,
            k: Linear::new(&mut s.sub("k"), kv_dim, dim)?,
            v: Linear::new(&mut s.sub("v"), kv_dim, dim)?,
            o: Linear::with_init(&mut s.sub("o"), dim, dim, out_init)?,
            heads,
        })
    }

    /// `x`: (N, Lq, C), `ctx`: (N, Lk, Ckv) -> (N, Lq, C).
    pub fn forward(&self, x: &Tensor, ctx: &Tensor) -> Result<Tensor> {
        let (n, lq, c) = x.dims3()?;
        let lk = ctx.dim(1)?;
        let h = self.heads;
        let d = c / h;
        let split = |t: Tensor, l: usize| -> Result<Tensor> {
            Ok(t.reshape((n, l, h, d))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?, lq)?;
        let k = split(self.k.forward(ctx)?, lk)?;
        let v = split(self.v.forward(ctx)?, lk)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (d as f64).sqrt()))?;
        let attn = softmax_last(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((n, lq, c))?;
        self.o.forward(&out)
    }
}

/// Sinusoidal embedding of scalar positions: (N,) -> (N, dim).
pub fn sinusoidal(positions: &[f32], dim: usize, dtype: DType) -> Result<Tensor> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            out.push((p as f64 * freq).sin());
        }
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            out.push((p as f64 * freq).cos());
        }
        for _ in 2 * half..dim {
            out.push(0.0);
        }
    }
    Ok(Tensor::from_vec(out, (positions.len(), dim), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Fixed 2-D sinusoidal positions for an `h x w` token grid: (h*w, dim).
pub fn grid_positions(h: usize, w: usize, dim: usize, dtype: DType) -> Result<Tensor> {
    let half = dim / 2;
    let rows: Vec<f32> = (0..h * w).map(|i| (i / w) as f32).collect();
    let cols: Vec<f32> = (0..h * w).map(|i| (i % w) as f32).collect();
    let r = sinusoidal(&rows, half, dtype)?;
    let c = sinusoidal(&cols, dim - half, dtype)?;
    Ok(Tensor::cat(&[r, c], 1)?)
}
