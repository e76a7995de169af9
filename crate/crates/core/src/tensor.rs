//! Five-axis video arrays (batch, time, height, width, channels).
//!
//! A `VideoTensor` with `frames == 1` is an image batch. Pixel-valued tensors
//! live in `[-1, 1]`; feature tensors are unbounded.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VideoDims {
    pub batch: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl VideoDims {
    pub fn new(batch: usize, frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            batch,
            frames,
            height,
            width,
            channels,
        }
    }

    pub fn as_array(&self) -> [usize; 5] {
        [self.batch, self.frames, self.height, self.width, self.channels]
    }

    pub fn numel(&self) -> usize {
        self.as_array().iter().product()
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Self { channels, ..self }
    }

    pub fn with_frames(self, frames: usize) -> Self {
        Self { frames, ..self }
    }
}

#[derive(Debug, Clone)]
pub struct VideoTensor {
    data: Tensor,
}

impl VideoTensor {
    /// Wraps a rank-5 tensor laid out as (B, T, H, W, C).
    pub fn new(data: Tensor) -> Result<Self> {
        let dims = data.dims();
        if dims.len() != 5 {
            invalid_arg!("video tensor must be rank 5 (B,T,H,W,C), got shape {:?}", dims);
        }
        if dims.iter().any(|&d| d == 0) {
            invalid_arg!("video tensor axes must all be >= 1, got shape {:?}", dims);
        }
        Ok(Self { data })
    }

    pub fn from_vec(values: Vec<f32>, dims: VideoDims) -> Result<Self> {
        if values.len() != dims.numel() {
            invalid_arg!(
                "buffer of {} values does not match dims {:?}",
                values.len(),
                dims.as_array()
            );
        }
        Self::new(Tensor::from_vec(values, dims.as_array().to_vec(), &Device::Cpu)?)
    }

    pub fn zeros(dims: VideoDims, dtype: DType) -> Result<Self> {
        Self::new(Tensor::zeros(dims.as_array().to_vec(), dtype, &Device::Cpu)?)
    }

    pub fn full(value: f64, dims: VideoDims, dtype: DType) -> Result<Self> {
        let t = Tensor::ones(dims.as_array().to_vec(), dtype, &Device::Cpu)?.affine(value, 0.0)?;
        Self::new(t)
    }

    /// Standard normal draws from `rng`, in row-major order.
    pub fn randn<R: Rng + ?Sized>(rng: &mut R, dims: VideoDims, dtype: DType) -> Result<Self> {
        let values: Vec<f64> = (0..dims.numel()).map(|_| rng.sample(StandardNormal)).collect();
        let t = Tensor::from_vec(values, dims.as_array().to_vec(), &Device::Cpu)?.to_dtype(dtype)?;
        Self::new(t)
    }

    pub fn dims(&self) -> VideoDims {
        let d = self.data.dims();
        VideoDims::new(d[0], d[1], d[2], d[3], d[4])
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn is_image_batch(&self) -> bool {
        self.dims().frames == 1
    }

    pub fn to_vec(&self) -> Result<Vec<f32>> {
        Ok(self
            .data
            .flatten_all()?
            .to_dtype(DType::F32)?
            .to_vec1::<f32>()?)
    }

    pub fn to_vec_f64(&self) -> Result<Vec<f64>> {
        Ok(self
            .data
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?)
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Self::new(self.data.to_dtype(dtype)?)
    }

    pub fn ensure_same_shape(&self, other: &VideoTensor, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            invalid_arg!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.dims().as_array(),
                other.dims().as_array()
            );
        }
        Ok(())
    }

    /// True when every value lies in the pixel range `[-1, 1]`.
    pub fn is_pixel_range(&self) -> Result<bool> {
        Ok(self.to_vec()?.iter().all(|v| (-1.0..=1.0).contains(v)))
    }

    pub fn clamp_pixels(&self) -> Result<Self> {
        Self::new(self.data.clamp(-1.0, 1.0)?)
    }

    /// Frames `[start, start + len)` of every batch element.
    pub fn narrow_frames(&self, start: usize, len: usize) -> Result<Self> {
        Self::new(self.data.narrow(1, start, len)?)
    }

    /// Batch elements `[start, start + len)`.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Result<Self> {
        Self::new(self.data.narrow(0, start, len)?)
    }

    /// Concatenates along the batch axis.
    pub fn cat_batch(parts: &[VideoTensor]) -> Result<Self> {
        if parts.is_empty() {
            invalid_arg!("cannot concatenate an empty list of video tensors");
        }
        let ts: Vec<&Tensor> = parts.iter().map(|p| &p.data).collect();
        Self::new(Tensor::cat(&ts, 0)?)
    }

    /// Concatenates along the channel axis.
    pub fn cat_channels(parts: &[VideoTensor]) -> Result<Self> {
        if parts.is_empty() {
            invalid_arg!("cannot concatenate an empty list of video tensors");
        }
        let ts: Vec<&Tensor> = parts.iter().map(|p| &p.data).collect();
        Self::new(Tensor::cat(&ts, 4)?)
    }

    /// Reorders frames: output frame `i` is input frame `order[i]`.
    pub fn permute_frames(&self, order: &[usize]) -> Result<Self> {
        let t = self.dims().frames;
        if order.len() != t || order.iter().any(|&i| i >= t) {
            invalid_arg!("frame order {:?} is not a permutation of 0..{t}", order);
        }
        let idx = Tensor::from_vec(
            order.iter().map(|&i| i as u32).collect::<Vec<_>>(),
            order.len(),
            &Device::Cpu,
        )?;
        Self::new(self.data.index_select(&idx, 1)?.contiguous()?)
    }

    /// Max absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &VideoTensor) -> Result<f64> {
        self.ensure_same_shape(other, "max_abs_diff")?;
        Ok((&self.data - &other.data)?
            .abs()?
            .flatten_all()?
            .max(0)?
            .to_dtype(DType::F64)?
            .to_scalar::<f64>()?)
    }

    pub fn mean_abs_diff(&self, other: &VideoTensor) -> Result<f64> {
        self.ensure_same_shape(other, "mean_abs_diff")?;
        Ok((&self.data - &other.data)?
            .abs()?
            .to_dtype(DType::F64)?
            .mean_all()?
            .to_scalar::<f64>()?)
    }
}

impl PartialEq for VideoTensor {
    /// Bitwise equality of shape, dtype and contents.
    fn eq(&self, other: &Self) -> bool {
        if self.dims() != other.dims() || self.dtype() != other.dtype() {
            return false;
        }
        match (self.to_vec_f64(), other.to_vec_f64()) {
            (Ok(a), Ok(b)) => a
                .iter()
                .zip(&b)
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            _ => false,
        }
    }
}
