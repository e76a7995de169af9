//! Garment similarity: cosine similarity between embeddings of the
//! segmented garment in the reference image and in each generated frame.

use crate::data::scene::{garment_colors, non_garment_colors};
use crate::error::{invalid_arg, Error, Result};
use crate::tensor::VideoTensor;

/// Per-frame garment mask from an (H, W, 3) frame in row-major order.
pub trait Segmenter {
    fn segment(&self, frame_index: usize, pixels: &[[f32; 3]], height: usize, width: usize) -> Vec<bool>;
}

impl<F> Segmenter for F
where
    F: Fn(usize, &[[f32; 3]], usize, usize) -> Vec<bool>,
{
    fn segment(&self, frame_index: usize, pixels: &[[f32; 3]], height: usize, width: usize) -> Vec<bool> {
        self(frame_index, pixels, height, width)
    }
}

/// Embeds a set of garment pixels.
pub trait Embedder {
    fn embed(&self, pixels: &[[f32; 3]]) -> Vec<f64>;
}

impl<F> Embedder for F
where
    F: Fn(&[[f32; 3]]) -> Vec<f64>,
{
    fn embed(&self, pixels: &[[f32; 3]]) -> Vec<f64> {
        self(pixels)
    }
}

fn dist2(a: [f32; 3], b: [f32; 3]) -> f32 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Nearest-color classifier over the synthetic scene palette: a pixel is
/// garment when its closest known color is a garment color.
#[derive(Debug, Clone)]
pub struct PaletteSegmenter {
    garment: Vec<[f32; 3]>,
    other: Vec<[f32; 3]>,
}

impl Default for PaletteSegmenter {
    fn default() -> Self {
        Self {
            garment: garment_colors(),
            other: non_garment_colors(),
        }
    }
}

impl PaletteSegmenter {
    pub fn is_garment(&self, p: [f32; 3]) -> bool {
        let near = |set: &[[f32; 3]]| set.iter().map(|&c| dist2(p, c)).fold(f32::INFINITY, f32::min);
        near(&self.garment) < near(&self.other)
    }
}

impl Segmenter for PaletteSegmenter {
    fn segment(&self, _: usize, pixels: &[[f32; 3]], _: usize, _: usize) -> Vec<bool> {
        pixels.iter().map(|&p| self.is_garment(p)).collect()
    }
}

pub const HUE_BINS: usize = 12;
pub const LIGHTNESS_BINS: usize = 4;

/// RGB in [-1, 1] to (hue in [0, 1), saturation, lightness) in [0, 1].
pub fn hsl(p: [f32; 3]) -> (f64, f64, f64) {
    let [r, g, b] = p.map(|c| ((c as f64 + 1.0) * 0.5).clamp(0.0, 1.0));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let l = (max + min) / 2.0;
    let d = max - min;
    if d < 1e-12 {
        return (0.0, 0.0, l);
    }
    let s = d / (1.0 - (2.0 * l - 1.0).abs()).max(1e-12);
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    (h / 6.0, s.min(1.0), l)
}

/// Saturation-weighted hue histogram followed by a lightness histogram.
#[derive(Debug, Clone, Copy, Default)]
pub struct HueHistogramEmbedder;

impl Embedder for HueHistogramEmbedder {
    fn embed(&self, pixels: &[[f32; 3]]) -> Vec<f64> {
        let mut out = vec![0.0; HUE_BINS + LIGHTNESS_BINS];
        if pixels.is_empty() {
            return out;
        }
        let n = pixels.len() as f64;
        for &p in pixels {
            let (h, s, l) = hsl(p);
            let hb = ((h * HUE_BINS as f64) as usize).min(HUE_BINS - 1);
            out[hb] += s / n;
            let lb = ((l * LIGHTNESS_BINS as f64) as usize).min(LIGHTNESS_BINS - 1);
            out[HUE_BINS + lb] += 0.25 / n;
        }
        out
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn frame_pixels(v: &[f32], frame: usize, hw: usize, channels: usize) -> Vec<[f32; 3]> {
    let base = frame * hw * channels;
    (0..hw)
        .map(|i| {
            let o = base + i * channels;
            [v[o], v[o + 1], v[o + 2]]
        })
        .collect()
}

/// Mean over frames (with a non-empty garment mask) of the cosine similarity
/// between the reference garment embedding and the frame's garment embedding.
///
/// `garment_image` is (1, 1, H, W, C); with C = 4 the last channel is used as
/// the reference mask, otherwise the segmenter provides it.
pub fn garment_similarity<S: Segmenter + ?Sized, E: Embedder + ?Sized>(
    garment_image: &VideoTensor,
    generated: &VideoTensor,
    segmenter: &S,
    embedder: &E,
) -> Result<f64> {
    let g = garment_image.dims();
    let d = generated.dims();
    if g.batch != 1 || g.frames != 1 || d.batch != 1 {
        invalid_arg!("garment_similarity takes one garment image and one video");
    }
    if g.channels < 3 || d.channels < 3 {
        invalid_arg!("need color channels");
    }
    let hw = g.height * g.width;
    let gv = garment_image.to_vec()?;
    let gpix = frame_pixels(&gv, 0, hw, g.channels);
    let gmask: Vec<bool> = if g.channels == 4 {
        (0..hw).map(|i| gv[i * 4 + 3] > 0.5).collect()
    } else {
        segmenter.segment(0, &gpix, g.height, g.width)
    };
    let reference: Vec<[f32; 3]> = gpix.iter().zip(&gmask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    if reference.is_empty() {
        return Err(Error::UndefinedScore("reference garment mask is empty".into()));
    }
    let ref_emb = embedder.embed(&reference);

    let vv = generated.to_vec()?;
    let fhw = d.height * d.width;
    let mut total = 0.0;
    let mut counted = 0usize;
    for t in 0..d.frames {
        let pix = frame_pixels(&vv, t, fhw, d.channels);
        let mask = segmenter.segment(t, &pix, d.height, d.width);
        let sel: Vec<[f32; 3]> = pix.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
        if sel.is_empty() {
            continue;
        }
        if let Some(c) = cosine(&ref_emb, &embedder.embed(&sel)) {
            total += c;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::UndefinedScore("garment mask is empty in every generated frame".into()));
    }
    Ok(total / counted as f64)
}
