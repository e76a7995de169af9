//! Split classifier-free guidance over cumulative conditioning groups.
//!
//! With predictions `e_0` (everything nulled) and `e_i` (groups `1..=i`
//! active), the guided estimate is built as
//!
//! ```text
//! out  = w_0 * e_0
//! prev = out            (strict)   or   e_0 (intuitive)
//! for i in 1..=n:
//!     out  += w_i * (e_i - prev)
//!     prev  = e_i
//! ```
//!
//! The loop runs on per-term coefficients and the predictions are combined
//! once, so all-ones weights telescope to exactly `e_n`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ConditionInput, NullFlags, TryOnConditioning};
use crate::error::{invalid_arg, Error, Result};
use crate::model::{Branch, TryOnDenoiser};
use crate::tensor::VideoTensor;

/// How `prev` is initialized before the first group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    /// `prev = w_0 * e_0`.
    #[default]
    Strict,
    /// `prev = e_0`.
    Intuitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    /// Group `i`'s active set is the union of `groups[..=i]`.
    pub groups: Vec<Vec<ConditionInput>>,
    /// One weight per term, unconditional first.
    pub weights: Vec<f64>,
    #[serde(default)]
    pub mode: GuidanceMode,
}

/// The four try-on weights `(w_null, w_p, w_g, w_full)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TryOnWeights(pub [f64; 4]);

impl TryOnWeights {
    /// Default weights for the synthetic test set.
    pub const DEFAULT: TryOnWeights = TryOnWeights([1.0, 1.0, 1.0, 1.0]);
    /// Weights that emphasize the garment term.
    pub const GARMENT_HEAVY: TryOnWeights = TryOnWeights([1.0, 1.0, 3.0, 1.0]);
}

impl Default for TryOnWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl FromStr for TryOnWeights {
    type Err = Error;

    /// Parses `"w0,wp,wg,wfull"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            invalid_arg!("expected 4 comma-separated weights, got {}", parts.len());
        }
        let mut w = [0.0; 4];
        for (slot, p) in w.iter_mut().zip(&parts) {
            *slot = p
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("bad weight {p:?}: {e}")))?;
            if !slot.is_finite() {
                invalid_arg!("weight {p} is not finite");
            }
        }
        Ok(Self(w))
    }
}

/// Cumulative try-on groups: agnostic inputs, then garment inputs, then person pose.
pub fn tryon_groups() -> Vec<Vec<ConditionInput>> {
    vec![
        vec![ConditionInput::Agnostic],
        vec![ConditionInput::Garment, ConditionInput::GarmentPose],
        vec![ConditionInput::PersonPose],
    ]
}

pub fn make_tryon_schedule(w_null: f64, w_p: f64, w_g: f64, w_full: f64) -> GuidanceSchedule {
    GuidanceSchedule {
        groups: tryon_groups(),
        weights: vec![w_null, w_p, w_g, w_full],
        mode: GuidanceMode::Strict,
    }
}

impl From<TryOnWeights> for GuidanceSchedule {
    fn from(w: TryOnWeights) -> Self {
        let [a, b, c, d] = w.0;
        make_tryon_schedule(a, b, c, d)
    }
}

impl GuidanceSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.groups.len() + 1 {
            invalid_arg!(
                "{} weights for {} groups; need one per group plus the unconditional term",
                self.weights.len(),
                self.groups.len()
            );
        }
        if let Some(w) = self.weights.iter().find(|w| !w.is_finite()) {
            invalid_arg!("guidance weight {w} is not finite");
        }
        Ok(())
    }

    /// Null flags for term `i` (0 = unconditional).
    pub fn null_flags(&self, term: usize) -> NullFlags {
        let active: Vec<ConditionInput> = self.groups[..term].iter().flatten().copied().collect();
        NullFlags::keep_only(&active)
    }

    /// Coefficient of each term's prediction in the guided output.
    pub fn coefficients(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.groups.len();
        let basis = |i: usize| {
            let mut v = vec![0.0; n + 1];
            v[i] = 1.0;
            v
        };
        let w = &self.weights;
        let mut out: Vec<f64> = basis(0).iter().map(|c| c * w[0]).collect();
        let mut prev = match self.mode {
            GuidanceMode::Strict => out.clone(),
            GuidanceMode::Intuitive => basis(0),
        };
        for i in 1..=n {
            let e_i = basis(i);
            for k in 0..=n {
                out[k] += w[i] * (e_i[k] - prev[k]);
            }
            prev = e_i;
        }
        Ok(out)
    }
}

/// Anything that predicts from `(z_t, t, cond, nulls)`.
pub trait Denoise {
    fn predict(&self, z_t: &VideoTensor, t: &[f32], cond: &TryOnConditioning, nulls: &[NullFlags]) -> Result<VideoTensor>;
}

impl<F> Denoise for F
where
    F: Fn(&VideoTensor, &[f32], &TryOnConditioning, &[NullFlags]) -> Result<VideoTensor>,
{
    fn predict(&self, z_t: &VideoTensor, t: &[f32], cond: &TryOnConditioning, nulls: &[NullFlags]) -> Result<VideoTensor> {
        self(z_t, t, cond, nulls)
    }
}

/// A model evaluated on a fixed branch.
pub struct ModelDenoiser<'a> {
    pub model: &'a TryOnDenoiser,
    pub branch: Branch,
}

impl<'a> ModelDenoiser<'a> {
    /// Video branch when the model has temporal blocks, image branch otherwise.
    pub fn auto(model: &'a TryOnDenoiser) -> Self {
        let branch = if model.config().temporal_enabled {
            Branch::Video
        } else {
            Branch::Image
        };
        Self { model, branch }
    }
}

impl Denoise for ModelDenoiser<'_> {
    fn predict(&self, z_t: &VideoTensor, t: &[f32], cond: &TryOnConditioning, nulls: &[NullFlags]) -> Result<VideoTensor> {
        self.model.forward(z_t, t, cond, nulls, self.branch)
    }
}

/// Guided prediction; makes exactly `groups.len() + 1` denoiser calls.
pub fn split_cfg<D: Denoise + ?Sized>(
    denoiser: &D,
    z_t: &VideoTensor,
    t: &[f32],
    cond: &TryOnConditioning,
    sched: &GuidanceSchedule,
) -> Result<VideoTensor> {
    let coeffs = sched.coefficients()?;
    let mut acc: Option<candle_core::Tensor> = None;
    for (term, &c) in coeffs.iter().enumerate() {
        let pred = denoiser.predict(z_t, t, cond, &[sched.null_flags(term)])?;
        let scaled = (pred.tensor() * c)?;
        acc = Some(match acc {
            None => scaled,
            Some(a) => (a + scaled)?,
        });
    }
    VideoTensor::new(acc.expect("at least the unconditional term"))
}
