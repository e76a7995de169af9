//! Variance-preserving noise schedules, the forward process, and
//! conversions between x0, epsilon and v predictions.
//!
//! Timesteps are integers `0..num_steps`, with `t = 0` the least noisy.
//! Every schedule satisfies `alpha_t^2 + sigma_t^2 = 1`.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::tensor::VideoTensor;

/// Offset of the cosine schedule, as a fraction of `num_steps`.
///
/// `alpha_t = cos(pi/2 * (t + s*N) / (N + s*N))` with `s = 0.008`, so that
/// `alpha_0` sits just below one and `alpha_{N-1}` just above zero.
pub const COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Linear,
}

/// What the denoiser emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionTarget {
    #[default]
    V,
    Epsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    num_steps: usize,
    alphas: Vec<f64>,
    sigmas: Vec<f64>,
    kind: ScheduleKind,
}

/// Serializable schedule parameters (the arrays are derived).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub num_steps: usize,
    #[serde(default)]
    pub kind: ScheduleKind,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            num_steps: 1000,
            kind: ScheduleKind::Cosine,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.num_steps, self.kind)
    }
}

pub fn make_schedule(num_steps: usize, kind: ScheduleKind) -> Result<DiffusionSchedule> {
    if num_steps < 2 {
        invalid_arg!("schedule needs at least 2 steps, got {num_steps}");
    }
    let n = num_steps as f64;
    let alphas: Vec<f64> = (0..num_steps)
        .map(|t| {
            let t = t as f64;
            match kind {
                ScheduleKind::Cosine => {
                    let off = COSINE_OFFSET * n;
                    (0.5 * std::f64::consts::PI * (t + off) / (n + off)).cos()
                }
                // alpha^2 falls linearly from N/(N+1) to 1/(N+1).
                ScheduleKind::Linear => (1.0 - (t + 1.0) / (n + 1.0)).sqrt(),
            }
        })
        .collect();
    let sigmas = alphas.iter().map(|a| (1.0 - a * a).max(0.0).sqrt()).collect();
    Ok(DiffusionSchedule {
        num_steps,
        alphas,
        sigmas,
        kind,
    })
}

impl DiffusionSchedule {
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn params(&self) -> ScheduleParams {
        ScheduleParams {
            num_steps: self.num_steps,
            kind: self.kind,
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    /// `t / num_steps`, the time value fed to the denoiser.
    pub fn normalized_time(&self, t: usize) -> f32 {
        t as f32 / self.num_steps as f32
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.num_steps {
            invalid_arg!("timestep {t} out of range 0..{}", self.num_steps);
        }
        Ok(())
    }

    /// Per-batch coefficient tensor of shape (B,1,1,1,1) (or (1,1,1,1,1)).
    fn coef(&self, ts: &[usize], f: impl Fn(usize) -> f64, like: &VideoTensor) -> Result<Tensor> {
        let b = like.dims().batch;
        if ts.len() != 1 && ts.len() != b {
            invalid_arg!("got {} timesteps for batch of {b}", ts.len());
        }
        for &t in ts {
            self.check_t(t)?;
        }
        let vals: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
        Ok(Tensor::from_vec(vals, (ts.len(), 1, 1, 1, 1), &Device::Cpu)?.to_dtype(like.dtype())?)
    }

    /// `a(t) * x + b(t) * y`, broadcast over everything but batch.
    fn combine(
        &self,
        ts: &[usize],
        x: &VideoTensor,
        y: &VideoTensor,
        a: impl Fn(usize) -> f64,
        b: impl Fn(usize) -> f64,
        what: &str,
    ) -> Result<VideoTensor> {
        x.ensure_same_shape(y, what)?;
        let ca = self.coef(ts, a, x)?;
        let cb = self.coef(ts, b, x)?;
        let out = (x.tensor().broadcast_mul(&ca)? + y.tensor().broadcast_mul(&cb)?)?;
        VideoTensor::new(out)
    }

    /// Forward process with one timestep per batch element (or one shared).
    pub fn add_noise_batched(
        &self,
        x0: &VideoTensor,
        ts: &[usize],
        noise: &VideoTensor,
    ) -> Result<VideoTensor> {
        self.combine(ts, x0, noise, |t| self.alphas[t], |t| self.sigmas[t], "add_noise")
    }

    pub fn v_from_batched(
        &self,
        x0: &VideoTensor,
        noise: &VideoTensor,
        ts: &[usize],
    ) -> Result<VideoTensor> {
        self.combine(ts, noise, x0, |t| self.alphas[t], |t| -self.sigmas[t], "v_from")
    }

    pub fn x0_from_v_batched(
        &self,
        z_t: &VideoTensor,
        v: &VideoTensor,
        ts: &[usize],
    ) -> Result<VideoTensor> {
        self.combine(ts, z_t, v, |t| self.alphas[t], |t| -self.sigmas[t], "x0_from_v")
    }

    pub fn eps_from_v_batched(
        &self,
        z_t: &VideoTensor,
        v: &VideoTensor,
        ts: &[usize],
    ) -> Result<VideoTensor> {
        self.combine(ts, z_t, v, |t| self.sigmas[t], |t| self.alphas[t], "eps_from_v")
    }

    /// Recovers (x0, eps) from a model prediction in either parameterization.
    pub fn split_prediction(
        &self,
        z_t: &VideoTensor,
        prediction: &VideoTensor,
        t: usize,
        target: PredictionTarget,
    ) -> Result<(VideoTensor, VideoTensor)> {
        match target {
            PredictionTarget::V => Ok((
                self.x0_from_v_batched(z_t, prediction, &[t])?,
                self.eps_from_v_batched(z_t, prediction, &[t])?,
            )),
            PredictionTarget::Epsilon => {
                // x0 = (z - sigma * eps) / alpha
                let x0 = self.combine(
                    &[t],
                    z_t,
                    prediction,
                    |t| 1.0 / self.alphas[t],
                    |t| -self.sigmas[t] / self.alphas[t],
                    "x0_from_eps",
                )?;
                Ok((x0, prediction.clone()))
            }
        }
    }
}

/// `z_t = alpha_t * x0 + sigma_t * noise`.
pub fn add_noise(
    x0: &VideoTensor,
    t: usize,
    noise: &VideoTensor,
    sched: &DiffusionSchedule,
) -> Result<VideoTensor> {
    sched.add_noise_batched(x0, &[t], noise)
}

/// `v = alpha_t * noise - sigma_t * x0`.
pub fn v_from(
    x0: &VideoTensor,
    noise: &VideoTensor,
    t: usize,
    sched: &DiffusionSchedule,
) -> Result<VideoTensor> {
    sched.v_from_batched(x0, noise, &[t])
}

/// `x0 = alpha_t * z_t - sigma_t * v`.
pub fn x0_from_v(
    z_t: &VideoTensor,
    v: &VideoTensor,
    t: usize,
    sched: &DiffusionSchedule,
) -> Result<VideoTensor> {
    sched.x0_from_v_batched(z_t, v, &[t])
}

/// `eps = sigma_t * z_t + alpha_t * v`.
pub fn eps_from_v(
    z_t: &VideoTensor,
    v: &VideoTensor,
    t: usize,
    sched: &DiffusionSchedule,
) -> Result<VideoTensor> {
    sched.eps_from_v_batched(z_t, v, &[t])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::VideoDims;
    use candle_core::DType;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> VideoDims {
        VideoDims::new(2, 3, 4, 5, 3)
    }

    #[test]
    fn rejects_tiny_schedules() {
        assert!(make_schedule(0, ScheduleKind::Cosine).is_err());
        assert!(make_schedule(1, ScheduleKind::Linear).is_err());
    }

    #[test]
    fn schedules_are_monotone_and_variance_preserving() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            for n in [2, 10, 1000] {
                let s = make_schedule(n, kind).unwrap();
                assert_eq!(s.alphas().len(), n);
                assert_eq!(s.sigmas().len(), n);
                for t in 0..n {
                    let (a, g) = (s.alpha(t), s.sigma(t));
                    assert!(a > 0.0 && a <= 1.0, "{kind:?} {n} {t} {a}");
                    assert!((0.0..1.0).contains(&g));
                    assert!((a * a + g * g - 1.0).abs() <= 1e-6);
                    if t > 0 {
                        assert!(a <= s.alpha(t - 1));
                        assert!(g >= s.sigma(t - 1));
                    }
                }
            }
        }
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let s = make_schedule(1000, ScheduleKind::Cosine).unwrap();
        assert!((s.alpha(0) - 1.0).abs() < 1e-3);
        assert!(s.sigma(0) < 2e-2);
        // Independent evaluation of the closed form at t = N/2.
        let expected = (std::f64::consts::FRAC_PI_2 * (500.0 + 8.0) / 1008.0).cos();
        assert!((s.alpha(500) - expected).abs() < 1e-12);
        assert!((expected - std::f64::consts::FRAC_PI_4.cos()).abs() < 1e-2);
    }

    #[test]
    fn add_noise_direct_substitution() {
        let s = make_schedule(1000, ScheduleKind::Cosine).unwrap();
        let d = dims();
        let ones = VideoTensor::full(1.0, d, DType::F64).unwrap();
        // Pick the timestep whose alpha is closest to 0.8, then check the formula.
        let t = (0..1000)
            .min_by(|&a, &b| {
                (s.alpha(a) - 0.8)
                    .abs()
                    .partial_cmp(&(s.alpha(b) - 0.8).abs())
                    .unwrap()
            })
            .unwrap();
        let z = add_noise(&ones, t, &ones, &s).unwrap().to_vec_f64().unwrap();
        let want = s.alpha(t) + s.sigma(t);
        assert!(z.iter().all(|v| (v - want).abs() < 1e-12));

        // A hand-built schedule with alpha = 0.8, sigma = 0.6 gives 1.4.
        let hand = DiffusionSchedule {
            num_steps: 2,
            alphas: vec![0.8, 0.8],
            sigmas: vec![0.6, 0.6],
            kind: ScheduleKind::Linear,
        };
        let z = add_noise(&ones, 1, &ones, &hand).unwrap().to_vec_f64().unwrap();
        assert!(z.iter().all(|v| (v - 1.4).abs() < 1e-12));
    }

    #[test]
    fn zero_noise_and_zero_signal() {
        let s = make_schedule(50, ScheduleKind::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = VideoTensor::randn(&mut rng, dims(), DType::F64).unwrap();
        let zero = VideoTensor::zeros(dims(), DType::F64).unwrap();
        let z = add_noise(&x0, 7, &zero, &s).unwrap().to_vec_f64().unwrap();
        let x = x0.to_vec_f64().unwrap();
        for (a, b) in z.iter().zip(&x) {
            assert!((a - s.alpha(7) * b).abs() < 1e-12);
        }
        let n = x0.clone();
        let v = v_from(&zero, &n, 9, &s).unwrap().to_vec_f64().unwrap();
        for (a, b) in v.iter().zip(&x) {
            assert!((a - s.alpha(9) * b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_and_bad_t_are_rejected() {
        let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let a = VideoTensor::zeros(dims(), DType::F32).unwrap();
        let b = VideoTensor::zeros(dims().with_frames(1), DType::F32).unwrap();
        assert!(add_noise(&a, 0, &b, &s).is_err());
        assert!(add_noise(&a, 10, &a, &s).is_err());
        assert!(v_from(&a, &b, 0, &s).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trips_recover_x0_and_noise(seed in any::<u64>(), t in 0usize..1000, linear in any::<bool>()) {
            let kind = if linear { ScheduleKind::Linear } else { ScheduleKind::Cosine };
            let s = make_schedule(1000, kind).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = VideoTensor::randn(&mut rng, dims(), DType::F64).unwrap();
            let n = VideoTensor::randn(&mut rng, dims(), DType::F64).unwrap();
            let z = add_noise(&x0, t, &n, &s).unwrap();
            let v = v_from(&x0, &n, t, &s).unwrap();
            prop_assert!(x0_from_v(&z, &v, t, &s).unwrap().max_abs_diff(&x0).unwrap() <= 1e-6);
            prop_assert!(eps_from_v(&z, &v, t, &s).unwrap().max_abs_diff(&n).unwrap() <= 1e-6);
        }

        #[test]
        fn add_noise_is_linear(seed in any::<u64>(), t in 0usize..100, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let s = make_schedule(100, ScheduleKind::Cosine).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x1 = VideoTensor::randn(&mut rng, dims(), DType::F64).unwrap();
            let x2 = VideoTensor::randn(&mut rng, dims(), DType::F64).unwrap();
            let n1 = VideoTensor::randn(&mut rng, dims(), DType::F64).unwrap();
            let n2 = VideoTensor::randn(&mut rng, dims(), DType::F64).unwrap();
            let lin = |p: &VideoTensor, q: &VideoTensor| {
                VideoTensor::new(((p.tensor() * a).unwrap() + (q.tensor() * b).unwrap()).unwrap()).unwrap()
            };
            let lhs = add_noise(&lin(&x1, &x2), t, &lin(&n1, &n2), &s).unwrap();
            let rhs = lin(&add_noise(&x1, t, &n1, &s).unwrap(), &add_noise(&x2, t, &n2, &s).unwrap());
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-9);
        }
    }
}
