use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::stream::{Batch, BatchKind};
use crate::data::{ConditionInput, NullFlags};
use crate::diffusion::{DiffusionSchedule, PredictionTarget};
use crate::error::{Error, Result};
use crate::model::{Branch, TryOnDenoiser};
use crate::tensor::VideoTensor;

/// Per-input conditioning dropout probability.
pub const DEFAULT_DROPOUT: f64 = 0.1;

/// Nulls each conditioning input independently with probability `rate`.
pub fn sample_null_flags(rng: &mut ChaCha8Rng, rate: f64) -> NullFlags {
    let mut f = NullFlags::NONE;
    for input in ConditionInput::ALL {
        // always draw, so the stream position does not depend on the rate
        let u: f64 = rng.gen();
        f.set(input, u < rate);
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub loss: f64,
    pub lr: f64,
    pub kind: BatchKind,
    pub nulls: Vec<NullFlags>,
    pub timesteps: Vec<usize>,
}

pub fn branch_for(kind: BatchKind) -> Branch {
    match kind {
        BatchKind::Image => Branch::Image,
        BatchKind::Video => Branch::Video,
    }
}

/// Diffusion loss of a batch with explicit timesteps, noise and nulls.
pub fn diffusion_loss(
    model: &TryOnDenoiser,
    batch: &Batch,
    sched: &DiffusionSchedule,
    target: PredictionTarget,
    ts: &[usize],
    noise: &VideoTensor,
    nulls: &[NullFlags],
) -> Result<candle_core::Tensor> {
    let z = sched.add_noise_batched(&batch.x0, ts, noise)?;
    let times: Vec<f32> = ts.iter().map(|&t| sched.normalized_time(t)).collect();
    let pred = model.forward(&z, &times, &batch.cond, nulls, branch_for(batch.kind))?;
    let want = match target {
        PredictionTarget::Epsilon => noise.clone(),
        PredictionTarget::V => sched.v_from_batched(&batch.x0, noise, ts)?,
    };
    Ok((pred.tensor() - want.tensor())?.sqr()?.mean_all()?)
}

/// One optimizer update on `batch`. Image batches run the image branch, so
/// temporal parameters get no gradient and the optimizer leaves them alone.
pub fn train_step(
    model: &TryOnDenoiser,
    batch: &Batch,
    opt: &mut Adam,
    sched: &DiffusionSchedule,
    target: PredictionTarget,
    dropout_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    let b = batch.size();
    let ts: Vec<usize> = (0..b).map(|_| rng.gen_range(0..sched.num_steps())).collect();
    let nulls: Vec<NullFlags> = (0..b).map(|_| sample_null_flags(rng, dropout_rate)).collect();
    let noise = VideoTensor::randn(rng, batch.x0.dims(), batch.x0.dtype())?;
    let loss = diffusion_loss(model, batch, sched, target, &ts, &noise, &nulls)?;
    let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(Error::TrainingDivergence {
            step: opt.global_step(),
            loss: value,
            detail: format!(
                "{:?} batch of {b} clips x {} frames, timesteps {ts:?}, lr {:.3e}",
                batch.kind,
                batch.frames(),
                opt.current_lr()
            ),
        });
    }
    let grads = loss.backward()?;
    let lr = opt.step(model.params(), &grads)?;
    Ok(StepOutcome {
        loss: value,
        lr,
        kind: batch.kind,
        nulls,
        timesteps: ts,
    })
}
