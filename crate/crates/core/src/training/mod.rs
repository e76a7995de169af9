//! Optimizer, joint image/video batching, the training step, and the
//! progressive phase runner.

pub mod optim;
pub mod progressive;
pub mod step;
pub mod stream;

pub use optim::{lr_at, Adam, OptimizerKind, OptimizerSpec};
pub use progressive::{
    checkpoint_dir, metrics_path, read_metrics, run_progressive, MetricsRecord, PhasePlan, PhaseResult, PhaseSpec,
    RunOptions, TrainSettings, TrainerState,
};
pub use step::{diffusion_loss, sample_null_flags, train_step, StepOutcome, DEFAULT_DROPOUT};
pub use stream::{make_joint_stream, prepare_scenes, Batch, BatchKind, BatchPlan, ClipRef, JointStream, PreparedScene, StreamSpec};
