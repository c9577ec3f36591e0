//! Conditional denoising diffusion over sensor-error sequences: variance
//! schedules, the conditional denoiser, ancestral sampling, and the
//! round-based training loop.

pub mod model;
pub mod schedule;
pub mod traffic;
pub mod train;

pub use model::{
    forward_diffuse, reverse_step_batch, Conditioning, ConditioningSpec, DenoiserModel,
    NoisePredictor,
};
pub use schedule::{DiffusionError, VarianceSchedule, BETA_CLIP};
pub use traffic::{traffic_s0_bounds, TrafficCase, TrafficSystem};
pub use train::{
    percentile, train_teacher, FailureSystem, RoundStats, TeacherTrainConfig, TrainRecord,
    TrainedTeacher,
};
