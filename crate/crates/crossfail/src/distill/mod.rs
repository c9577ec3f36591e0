//! Knowledge distillation: teacher dataset construction, the one-step
//! student, supervised pretraining, and GAN-based distillation.

pub mod dataset;
pub mod gan;
pub mod student;

pub use dataset::{
    build_teacher_dataset, read_dataset, record_case, record_scenario, verify_record,
    write_dataset, DistillError, TeacherRecord, DATASET_MAGIC, DATASET_VERSION,
};
pub use gan::{gan_distill, gan_losses, Discriminator, GanConfig, GanLosses, GanStats};
pub use student::{
    prepare_samples, supervised_pretrain, DistillSample, StudentModel, SupervisedConfig,
};
