//! Adversarial multi-task training: losses, optimizer, learning-rate schedule,
//! the two update steps and the epoch loop.

pub mod loss;
pub mod optim;
pub mod schedule;
pub mod step;
mod trainer;

pub use loss::{argmax, loss_adv, loss_mt, sample_misleading_labels, softmax_cross_entropy, CrossEntropy, LOG_FLOOR};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::lr_multiplier;
pub use step::{adv_gradients, adv_step, mt_gradients, mt_step, AdvStats, Batch, MtStats};
pub use trainer::{
    accuracy, stack, train, train_with, validation_recordings, EpochRecord, RunHistory, Sample, TrainConfig, TrainOutcome,
};
