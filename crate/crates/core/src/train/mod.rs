//! AMSGrad and the training loop.

pub mod amsgrad;
pub mod trainer;

pub use amsgrad::{AmsGrad, AmsGradConfig};
pub use trainer::{
    batch_gradients, classification_accuracy, prepare_batch, train, train_step, CropMode,
    EpochStats, StepResult, TrainConfig, TrainLog, TrainingData,
};
