//! Training loop, learning-rate schedule and optimizer.

mod data;
mod optim;
mod schedule;
mod trainer;

pub use data::{split_indices, Dataset, View, ViewConfig};
pub use optim::{clip_grad_norm, AdamW};
pub use schedule::{lr_at, TrainConfig};
pub use trainer::{dataset_loss, train, view_gradients, EpochLog, TrainReport};
