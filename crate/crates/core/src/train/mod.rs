//! Weight-sharing supernet training.

pub mod augment;
pub mod loss;
pub mod matcher;
pub mod optim;
pub mod trainer;

pub use augment::{augment, batch_resize, AugmentPolicy, TrainSample};
pub use loss::{compute_loss, Annotations, LossBreakdown, LossWeights};
pub use matcher::{hungarian_match, linear_assignment};
pub use optim::{clip_grad_norm, ema_update, layer_decay_multipliers, AdamW};
pub use trainer::{train, train_step, Checkpoint, StepLog, TrainState, TrainerConfig};
