//! Encoder objective: mutual information across representation levels plus
//! an L1 sparsity term, and the unsupervised training loop.

mod align;
mod loss;
mod mi;
mod train;

pub use align::{align_dims, align_dims_backward};
pub use loss::{sparsity_grad, stal_loss, StalLoss};
pub use mi::{
    mutual_information, mutual_information_grad, mutual_information_grad_with,
    mutual_information_hard, soft_assign, MiEstimatorConfig, SoftAssignment,
};
pub use train::{
    stal_objective, train_stal, train_stal_on, BatchObjective, BatchSizes, EpochLoss, LossHistory,
    StalTrainConfig,
};
