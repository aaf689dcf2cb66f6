//! Set matching between predictions and ground truth, and the training loss.

mod hungarian;
mod loss;

pub use hungarian::{brute_force_assignment, hungarian, Assignment};
pub use loss::{
    assignment_loss, box_loss, cost_matrix, cross_entropy, hungarian_loss, hungarian_loss_value, match_cost, LossConfig,
};
