//! Dense vectors and small analytic-gradient models.

mod model;
mod vector;

pub use model::{
    backward, classification_error, finite_diff_gradient, forward_loss, loss_and_gradient,
    Activation, Batch, LossKind, Model, ModelKind, Targets,
};
pub use vector::{DenseVector, Matrix};
