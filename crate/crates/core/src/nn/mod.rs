//! Minimal dense-network substrate: parameters, fully connected layers with
//! reverse-mode gradients over a fixed layer list, softmax cross-entropy,
//! an Adam optimizer and a finite-difference gradient checker.

mod gradcheck;
mod layer;
mod loss;
mod optim;
mod param;

pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport, Probe};
pub use layer::{forward, Activation, Activations, DenseLayer, Tape};
pub use loss::{cross_entropy_rows, log_softmax_row, softmax_rows, softmax_xent_grad};
pub use optim::{Adam, AdamConfig};
pub use param::{ParamSet, ParamTensor};
