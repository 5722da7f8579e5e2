//! Deep variational encoder-classifier: a dense encoder producing a diagonal
//! Gaussian latent code, a linear softmax classifier over that code, the
//! gated-KL training objective and the per-class latent statistics consumed
//! by the open-set discriminators.

mod check;
mod loss;
mod model;
mod stats;
mod train;

pub use check::{gradcheck_loss, LossCheckSetup};
pub use loss::{dvec_loss, kl_gaussian, lambda_weight, warmup, KlWeighting, LossBreakdown};
pub use model::{argmax, DvecArch, DvecModel, EncodeMode, Latent, Prediction};
pub use stats::{class_centers, euclidean, extract_class_stats, ClassStats};
pub use train::{accuracy, init_model, train, EpochRecord, LabeledSet, TrainConfig, TrainOutcome};
