//! Prior-fitted network: a transformer trained on synthetic tasks whose
//! forward pass over `<D_train, x_test>` approximates the posterior predictive.

mod config;
mod ensemble;
pub mod file;
mod infer;
pub mod model;
mod train;

pub use config::PfnConfig;
pub use ensemble::{ensemble_infer, ensemble_infer_fitted, member_infer, PfnClassifier};
pub use infer::{encode, infer, Ppd};
pub use model::{Params, PfnWeights};
pub use train::{evaluate_loss, loss_and_gradients, train_offline, TrainOptions, TrainOutcome};
