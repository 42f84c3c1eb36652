//! Reverse-mode differentiation, the VAE with its performance predictors,
//! the input-space baseline classifier and their training.

pub mod io;
pub mod layers;
pub mod model;
pub mod tape;
pub mod train;

pub use io::{load_baseline, load_vae, save_baseline, save_vae, WEIGHTS_FORMAT_VERSION};
pub use layers::{Activation, Dense, Mlp};
pub use model::{vae_forward, BaselineArch, BaselineWeights, Mode, ModelMeta, VaeArch, VaeOutput, VaeWeights};
pub use tape::{bce_with_logits, sigmoid, Gradients, Tape, Var};
pub use train::{
    kl_diag_gaussian, loss_total, train_baseline, train_vae, Batch, EpochLog, LossComponents, TrainConfig, Trained,
    TrainingLog,
};
