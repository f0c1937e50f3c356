//! Variational autoencoders over clean-speech power spectra.

pub mod checkpoint;
mod mlp;
mod model;
pub mod train;

pub use checkpoint::{load_model, save_model, CheckpointMeta};
pub use mlp::{Activation, Mlp, MlpCache};
pub use model::{DecoderJacobian, ModelKind, VaeArch, VaeModel, LOG_POWER_FLOOR};
pub use train::{train_vae, EncoderNoise, TrainConfig, TrainReport, TrainingSet};
