pub mod cli;
pub mod error;
pub mod hmm;
pub mod metrics;
pub mod nmf;
pub mod pipeline;
pub mod numerics;
pub mod signal;
pub mod swvae;
pub mod vae;

pub use error::{Error, Result};
