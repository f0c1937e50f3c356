//! Time-frequency analysis, audio I/O and synthetic audio-visual data.

mod features;
mod mix;
mod stft;
mod synth;
mod visual;
mod wav;

pub use features::{read_features, write_features, write_features_json, FeatureFile};
pub use mix::{mix_at_snr, power, synth_noise, NoiseKind};
pub use stft::{istft, stft, ComplexSpectrogram, StftConfig, WindowKind};
pub use synth::{spectral_centroids, synth_clean, CleanUtterance, SynthConfig};
pub use visual::{occlude, VisualSequence};
pub use wav::{read_wav, write_wav, WavFormat};

use crate::error::{Error, Result};

/// Mono audio; nominal sample range is [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}
