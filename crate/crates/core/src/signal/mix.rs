use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Mean squared sample value.
pub fn power(samples: &[f64]) -> f64 {
    samples.iter().map(|x| x * x).sum::<f64>() / samples.len().max(1) as f64
}

/// Returns `clean + alpha * noise` with `alpha` chosen so the clean-to-noise
/// power ratio equals `snr_db` exactly.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if clean.len() != noise.len() {
        return Err(Error::shape("mix_at_snr", clean.len(), noise.len()));
    }
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::InvalidInput(format!(
            "sample rates differ: {} vs {}",
            clean.sample_rate, noise.sample_rate
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput(format!("SNR {snr_db} dB")));
    }
    let pc = power(&clean.samples);
    let pn = power(&noise.samples);
    if pc <= 0.0 || pn <= 0.0 {
        return Err(Error::InvalidInput("cannot mix a silent signal at a target SNR".into()));
    }
    let alpha = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    Waveform::new(
        clean
            .samples
            .iter()
            .zip(&noise.samples)
            .map(|(c, n)| c + alpha * n)
            .collect(),
        clean.sample_rate,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    /// Approximately -3 dB/octave.
    Pink,
    /// Leaky-integrated white noise, -6 dB/octave above a few Hz.
    Brown,
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Brown => "brown",
        }
    }
}

/// Stationary noise normalized to unit power.
pub fn synth_noise(kind: NoiseKind, len: usize, sample_rate: u32, rng: &mut Rng) -> Result<Waveform> {
    if len == 0 {
        return Err(Error::InvalidInput("noise length must be positive".into()));
    }
    let mut white = vec![0.0; len];
    rng.fill_standard_normal(&mut white);
    let mut out = match kind {
        NoiseKind::White => white,
        NoiseKind::Pink => {
            // Paul Kellet's refined pink filter
            let mut b = [0.0f64; 7];
            white
                .iter()
                .map(|&w| {
                    b[0] = 0.99886 * b[0] + w * 0.0555179;
                    b[1] = 0.99332 * b[1] + w * 0.0750759;
                    b[2] = 0.96900 * b[2] + w * 0.1538520;
                    b[3] = 0.86650 * b[3] + w * 0.3104856;
                    b[4] = 0.55000 * b[4] + w * 0.5329522;
                    b[5] = -0.7616 * b[5] - w * 0.0168980;
                    let y = b.iter().sum::<f64>() + w * 0.5362;
                    b[6] = w * 0.115926;
                    y
                })
                .collect()
        }
        NoiseKind::Brown => {
            let mut acc = 0.0;
            white
                .iter()
                .map(|&w| {
                    acc = 0.995 * acc + w;
                    acc
                })
                .collect()
        }
    };
    let p = power(&out);
    let g = 1.0 / p.sqrt();
    out.iter_mut().for_each(|x| *x *= g);
    Waveform::new(out, sample_rate)
}
