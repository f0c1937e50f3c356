//! Short-time Fourier transform with weighted overlap-add inversion.
//!
//! Frames are centered: the signal is padded with `window_len / 2` zeros on
//! the left, so frame `t` is centered on sample `t * hop`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};
use crate::numerics::ComplexMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_len: 1024,
            hop: 256,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        len.div_ceil(self.hop) + 1
    }

    pub fn window_values(&self) -> Vec<f64> {
        let n = self.window_len;
        match self.window {
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window_len < 2 || self.window_len % 2 != 0 || self.hop == 0 || self.hop > self.window_len {
            return Err(Error::InvalidInput(format!(
                "STFT window {} / hop {}",
                self.window_len, self.hop
            )));
        }
        Ok(())
    }

    /// Whether the squared window overlap-adds to a constant at this hop.
    pub fn satisfies_cola(&self) -> bool {
        if self.validate().is_err() || self.window_len % self.hop != 0 {
            return false;
        }
        let w = self.window_values();
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).map(|x| x * x).sum())
            .collect();
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        max > 0.0 && (max - min) <= 1e-9 * max
    }
}

/// Complex STFT coefficients, frames × bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: ComplexMatrix,
    pub config: StftConfig,
    pub sample_rate: u32,
    /// Length of the analysed signal, so inversion restores it exactly.
    pub signal_len: usize,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn bins(&self) -> usize {
        self.values.cols()
    }

    pub fn power(&self) -> crate::numerics::RealMatrix {
        self.values.map(|c| c.norm_sqr())
    }

    /// Same geometry, new coefficients.
    pub fn with_values(&self, values: ComplexMatrix) -> Result<Self> {
        self.values.ensure_same_shape(&values, "ComplexSpectrogram::with_values")?;
        Ok(ComplexSpectrogram {
            values,
            config: self.config,
            sample_rate: self.sample_rate,
            signal_len: self.signal_len,
        })
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

pub fn stft(w: &Waveform, config: &StftConfig) -> Result<ComplexSpectrogram> {
    config.validate()?;
    let n = config.window_len;
    if w.samples.len() < n {
        return Err(Error::InvalidInput(format!(
            "signal of {} samples is shorter than one {n}-sample window",
            w.samples.len()
        )));
    }
    let frames = config.frames_for(w.samples.len());
    let bins = config.bins();
    let window = config.window_values();
    let fft = plan(n, false);
    let pad = n / 2;

    let mut values = ComplexMatrix::zeros(frames, bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..frames {
        let start = (t * config.hop) as isize - pad as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let x = if idx >= 0 && (idx as usize) < w.samples.len() {
                w.samples[idx as usize]
            } else {
                0.0
            };
            *b = Complex64::new(x * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        values.row_mut(t).copy_from_slice(&buf[..bins]);
    }
    Ok(ComplexSpectrogram {
        values,
        config: *config,
        sample_rate: w.sample_rate,
        signal_len: w.samples.len(),
    })
}

/// Weighted overlap-add inverse of [`stft`].
pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    let config = &spec.config;
    if !config.satisfies_cola() {
        return Err(Error::InvalidInput(format!(
            "window {:?} of {} samples with hop {} does not overlap-add to a constant",
            config.window, config.window_len, config.hop
        )));
    }
    let n = config.window_len;
    let bins = config.bins();
    if spec.bins() != bins {
        return Err(Error::shape("istft", format!("{bins} bins"), spec.bins()));
    }
    let window = config.window_values();
    let ifft = plan(n, true);
    let pad = n / 2;
    let len = spec.signal_len;
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];

    for t in 0..spec.frames() {
        let row = spec.values.row(t);
        buf[..bins].copy_from_slice(row);
        // DC and Nyquist must be real for a real signal
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = row[k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = (t * config.hop) as isize - pad as isize;
        for i in 0..n {
            let idx = start + i as isize;
            if idx < 0 || idx as usize >= len {
                continue;
            }
            let idx = idx as usize;
            out[idx] += window[i] * buf[i].re / n as f64;
            norm[idx] += window[i] * window[i];
        }
    }
    for (x, s) in out.iter_mut().zip(&norm) {
        *x = if *s > 1e-10 { *x / s } else { 0.0 };
    }
    Waveform::new(out, spec.sample_rate)
}
