//! Piecewise-stationary synthetic "speech" with aligned visual embeddings.
//!
//! Even regimes are voiced: a harmonic series with a random pitch glide shaped
//! by two formant resonances and a spectral tilt. Odd regimes are unvoiced:
//! white noise through a high-frequency two-pole resonator. Higher regime
//! indices shift the parameter ranges of their family upwards, so every
//! regime has its own spectral signature.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{stft, StftConfig, VisualSequence, Waveform};
use crate::error::{Error, Result};
use crate::numerics::{RealMatrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub visual_dim: usize,
    /// Standard deviation of the per-frame jitter on visual embeddings.
    pub visual_noise: f64,
    pub min_segment_secs: f64,
    pub max_segment_secs: f64,
    /// RMS level of the generated utterance.
    pub rms: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate: 16_000,
            visual_dim: 8,
            visual_noise: 0.1,
            min_segment_secs: 0.08,
            max_segment_secs: 0.2,
            rms: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanUtterance {
    pub waveform: Waveform,
    pub visual: VisualSequence,
    /// Regime index per STFT frame.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Voiced {
        f0_start: f64,
        f0_end: f64,
        formants: [f64; 2],
        vibrato: Modulation,
    },
    Unvoiced {
        center: f64,
        bandwidth: f64,
    },
}

/// Sinusoidal modulation `1 + depth * sin(2 pi rate t + phase)`.
#[derive(Debug, Clone, Copy)]
struct Modulation {
    depth: f64,
    rate: f64,
    phase: f64,
}

impl Modulation {
    fn draw(depth: (f64, f64), rate: (f64, f64), rng: &mut Rng) -> Self {
        Modulation {
            depth: rng.uniform(depth.0, depth.1),
            rate: rng.uniform(rate.0, rate.1),
            phase: rng.uniform(0.0, 2.0 * PI),
        }
    }

    fn at(&self, secs: f64) -> f64 {
        1.0 + self.depth * (2.0 * PI * self.rate * secs + self.phase).sin()
    }
}

#[derive(Debug, Clone, Copy)]
struct SegmentPlan {
    regime: usize,
    start: usize,
    len: usize,
    gain: f64,
    /// Syllable-rate amplitude envelope.
    envelope: Modulation,
    kind: Segment,
}

fn draw_segment(regime: usize, rng: &mut Rng) -> Segment {
    let shift = (regime / 2) as f64;
    if regime % 2 == 0 {
        let f0 = rng.uniform(100.0, 220.0) * (1.0 + 0.5 * shift);
        Segment::Voiced {
            f0_start: f0,
            f0_end: f0 * rng.uniform(0.92, 1.08),
            formants: [
                rng.uniform(300.0, 900.0) * (1.0 + 0.3 * shift),
                rng.uniform(1000.0, 2500.0) * (1.0 + 0.3 * shift),
            ],
            vibrato: Modulation::draw((0.04, 0.1), (3.0, 6.0), rng),
        }
    } else {
        Segment::Unvoiced {
            center: (rng.uniform(2500.0, 6000.0) + 500.0 * shift).min(7000.0),
            bandwidth: rng.uniform(600.0, 1500.0),
        }
    }
}

fn voiced_envelope(f: f64, formants: &[f64; 2]) -> f64 {
    let tilt = 1.0 / (1.0 + (f / 500.0).powi(2)).sqrt();
    let res: f64 = formants
        .iter()
        .zip([1.0, 0.6])
        .map(|(&fc, g)| g / (1.0 + ((f - fc) / 150.0).powi(2)))
        .sum();
    tilt * (res + 0.05)
}

fn render(seg: &SegmentPlan, sample_rate: u32, rng: &mut Rng) -> Vec<f64> {
    let sr = sample_rate as f64;
    let n = seg.len;
    let mut out = match seg.kind {
        Segment::Voiced {
            f0_start,
            f0_end,
            formants,
            vibrato,
        } => {
            let f0_mid = 0.5 * (f0_start + f0_end);
            let f0_max = f0_start.max(f0_end) * (1.0 + vibrato.depth);
            let harmonics = ((0.45 * sr) / f0_max).floor() as usize;
            let amps: Vec<f64> = (1..=harmonics)
                .map(|h| voiced_envelope(h as f64 * f0_mid, &formants))
                .collect();
            let phases: Vec<f64> = (0..harmonics).map(|_| rng.uniform(0.0, 2.0 * PI)).collect();
            let mut phase = 0.0;
            let mut y = vec![0.0; n];
            for (i, yi) in y.iter_mut().enumerate() {
                let f0 = (f0_start + (f0_end - f0_start) * i as f64 / n as f64) * vibrato.at(i as f64 / sr);
                phase += 2.0 * PI * f0 / sr;
                *yi = amps
                    .iter()
                    .zip(&phases)
                    .enumerate()
                    .map(|(h, (a, p))| a * ((h + 1) as f64 * phase + p).sin())
                    .sum();
            }
            y
        }
        Segment::Unvoiced { center, bandwidth } => {
            let r = (-PI * bandwidth / sr).exp();
            let theta = 2.0 * PI * center / sr;
            let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
            let (mut y1, mut y2, mut xprev) = (0.0, 0.0, 0.0);
            (0..n)
                .map(|_| {
                    let x = rng.standard_normal();
                    // first difference removes the low-frequency skirt
                    let y = (x - xprev) + a1 * y1 + a2 * y2;
                    xprev = x;
                    y2 = y1;
                    y1 = y;
                    y
                })
                .collect()
        }
    };
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / n.max(1) as f64).sqrt();
    let g = if rms > 0.0 { seg.gain / rms } else { 0.0 };
    // 5 ms raised-cosine fades at both ends
    let fade = ((0.005 * sr) as usize).min(n / 2);
    for (i, x) in out.iter_mut().enumerate() {
        let edge = i.min(n - 1 - i);
        let w = if edge < fade {
            0.5 - 0.5 * (PI * edge as f64 / fade as f64).cos()
        } else {
            1.0
        };
        *x *= g * w * seg.envelope.at(i as f64 / sr);
    }
    out
}

fn visual_features(seg: &SegmentPlan, regimes: usize) -> [f64; 8] {
    let mut f = [0.0; 8];
    f[0] = if regimes > 1 {
        2.0 * seg.regime as f64 / (regimes - 1) as f64 - 1.0
    } else {
        0.0
    };
    match seg.kind {
        Segment::Voiced {
            f0_start,
            f0_end,
            formants,
            ..
        } => {
            f[1] = 1.0;
            f[2] = (0.5 * (f0_start + f0_end) - 160.0) / 60.0;
            f[3] = (formants[0] - 600.0) / 300.0;
            f[4] = (formants[1] - 1750.0) / 750.0;
        }
        Segment::Unvoiced { center, bandwidth } => {
            f[1] = -1.0;
            f[5] = (center - 4250.0) / 1750.0;
            f[6] = (bandwidth - 1050.0) / 450.0;
        }
    }
    f[7] = seg.gain.ln() / 0.55;
    f
}

/// Generates one clean utterance of `duration` seconds switching between
/// `regimes` spectrally distinct sources, plus per-frame visual embeddings
/// and regime labels aligned with `stft_config` frames.
pub fn synth_clean(
    regimes: usize,
    duration: f64,
    cfg: &SynthConfig,
    stft_config: &StftConfig,
    rng: &mut Rng,
) -> Result<CleanUtterance> {
    if regimes == 0 {
        return Err(Error::InvalidInput("need at least one regime".into()));
    }
    if !(duration > 0.0) || cfg.min_segment_secs <= 0.0 || cfg.max_segment_secs < cfg.min_segment_secs {
        return Err(Error::InvalidInput(format!(
            "duration {duration}s with segments {}..{}s",
            cfg.min_segment_secs, cfg.max_segment_secs
        )));
    }
    let sr = cfg.sample_rate;
    let total = (duration * sr as f64).round() as usize;
    if total < stft_config.window_len {
        return Err(Error::InvalidInput(format!(
            "{duration}s is shorter than one analysis window"
        )));
    }

    let mut plans = Vec::new();
    let mut pos = 0;
    let mut regime = rng.below(regimes);
    while pos < total {
        let len = (rng.uniform(cfg.min_segment_secs, cfg.max_segment_secs) * sr as f64) as usize;
        let len = len.clamp(1, total - pos);
        plans.push(SegmentPlan {
            regime,
            start: pos,
            len,
            gain: rng.uniform(0.5f64.ln(), 1.5f64.ln()).exp(),
            envelope: Modulation::draw((0.4, 0.7), (3.0, 7.0), rng),
            kind: draw_segment(regime, rng),
        });
        pos += len;
        if regimes > 1 {
            regime = (regime + 1 + rng.below(regimes - 1)) % regimes;
        }
    }

    let mut samples = Vec::with_capacity(total);
    for p in &plans {
        samples.extend(render(p, sr, rng));
    }
    let rms = (samples.iter().map(|x| x * x).sum::<f64>() / total as f64).sqrt();
    let mut scale = cfg.rms / rms;
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs())) * scale;
    if peak > 0.95 {
        scale *= 0.95 / peak;
    }
    samples.iter_mut().for_each(|x| *x *= scale);
    let waveform = Waveform::new(samples, sr)?;

    // frame t is centred on sample t * hop
    let frames = stft_config.frames_for(total);
    let segment_at = |sample: usize| -> &SegmentPlan {
        let s = sample.min(total - 1);
        plans
            .iter()
            .find(|p| s >= p.start && s < p.start + p.len)
            .expect("segments tile the signal")
    };
    let labels: Vec<usize> = (0..frames).map(|t| segment_at(t * stft_config.hop).regime).collect();
    let mut visual = RealMatrix::zeros(frames, cfg.visual_dim);
    for t in 0..frames {
        let f = visual_features(segment_at(t * stft_config.hop), regimes);
        for (i, v) in visual.row_mut(t).iter_mut().enumerate() {
            *v = f.get(i).copied().unwrap_or(0.0) + cfg.visual_noise * rng.standard_normal();
        }
    }
    Ok(CleanUtterance {
        waveform,
        visual: VisualSequence::new(visual)?,
        labels,
    })
}

/// Power-weighted mean frequency of each STFT frame, in Hz.
pub fn spectral_centroids(w: &Waveform, stft_config: &StftConfig) -> Result<Vec<f64>> {
    let spec = stft(w, stft_config)?;
    let hz_per_bin = w.sample_rate as f64 / stft_config.window_len as f64;
    Ok(spec
        .values
        .rows_iter()
        .map(|row| {
            let p: f64 = row.iter().map(|c| c.norm_sqr()).sum();
            let m: f64 = row.iter().enumerate().map(|(k, c)| k as f64 * c.norm_sqr()).sum();
            if p > 0.0 {
                hz_per_bin * m / p
            } else {
                0.0
            }
        })
        .collect())
}
