use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, MlpCache};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Floor inside the log-compression of encoder inputs.
pub const LOG_POWER_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Standard-normal latent prior; the decoder sees only `z`.
    AudioOnly,
    /// Visual-conditioned prior `N(xi(v), Lambda(v))`; the decoder sees `(z, v)`.
    AudioVisual,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::AudioOnly => "a-vae",
            ModelKind::AudioVisual => "av-vae",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeArch {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for VaeArch {
    fn default() -> Self {
        VaeArch {
            latent_dim: 16,
            hidden: vec![128],
            activation: Activation::Tanh,
        }
    }
}

/// One generative model of clean-speech frames: encoder, decoder and, for
/// the audio-visual kind, a prior network over the latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub id: u32,
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub freq_bins: usize,
    pub visual_dim: usize,
    /// Per-bin standardization of log-power encoder inputs.
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Input `[log-power features, v?]`, output `[mean, log-variance]` of `z`.
    pub encoder: Mlp,
    /// Input `[z, v?]`, output per-bin log-variance of the speech coefficients.
    pub decoder: Mlp,
    /// Input `v`, output `[xi, log Lambda]`; absent for the audio-only kind.
    pub prior: Option<Mlp>,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

impl VaeModel {
    pub fn new(
        id: u32,
        kind: ModelKind,
        arch: &VaeArch,
        freq_bins: usize,
        visual_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if arch.latent_dim == 0 || freq_bins == 0 {
            return Err(Error::InvalidInput("latent and frequency dimensions must be positive".into()));
        }
        let v = match kind {
            ModelKind::AudioOnly => 0,
            ModelKind::AudioVisual => {
                if visual_dim == 0 {
                    return Err(Error::InvalidInput("audio-visual model needs visual_dim > 0".into()));
                }
                visual_dim
            }
        };
        let l = arch.latent_dim;
        let encoder = Mlp::new(&sizes(freq_bins + v, &arch.hidden, 2 * l), arch.activation, rng)?;
        let decoder = Mlp::new(&sizes(l + v, &arch.hidden, freq_bins), arch.activation, rng)?;
        let prior = match kind {
            ModelKind::AudioOnly => None,
            ModelKind::AudioVisual => {
                let mut p = Mlp::new(&sizes(v, &arch.hidden, 2 * l), arch.activation, rng)?;
                // start at the standard-normal prior
                let (w, b) = p.output_layer_mut();
                w.iter_mut().for_each(|x| *x *= 0.1);
                b.iter_mut().for_each(|x| *x = 0.0);
                Some(p)
            }
        };
        Ok(VaeModel {
            id,
            kind,
            latent_dim: l,
            freq_bins,
            visual_dim: v,
            input_shift: vec![0.0; freq_bins],
            input_scale: vec![1.0; freq_bins],
            encoder,
            decoder,
            prior,
        })
    }

    /// The visual vector this model consumes, validated, or `None` for audio-only.
    pub fn visual_input<'a>(&self, visual: Option<&'a [f64]>) -> Result<Option<&'a [f64]>> {
        match self.kind {
            ModelKind::AudioOnly => Ok(None),
            ModelKind::AudioVisual => match visual {
                Some(v) if v.len() == self.visual_dim => Ok(Some(v)),
                Some(v) => Err(Error::shape("visual input", self.visual_dim, v.len())),
                None => Err(Error::InvalidInput(format!(
                    "model {} is audio-visual and needs a visual vector",
                    self.id
                ))),
            },
        }
    }

    pub(crate) fn encoder_input(&self, power: &[f64], visual: Option<&[f64]>) -> Result<Vec<f64>> {
        if power.len() != self.freq_bins {
            return Err(Error::shape("encoder power spectrum", self.freq_bins, power.len()));
        }
        if power.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput("power spectrum must be finite and nonnegative".into()));
        }
        let v = self.visual_input(visual)?;
        let mut x: Vec<f64> = power
            .iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(&p, (&s, &k))| ((p + LOG_POWER_FLOOR).ln() - s) / k)
            .collect();
        if let Some(v) = v {
            x.extend_from_slice(v);
        }
        Ok(x)
    }

    pub(crate) fn decoder_input(&self, z: &[f64], visual: Option<&[f64]>) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim {
            return Err(Error::shape("latent vector", self.latent_dim, z.len()));
        }
        let v = self.visual_input(visual)?;
        let mut x = z.to_vec();
        if let Some(v) = v {
            x.extend_from_slice(v);
        }
        Ok(x)
    }

    /// Mean and log-variance of the approximate posterior of `z` given a
    /// power spectrum `|s|^2` (and the visual vector for audio-visual models).
    pub fn encode(&self, power: &[f64], visual: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.encoder.forward(&self.encoder_input(power, visual)?)?;
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("encoder output of model {}", self.id)));
        }
        let (m, lv) = out.split_at(self.latent_dim);
        Ok((m.to_vec(), lv.to_vec()))
    }

    /// Mean and log-variance of the latent prior.
    pub fn prior_params(&self, visual: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>)> {
        let l = self.latent_dim;
        match (&self.prior, self.visual_input(visual)?) {
            (Some(net), Some(v)) => {
                let out = net.forward(v)?;
                if out.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("prior output of model {}", self.id)));
                }
                Ok((out[..l].to_vec(), out[l..].to_vec()))
            }
            _ => Ok((vec![0.0; l], vec![0.0; l])),
        }
    }

    /// Per-bin variance `exp(decoder(z, v))` of the speech coefficients.
    pub fn decode_variance(&self, z: &[f64], visual: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut cache = MlpCache::default();
        self.decode_cached(z, visual, &mut cache)
    }

    pub(crate) fn decode_cached(&self, z: &[f64], visual: Option<&[f64]>, cache: &mut MlpCache) -> Result<Vec<f64>> {
        let input = self.decoder_input(z, visual)?;
        self.decoder.forward_cached(&input, cache)?;
        exp_positive(cache.output(), self.id)
    }

    /// Decoder variance plus a vector-Jacobian product back to `z`.
    pub fn decode_variance_grad_z(&self, z: &[f64], visual: Option<&[f64]>) -> Result<DecoderJacobian<'_>> {
        let mut cache = MlpCache::default();
        let variance = self.decode_cached(z, visual, &mut cache)?;
        Ok(DecoderJacobian {
            model: self,
            cache,
            variance,
        })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.params().len() + self.decoder.params().len() + self.prior.as_ref().map_or(0, |p| p.params().len())
    }
}

fn exp_positive(log_var: &[f64], id: u32) -> Result<Vec<f64>> {
    let out: Vec<f64> = log_var.iter().map(|l| l.exp()).collect();
    if let Some(f) = out.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::NonFinite(format!(
            "decoder variance of model {id} at bin {f} (log-variance {})",
            log_var[f]
        )));
    }
    Ok(out)
}

/// Decoder evaluation at a fixed `z` that can pull gradients back to `z`.
pub struct DecoderJacobian<'a> {
    model: &'a VaeModel,
    cache: MlpCache,
    variance: Vec<f64>,
}

impl DecoderJacobian<'_> {
    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    /// `dLoss/dz` given `upstream = dLoss/dvariance`.
    pub fn vjp(&self, upstream: &[f64]) -> Vec<f64> {
        let grad_log: Vec<f64> = upstream.iter().zip(&self.variance).map(|(u, s)| u * s).collect();
        self.vjp_log(&grad_log)
    }

    /// `dLoss/dz` given `dLoss/dlog-variance`.
    pub fn vjp_log(&self, grad_log_variance: &[f64]) -> Vec<f64> {
        let mut g = self.model.decoder.backward(&self.cache, grad_log_variance, None);
        g.truncate(self.model.latent_dim);
        g
    }
}
