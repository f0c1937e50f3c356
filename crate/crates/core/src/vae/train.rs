//! Single-sample reparameterized ELBO training of a [`VaeModel`].
//!
//! Per frame the negative ELBO (up to additive constants) is
//! `sum_f [log sigma_f^2(z) + p_f / sigma_f^2(z)] + KL(q(z|s,v) || p(z|v))`
//! with `z = mu + exp(logvar / 2) * eps`, i.e. the Itakura-Saito form of the
//! complex-Gaussian likelihood.

use serde::{Deserialize, Serialize};

use super::mlp::MlpCache;
use super::model::{VaeModel, LOG_POWER_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamState, RealMatrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fit input standardization and the decoder output bias to the data
    /// before the first step.
    pub calibrate: bool,
    /// Feed the encoder noisy versions of the training frames; the decoder
    /// still reconstructs the clean frame.
    pub encoder_noise: Option<EncoderNoise>,
}

/// Additive colored noise on encoder inputs during training.
///
/// The noise spectrum is `(f + 1)^(-slope)` with `slope ~ U(0, 2)` (white to
/// brown), scaled to a level drawn uniformly in dB relative to the mean frame
/// power of the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderNoise {
    /// Chance that a given training frame is corrupted.
    pub probability: f64,
    pub min_snr_db: f64,
    pub max_snr_db: f64,
}

impl Default for EncoderNoise {
    fn default() -> Self {
        EncoderNoise {
            probability: 0.8,
            min_snr_db: -5.0,
            max_snr_db: 20.0,
        }
    }
}

impl EncoderNoise {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) || !(self.min_snr_db <= self.max_snr_db) {
            return Err(Error::InvalidInput(format!("encoder noise {self:?}")));
        }
        Ok(())
    }

    /// Writes `|sqrt(p) + n|^2` into `out`, `n` circular complex Gaussian.
    fn corrupt(&self, power: &[f64], mean_power: f64, rng: &mut Rng, out: &mut [f64]) {
        let slope = rng.uniform(0.0, 2.0);
        let snr = rng.uniform(self.min_snr_db, self.max_snr_db);
        let shape: Vec<f64> = (0..power.len()).map(|f| ((f + 1) as f64).powf(-slope)).collect();
        let norm = shape.iter().sum::<f64>() / power.len() as f64;
        let level = mean_power * 10f64.powf(-snr / 10.0) / norm;
        for ((o, &p), s) in out.iter_mut().zip(power).zip(&shape) {
            let sd = (0.5 * level * s).sqrt();
            let (re, im) = (p.sqrt() + sd * rng.standard_normal(), sd * rng.standard_normal());
            *o = re * re + im * im;
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            calibrate: true,
            encoder_noise: None,
        }
    }
}

/// Clean training frames: power spectra (`N x F`) and, optionally, aligned
/// visual vectors (`N x V`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub power: RealMatrix,
    pub visual: Option<RealMatrix>,
}

impl TrainingSet {
    pub fn new(power: RealMatrix, visual: Option<RealMatrix>) -> Result<Self> {
        if power.rows() == 0 {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        if let Some(v) = &visual {
            if v.rows() != power.rows() {
                return Err(Error::shape("TrainingSet visual rows", power.rows(), v.rows()));
            }
        }
        Ok(TrainingSet { power, visual })
    }

    pub fn len(&self) -> usize {
        self.power.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.power.rows() == 0
    }

    fn visual(&self, i: usize) -> Option<&[f64]> {
        self.visual.as_ref().map(|v| v.row(i))
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: VaeModel,
    /// Negative ELBO per frame on the whole set with frozen noise draws;
    /// entry 0 is before training, entry `k` after epoch `k`.
    pub loss_curve: Vec<f64>,
}

/// Gradient buffers matching the three networks of a model.
#[derive(Debug, Clone)]
pub struct VaeGrads {
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
    pub prior: Vec<f64>,
}

impl VaeGrads {
    pub fn zeros(model: &VaeModel) -> Self {
        VaeGrads {
            encoder: vec![0.0; model.encoder.params().len()],
            decoder: vec![0.0; model.decoder.params().len()],
            prior: vec![0.0; model.prior.as_ref().map_or(0, |p| p.params().len())],
        }
    }

    fn clear(&mut self) {
        for g in [&mut self.encoder, &mut self.decoder, &mut self.prior] {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn scale(&mut self, k: f64) {
        for g in [&mut self.encoder, &mut self.decoder, &mut self.prior] {
            g.iter_mut().for_each(|x| *x *= k);
        }
    }
}

/// Reusable forward caches for [`frame_loss`].
#[derive(Debug, Default)]
pub struct FrameWorkspace {
    enc: MlpCache,
    dec: MlpCache,
    prior: MlpCache,
}

/// Closed-form `KL(N(mu, e^lv) || N(xi, e^llam))` summed over dimensions.
pub fn gaussian_kl(mu: &[f64], log_var: &[f64], prior_mu: &[f64], prior_log_var: &[f64]) -> f64 {
    mu.iter()
        .zip(log_var)
        .zip(prior_mu.iter().zip(prior_log_var))
        .map(|((&m, &lv), (&xi, &ll))| 0.5 * (ll - lv + ((lv).exp() + (m - xi).powi(2)) * (-ll).exp() - 1.0))
        .sum()
}

/// Negative ELBO of one frame for a given noise draw `eps`, accumulating
/// parameter gradients into `grads` when provided.
pub fn frame_loss(
    model: &VaeModel,
    power: &[f64],
    visual: Option<&[f64]>,
    eps: &[f64],
    ws: &mut FrameWorkspace,
    grads: Option<&mut VaeGrads>,
) -> Result<f64> {
    frame_loss_from(model, power, power, visual, eps, ws, grads)
}

/// [`frame_loss`] with the encoder reading `encoder_power` instead of the
/// reconstructed frame `power`.
pub fn frame_loss_from(
    model: &VaeModel,
    power: &[f64],
    encoder_power: &[f64],
    visual: Option<&[f64]>,
    eps: &[f64],
    ws: &mut FrameWorkspace,
    grads: Option<&mut VaeGrads>,
) -> Result<f64> {
    let l = model.latent_dim;
    if eps.len() != l {
        return Err(Error::shape("frame_loss eps", l, eps.len()));
    }
    if encoder_power.len() != power.len() {
        return Err(Error::shape("frame_loss encoder input", power.len(), encoder_power.len()));
    }
    let enc_in = model.encoder_input(encoder_power, visual)?;
    model.encoder.forward_cached(&enc_in, &mut ws.enc)?;
    let (mu, lv) = ws.enc.output().split_at(l);
    let std: Vec<f64> = lv.iter().map(|v| (0.5 * v).exp()).collect();
    let z: Vec<f64> = mu.iter().zip(&std).zip(eps).map(|((m, s), e)| m + s * e).collect();

    let dec_in = model.decoder_input(&z, visual)?;
    model.decoder.forward_cached(&dec_in, &mut ws.dec)?;
    let log_s = ws.dec.output();
    let mut rec = 0.0;
    for (&ls, &p) in log_s.iter().zip(power) {
        rec += ls + p * (-ls).exp();
    }

    let (xi, llam) = match (&model.prior, model.visual_input(visual)?) {
        (Some(net), Some(v)) => {
            net.forward_cached(v, &mut ws.prior)?;
            let o = ws.prior.output();
            (o[..l].to_vec(), o[l..].to_vec())
        }
        _ => (vec![0.0; l], vec![0.0; l]),
    };
    let kl = gaussian_kl(mu, lv, &xi, &llam);
    let loss = rec + kl;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("ELBO of model {}", model.id)));
    }

    if let Some(g) = grads {
        let g_log: Vec<f64> = log_s.iter().zip(power).map(|(&ls, &p)| 1.0 - p * (-ls).exp()).collect();
        let g_dec_in = model.decoder.backward(&ws.dec, &g_log, Some(&mut g.decoder));
        let g_z = &g_dec_in[..l];

        let mut g_enc = vec![0.0; 2 * l];
        let mut g_prior = vec![0.0; 2 * l];
        for j in 0..l {
            let inv_lam = (-llam[j]).exp();
            let diff = mu[j] - xi[j];
            g_enc[j] = g_z[j] + diff * inv_lam;
            g_enc[l + j] = g_z[j] * eps[j] * 0.5 * std[j] + 0.5 * (lv[j].exp() * inv_lam - 1.0);
            g_prior[j] = -diff * inv_lam;
            g_prior[l + j] = 0.5 * (1.0 - (lv[j].exp() + diff * diff) * inv_lam);
        }
        model.encoder.accumulate_param_grads(&ws.enc, &g_enc, &mut g.encoder);
        if let Some(net) = &model.prior {
            net.accumulate_param_grads(&ws.prior, &g_prior, &mut g.prior);
        }
    }
    Ok(loss)
}

/// Standardizes encoder inputs per bin and sets the decoder output bias to
/// the log of the mean power per bin.
pub fn calibrate(model: &mut VaeModel, data: &TrainingSet) -> Result<()> {
    let (n, f) = data.power.shape();
    if f != model.freq_bins {
        return Err(Error::shape("calibrate", model.freq_bins, f));
    }
    let mut mean_log = vec![0.0; f];
    let mut mean_pow = vec![0.0; f];
    for row in data.power.rows_iter() {
        for k in 0..f {
            mean_log[k] += (row[k] + LOG_POWER_FLOOR).ln();
            mean_pow[k] += row[k];
        }
    }
    mean_log.iter_mut().for_each(|x| *x /= n as f64);
    mean_pow.iter_mut().for_each(|x| *x /= n as f64);
    let mut var_log = vec![0.0; f];
    for row in data.power.rows_iter() {
        for k in 0..f {
            var_log[k] += ((row[k] + LOG_POWER_FLOOR).ln() - mean_log[k]).powi(2);
        }
    }
    model.input_shift = mean_log;
    model.input_scale = var_log.iter().map(|v| (v / n as f64).sqrt().max(1e-3)).collect();
    let (_, bias) = model.decoder.output_layer_mut();
    for (b, p) in bias.iter_mut().zip(&mean_pow) {
        *b = (p + LOG_POWER_FLOOR).ln();
    }
    Ok(())
}

fn eval_eps(seed: u64, frame: usize, l: usize) -> Vec<f64> {
    let mut r = Rng::substream(seed, &[0xe7a1, frame as u64]);
    let mut e = vec![0.0; l];
    r.fill_standard_normal(&mut e);
    e
}

/// Mean per-frame negative ELBO over the whole set with noise draws fixed by `seed`.
pub fn dataset_loss(model: &VaeModel, data: &TrainingSet, seed: u64) -> Result<f64> {
    let mut ws = FrameWorkspace::default();
    let mut total = 0.0;
    for i in 0..data.len() {
        let eps = eval_eps(seed, i, model.latent_dim);
        total += frame_loss(model, data.power.row(i), data.visual(i), &eps, &mut ws, None)?;
    }
    Ok(total / data.len() as f64)
}

pub fn train_vae(mut model: VaeModel, data: &TrainingSet, cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainReport> {
    if data.power.cols() != model.freq_bins {
        return Err(Error::shape("train_vae spectra", model.freq_bins, data.power.cols()));
    }
    if model.kind == super::ModelKind::AudioVisual && data.visual.is_none() {
        return Err(Error::InvalidInput("audio-visual model needs visual training data".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    if let Some(n) = &cfg.encoder_noise {
        n.validate()?;
    }
    if cfg.calibrate {
        calibrate(&mut model, data)?;
    }
    let mean_power = data.power.mean();
    let mut noisy = vec![0.0; data.power.cols()];
    let eval_seed = rand::RngCore::next_u64(rng);
    let mut curve = vec![dataset_loss(&model, data, eval_seed)?];
    log::info!("model {} ({}): initial loss {:.4}", model.id, model.kind.name(), curve[0]);

    let mut opt_enc = AdamState::new(model.encoder.params().len(), cfg.learning_rate)?;
    let mut opt_dec = AdamState::new(model.decoder.params().len(), cfg.learning_rate)?;
    let mut opt_prior = AdamState::new(model.prior.as_ref().map_or(0, |p| p.params().len()), cfg.learning_rate)?;
    let mut grads = VaeGrads::zeros(&model);
    let mut ws = FrameWorkspace::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut eps = vec![0.0; model.latent_dim];

    for epoch in 1..=cfg.epochs {
        // Fisher-Yates
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                rng.fill_standard_normal(&mut eps);
                let clean = data.power.row(i);
                let enc = match &cfg.encoder_noise {
                    Some(n) if rng.uniform(0.0, 1.0) < n.probability => {
                        n.corrupt(clean, mean_power, rng, &mut noisy);
                        &noisy[..]
                    }
                    _ => clean,
                };
                frame_loss_from(&model, clean, enc, data.visual(i), &eps, &mut ws, Some(&mut grads)).map_err(
                    |e| match e {
                        Error::NonFinite(_) => Error::Diverged {
                            epoch,
                            loss: f64::NAN,
                        },
                        other => other,
                    },
                )?;
            }
            grads.scale(1.0 / batch.len() as f64);
            let step_err = |e: Error| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                },
                other => other,
            };
            adam_step(model.encoder.params_mut(), &grads.encoder, &mut opt_enc).map_err(step_err)?;
            adam_step(model.decoder.params_mut(), &grads.decoder, &mut opt_dec).map_err(step_err)?;
            if let Some(p) = model.prior.as_mut() {
                adam_step(p.params_mut(), &grads.prior, &mut opt_prior).map_err(step_err)?;
            }
        }
        let loss = dataset_loss(&model, data, eval_seed).map_err(|_| Error::Diverged { epoch, loss: f64::NAN })?;
        log::info!("model {} epoch {epoch}: loss {loss:.4}", model.id);
        curve.push(loss);
    }
    Ok(TrainReport {
        model,
        loss_curve: curve,
    })
}
