//! Variational posterior over all frames and models, and the state-level
//! E-z, E-s, E-m and M steps.

use super::steps::{decoder_moments, e_s_step, e_z_objective, g_t, EzFrame, GtFrame};
use super::EnhancerConfig;
use crate::error::{Error, Result};
use crate::hmm::{forward_backward, update_hmm, HmmParams, SwitchPosterior};
use crate::nmf::{is_divergence, posterior_power, update_h, update_w, NmfState};
use crate::numerics::{adam_step, AdamState, ComplexMatrix, RealMatrix, Rng};
use crate::signal::{ComplexSpectrogram, VisualSequence};
use crate::vae::VaeModel;

/// Substream tags keeping every random draw addressable by `(stage, iteration, t, m)`.
const STREAM_INIT: u64 = 0;
const STREAM_EZ: u64 = 1;
const STREAM_REFRESH: u64 = 2;

/// Posterior quantities of one model across all frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPosterior {
    /// `c`, `T x L`.
    pub latent_mean: RealMatrix,
    /// Log of the diagonal of `Omega`, `T x L`.
    pub latent_log_var: RealMatrix,
    /// Latent prior `xi(v_t)` and `log Lambda(v_t)`, `T x L`.
    pub prior_mean: RealMatrix,
    pub prior_log_var: RealMatrix,
    /// `D` cached latent samples per frame, `T x (D * L)`.
    pub samples: RealMatrix,
    /// Harmonic-mean decoder variance, `T x F`.
    pub gamma: RealMatrix,
    /// Mean decoder log-variance over the samples, `T x F`.
    pub mean_log_variance: RealMatrix,
    /// Wiener mean and variance, `T x F`.
    pub eta: ComplexMatrix,
    pub nu: RealMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub models: Vec<ModelPosterior>,
    pub switch: SwitchPosterior,
    /// `(WH)ᵀ` as of the last E-s step, `T x F`.
    pub noise_var: RealMatrix,
    /// Bins found violating `|eta| <= |x|`, `0 < nu <= min(gamma, WH)`.
    pub shrinkage_violations: usize,
}

impl PosteriorState {
    pub fn frames(&self) -> usize {
        self.switch.frames()
    }

    /// `s_t = sum_m r(m_t = m) eta_t^m`.
    pub fn speech_estimate(&self) -> ComplexMatrix {
        let (t_len, f_len) = self.models[0].eta.shape();
        let mut out = ComplexMatrix::zeros(t_len, f_len);
        for t in 0..t_len {
            let row = out.row_mut(t);
            for (m, mp) in self.models.iter().enumerate() {
                let r = self.switch.marginals[(t, m)];
                for (o, e) in row.iter_mut().zip(mp.eta.row(t)) {
                    *o += e * r;
                }
            }
        }
        out
    }
}

/// The fixed inputs of one enhancement run.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub x: &'a ComplexSpectrogram,
    pub visual: Option<&'a VisualSequence>,
    pub models: &'a [VaeModel],
}

impl Problem<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::InvalidInput("at least one speech model is required".into()));
        }
        let (t_len, f_len) = self.x.values.shape();
        for m in self.models {
            if m.freq_bins != f_len {
                return Err(Error::shape("model frequency bins", f_len, m.freq_bins));
            }
        }
        if let Some(v) = self.visual {
            if v.frames() != t_len {
                return Err(Error::shape("visual frames", t_len, v.frames()));
            }
        }
        for m in self.models {
            // surfaces a missing or mis-sized visual stream before any work
            m.visual_input(self.visual_frame(0))?;
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.x.frames()
    }

    pub fn visual_frame(&self, t: usize) -> Option<&[f64]> {
        self.visual.map(|v| v.frame(t))
    }
}

fn draw_samples(mean: &[f64], log_var: &[f64], d: usize, rng: &mut Rng, out: &mut [f64]) {
    let l = mean.len();
    for chunk in out.chunks_exact_mut(l).take(d) {
        for j in 0..l {
            chunk[j] = mean[j] + (0.5 * log_var[j]).exp() * rng.standard_normal();
        }
    }
}

/// Encoder-based initialization: `(c, Omega)` from each encoder applied to
/// `(|x_t|^2, v_t)`, `D` samples, `gamma`, the Wiener posterior under the
/// initial noise model, and a uniform switch posterior.
pub fn init_posterior(problem: &Problem<'_>, nmf: &NmfState, cfg: &EnhancerConfig) -> Result<PosteriorState> {
    problem.validate()?;
    cfg.validate()?;
    let (t_len, f_len) = problem.x.values.shape();
    if nmf.w.rows() != f_len || nmf.h.cols() != t_len {
        return Err(Error::shape(
            "init_posterior NMF",
            format!("{f_len}x{t_len}"),
            format!("{}x{}", nmf.w.rows(), nmf.h.cols()),
        ));
    }
    let power = problem.x.power();
    let d = cfg.mc_samples;
    let mut models = Vec::with_capacity(problem.models.len());
    for (mi, model) in problem.models.iter().enumerate() {
        let l = model.latent_dim;
        let mut mp = ModelPosterior {
            latent_mean: RealMatrix::zeros(t_len, l),
            latent_log_var: RealMatrix::zeros(t_len, l),
            prior_mean: RealMatrix::zeros(t_len, l),
            prior_log_var: RealMatrix::zeros(t_len, l),
            samples: RealMatrix::zeros(t_len, d * l),
            gamma: RealMatrix::zeros(t_len, f_len),
            mean_log_variance: RealMatrix::zeros(t_len, f_len),
            eta: ComplexMatrix::zeros(t_len, f_len),
            nu: RealMatrix::zeros(t_len, f_len),
        };
        for t in 0..t_len {
            let v = problem.visual_frame(t);
            let (c, lw) = model.encode(power.row(t), v)?;
            let (xi, ll) = model.prior_params(v)?;
            mp.latent_mean.row_mut(t).copy_from_slice(&c);
            mp.latent_log_var.row_mut(t).copy_from_slice(&lw);
            mp.prior_mean.row_mut(t).copy_from_slice(&xi);
            mp.prior_log_var.row_mut(t).copy_from_slice(&ll);
            let mut rng = Rng::substream(cfg.seed, &[STREAM_INIT, 0, t as u64, mi as u64]);
            draw_samples(&c, &lw, d, &mut rng, mp.samples.row_mut(t));
        }
        models.push(mp);
    }
    let mut state = PosteriorState {
        models,
        switch: SwitchPosterior::uniform(t_len, problem.models.len()),
        noise_var: RealMatrix::zeros(t_len, f_len),
        shrinkage_violations: 0,
    };
    refresh_moments(&mut state, problem)?;
    e_s_update(&mut state, problem, nmf)?;
    Ok(state)
}

/// Recomputes `gamma` and the mean log-variance from the cached samples.
pub fn refresh_moments(state: &mut PosteriorState, problem: &Problem<'_>) -> Result<()> {
    for (mp, model) in state.models.iter_mut().zip(problem.models) {
        for t in 0..mp.samples.rows() {
            let mo = decoder_moments(model, mp.samples.row(t), problem.visual_frame(t))?;
            mp.gamma.row_mut(t).copy_from_slice(&mo.gamma);
            mp.mean_log_variance.row_mut(t).copy_from_slice(&mo.mean_log_variance);
        }
    }
    Ok(())
}

/// Latent update: `cfg.ez_iterations` Adam ascent steps per `(t, m)` on the
/// single-sample objective with a fresh noise draw per step, then a fresh
/// set of `D` samples from the updated posterior and new decoder moments.
pub fn e_z_step(state: &mut PosteriorState, problem: &Problem<'_>, cfg: &EnhancerConfig, iteration: usize) -> Result<()> {
    let t_len = problem.frames();
    for (mi, model) in problem.models.iter().enumerate() {
        let l = model.latent_dim;
        let mp = &mut state.models[mi];
        for t in 0..t_len {
            let weight = state.switch.marginals[(t, mi)];
            let v = problem.visual_frame(t);
            let key = [iteration as u64, t as u64, mi as u64];
            if weight >= cfg.weight_floor && cfg.ez_iterations > 0 {
                let frame = EzFrame {
                    model,
                    visual: v,
                    prior_mean: mp.prior_mean.row(t),
                    prior_log_var: mp.prior_log_var.row(t),
                    eta: mp.eta.row(t),
                    nu: mp.nu.row(t),
                    weight,
                };
                let mut params: Vec<f64> = mp.latent_mean.row(t).iter().chain(mp.latent_log_var.row(t)).copied().collect();
                let mut adam = AdamState::new(2 * l, cfg.ez_learning_rate)?;
                let mut rng = Rng::substream(cfg.seed, &[STREAM_EZ, key[0], key[1], key[2]]);
                let mut eps = vec![0.0; l];
                let mut grad = vec![0.0; 2 * l];
                for _ in 0..cfg.ez_iterations {
                    rng.fill_standard_normal(&mut eps);
                    let obj = e_z_objective(&frame, &params[..l], &params[l..], &eps).map_err(|e| Error::Numerical {
                        iteration,
                        what: e.to_string(),
                    })?;
                    // ascent on the objective
                    for (g, o) in grad.iter_mut().zip(obj.grad_mean.iter().chain(&obj.grad_log_var)) {
                        *g = -o;
                    }
                    adam_step(&mut params, &grad, &mut adam).map_err(|e| Error::Numerical {
                        iteration,
                        what: e.to_string(),
                    })?;
                }
                mp.latent_mean.row_mut(t).copy_from_slice(&params[..l]);
                mp.latent_log_var.row_mut(t).copy_from_slice(&params[l..]);
            }
            let mut rng = Rng::substream(cfg.seed, &[STREAM_REFRESH, key[0], key[1], key[2]]);
            let (c, lw) = (mp.latent_mean.row(t).to_vec(), mp.latent_log_var.row(t).to_vec());
            draw_samples(&c, &lw, cfg.mc_samples, &mut rng, mp.samples.row_mut(t));
        }
    }
    refresh_moments(state, problem)
}

/// Wiener update of every `(t, m)` under the current noise model, counting
/// shrinkage violations as it goes.
pub fn e_s_update(state: &mut PosteriorState, problem: &Problem<'_>, nmf: &NmfState) -> Result<()> {
    let wh = nmf.wh();
    if wh.shape() != (state.noise_var.cols(), state.noise_var.rows()) {
        return Err(Error::shape("E-s noise variance", format!("{:?}", state.noise_var.shape()), format!("{:?}", wh.shape())));
    }
    state.noise_var = wh.transpose();
    let x = &problem.x.values;
    for mp in &mut state.models {
        for t in 0..x.rows() {
            let n = state.noise_var.row(t);
            let (eta, nu) = e_s_step(x.row(t), mp.gamma.row(t), n)?;
            for f in 0..eta.len() {
                let ok = eta[f].norm() <= x[(t, f)].norm() && nu[f] > 0.0 && nu[f] <= mp.gamma[(t, f)].min(n[f]);
                if !ok {
                    state.shrinkage_violations += 1;
                }
            }
            mp.eta.row_mut(t).copy_from_slice(&eta);
            mp.nu.row_mut(t).copy_from_slice(&nu);
        }
    }
    Ok(())
}

/// Emission costs `g_t(m)`, `T x M`.
pub fn emission_costs(state: &PosteriorState, problem: &Problem<'_>) -> RealMatrix {
    let x = &problem.x.values;
    RealMatrix::from_fn(x.rows(), state.models.len(), |t, m| {
        let mp = &state.models[m];
        g_t(&GtFrame {
            x: x.row(t),
            noise_var: state.noise_var.row(t),
            eta: mp.eta.row(t),
            nu: mp.nu.row(t),
            gamma: mp.gamma.row(t),
            mean_log_variance: mp.mean_log_variance.row(t),
            latent_mean: mp.latent_mean.row(t),
            latent_log_var: mp.latent_log_var.row(t),
            prior_mean: mp.prior_mean.row(t),
            prior_log_var: mp.prior_log_var.row(t),
        })
    })
}

/// Switch posterior from emissions `exp(-g_t(m))` under the current chain.
pub fn e_m_step(state: &mut PosteriorState, problem: &Problem<'_>, hmm: &HmmParams) -> Result<()> {
    let logits = emission_costs(state, problem).map(|g| -g);
    state.switch = forward_backward(hmm, &logits)?;
    Ok(())
}

/// One `H` then one `W` multiplicative update against the posterior noise
/// power, and Baum-Welch re-estimation of the chain. Returns the updated
/// parameters and the IS divergence after the update.
pub fn m_step(state: &PosteriorState, problem: &Problem<'_>, nmf: &NmfState) -> Result<(NmfState, HmmParams, f64)> {
    let etas: Vec<ComplexMatrix> = state.models.iter().map(|m| m.eta.clone()).collect();
    let nus: Vec<RealMatrix> = state.models.iter().map(|m| m.nu.clone()).collect();
    let v = posterior_power(&problem.x.values, &state.switch.marginals, &etas, &nus)?;
    let nmf = update_h(nmf, &v)?;
    let nmf = update_w(&nmf, &v)?;
    let floored = v.matrix().map(|p| p.max(crate::nmf::NMF_FLOOR));
    let div = is_divergence(&floored, &nmf.wh())?;
    Ok((nmf, update_hmm(&state.switch), div))
}
