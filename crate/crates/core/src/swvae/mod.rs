//! Switching-VAE speech enhancement by variational EM.
//!
//! A Markov chain over `M` speech models picks, frame by frame, which VAE
//! generates the clean spectrum; the noise variance is a low-rank NMF.
//! Each EM iteration runs the latent (E-z), speech (E-s) and switch (E-m)
//! posterior updates followed by the NMF and chain re-estimation (M), and
//! the estimate is the switch-weighted average of the per-model Wiener means.

mod state;
mod steps;

use serde::{Deserialize, Serialize};

pub use state::{
    e_m_step, e_s_update, e_z_step, emission_costs, init_posterior, m_step, refresh_moments, ModelPosterior,
    PosteriorState, Problem,
};
pub use steps::{decoder_moments, e_s_step, e_z_objective, g_t, gamma_mc, DecoderMoments, EzFrame, EzObjective, GtFrame};

use crate::error::{Error, Result};
use crate::hmm::HmmParams;
use crate::nmf::NmfState;
use crate::numerics::Rng;
use crate::signal::{ComplexSpectrogram, VisualSequence};
use crate::vae::VaeModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhancerConfig {
    /// Latent samples per `(t, m)` feeding `gamma` and the emission costs.
    pub mc_samples: usize,
    pub em_iterations: usize,
    pub ez_iterations: usize,
    pub ez_learning_rate: f64,
    pub nmf_rank: usize,
    /// Initial self-transition probability of the switch.
    pub initial_stay: f64,
    /// Pairs `(t, m)` with switch weight below this skip the latent update.
    pub weight_floor: f64,
    /// Stop once the surrogate's relative change over 10 iterations drops
    /// below this; `None` always runs `em_iterations`.
    pub early_stop: Option<f64>,
    pub seed: u64,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        EnhancerConfig {
            mc_samples: 20,
            em_iterations: 200,
            ez_iterations: 10,
            ez_learning_rate: 0.05,
            nmf_rank: 8,
            initial_stay: 0.9,
            weight_floor: 1e-6,
            early_stop: None,
            seed: 0,
        }
    }
}

impl EnhancerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 || self.nmf_rank == 0 {
            return Err(Error::Config("mc_samples and nmf_rank must be at least 1".into()));
        }
        if !(self.ez_learning_rate > 0.0) || !self.ez_learning_rate.is_finite() {
            return Err(Error::Config(format!("ez_learning_rate {} must be positive", self.ez_learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.initial_stay) {
            return Err(Error::Config(format!("initial_stay {} outside [0, 1]", self.initial_stay)));
        }
        if matches!(self.early_stop, Some(t) if !(t > 0.0)) {
            return Err(Error::Config("early_stop tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Log-normalizer of the switch posterior under emissions `exp(-g_t)`.
    pub elbo: f64,
    /// Mean switch weight of each model.
    pub mean_r: Vec<f64>,
    /// IS divergence between the posterior noise power and `WH` after the M step.
    pub is_divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: Vec<IterationRecord>,
    pub final_lambda: Vec<f64>,
    pub final_tau: Vec<Vec<f64>>,
    pub shrinkage_violations: usize,
    pub stopped_early: bool,
}

impl Diagnostics {
    /// One JSON object per iteration, newline separated.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.iterations {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct EnhanceOutput {
    pub estimate: ComplexSpectrogram,
    pub diagnostics: Diagnostics,
    pub state: PosteriorState,
    pub nmf: NmfState,
    pub hmm: HmmParams,
}

/// Initial noise model: random factors around the mean mixture power.
pub fn init_nmf(x: &ComplexSpectrogram, cfg: &EnhancerConfig) -> Result<NmfState> {
    let power = x.power();
    let mean = power.mean().max(crate::nmf::NMF_FLOOR);
    let mut rng = Rng::substream(cfg.seed, &[3]);
    NmfState::init(x.bins(), x.frames(), cfg.nmf_rank, mean, &mut rng)
}

fn mean_r(state: &PosteriorState) -> Vec<f64> {
    let m = &state.switch.marginals;
    (0..m.cols())
        .map(|k| (0..m.rows()).map(|t| m[(t, k)]).sum::<f64>() / m.rows() as f64)
        .collect()
}

fn check_state(state: &PosteriorState, iteration: usize) -> Result<()> {
    for mp in &state.models {
        if !(mp.eta.all_finite() && mp.nu.all_finite() && mp.latent_mean.all_finite() && mp.latent_log_var.all_finite()) {
            return Err(Error::Numerical {
                iteration,
                what: "non-finite posterior state".into(),
            });
        }
    }
    Ok(())
}

/// Full enhancement of one mixture spectrogram.
///
/// `visual` may be `None` only when every model is audio-only.
pub fn enhance(
    x: &ComplexSpectrogram,
    visual: Option<&VisualSequence>,
    models: &[VaeModel],
    cfg: &EnhancerConfig,
) -> Result<EnhanceOutput> {
    cfg.validate()?;
    let problem = Problem { x, visual, models };
    problem.validate()?;
    let mut nmf = init_nmf(x, cfg)?;
    let mut hmm = HmmParams::sticky(models.len(), cfg.initial_stay)?;
    let mut state = init_posterior(&problem, &nmf, cfg)?;
    let mut records: Vec<IterationRecord> = Vec::with_capacity(cfg.em_iterations);
    let mut stopped_early = false;

    for it in 0..cfg.em_iterations {
        e_z_step(&mut state, &problem, cfg, it)?;
        e_s_update(&mut state, &problem, &nmf)?;
        e_m_step(&mut state, &problem, &hmm).map_err(|e| Error::Numerical {
            iteration: it,
            what: e.to_string(),
        })?;
        let (new_nmf, new_hmm, div) = m_step(&state, &problem, &nmf).map_err(|e| Error::Numerical {
            iteration: it,
            what: e.to_string(),
        })?;
        nmf = new_nmf;
        hmm = new_hmm;
        check_state(&state, it)?;
        let elbo = state.switch.log_normalizer;
        if !elbo.is_finite() || !div.is_finite() {
            return Err(Error::Numerical {
                iteration: it,
                what: format!("surrogate {elbo}, divergence {div}"),
            });
        }
        log::debug!("EM iteration {it}: surrogate {elbo:.4}, IS divergence {div:.4}");
        records.push(IterationRecord {
            iteration: it,
            elbo,
            mean_r: mean_r(&state),
            is_divergence: div,
        });
        if let Some(tol) = cfg.early_stop {
            if records.len() > 10 {
                let prev = records[records.len() - 11].elbo;
                if ((elbo - prev) / elbo.abs().max(1e-300)).abs() < tol {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    let estimate = x.with_values(state.speech_estimate())?;
    let diagnostics = Diagnostics {
        iterations: records,
        final_lambda: hmm.lambda.clone(),
        final_tau: hmm.tau.rows_iter().map(|r| r.to_vec()).collect(),
        shrinkage_violations: state.shrinkage_violations,
        stopped_early,
    };
    Ok(EnhanceOutput {
        estimate,
        diagnostics,
        state,
        nmf,
        hmm,
    })
}

#[cfg(test)]
mod tests;
