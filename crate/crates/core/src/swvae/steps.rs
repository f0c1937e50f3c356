//! Per-frame building blocks of the variational EM iteration.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::VARIANCE_FLOOR;
use crate::vae::{train::gaussian_kl, MlpCache, VaeModel};

/// Decoder statistics over the cached latent samples of one `(t, m)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderMoments {
    /// Harmonic mean of the per-sample variances, floored.
    pub gamma: Vec<f64>,
    /// Arithmetic mean of the per-sample log-variances.
    pub mean_log_variance: Vec<f64>,
}

/// Harmonic mean and mean log of the decoder variances over the samples
/// stored back to back in `samples` (`D * L` values).
pub fn decoder_moments(model: &VaeModel, samples: &[f64], visual: Option<&[f64]>) -> Result<DecoderMoments> {
    let l = model.latent_dim;
    if samples.is_empty() || samples.len() % l != 0 {
        return Err(Error::shape("decoder_moments samples", format!("D x {l}"), samples.len()));
    }
    let d = samples.len() / l;
    let f = model.freq_bins;
    let mut inv = vec![0.0; f];
    let mut logs = vec![0.0; f];
    let mut cache = MlpCache::default();
    for z in samples.chunks_exact(l) {
        model.decode_cached(z, visual, &mut cache)?;
        for ((i, lg), &ls) in inv.iter_mut().zip(logs.iter_mut()).zip(cache.output()) {
            *i += (-ls).exp();
            *lg += ls;
        }
    }
    let dn = d as f64;
    Ok(DecoderMoments {
        gamma: inv.iter().map(|&i| (dn / i).max(VARIANCE_FLOOR)).collect(),
        mean_log_variance: logs.iter().map(|&s| s / dn).collect(),
    })
}

/// `gamma_f = [ (1/D) sum_d 1 / sigma_f^2(z_d, v) ]^-1`.
pub fn gamma_mc(model: &VaeModel, samples: &[f64], visual: Option<&[f64]>) -> Result<Vec<f64>> {
    Ok(decoder_moments(model, samples, visual)?.gamma)
}

/// Wiener posterior of one frame: `eta = g x`, `nu = g n` with
/// `g = gamma / (gamma + n)` and `n` the noise variance.
pub fn e_s_step(x: &[Complex64], gamma: &[f64], noise_var: &[f64]) -> Result<(Vec<Complex64>, Vec<f64>)> {
    if gamma.len() != x.len() || noise_var.len() != x.len() {
        return Err(Error::shape(
            "e_s_step",
            x.len(),
            format!("gamma {}, noise {}", gamma.len(), noise_var.len()),
        ));
    }
    let mut eta = Vec::with_capacity(x.len());
    let mut nu = Vec::with_capacity(x.len());
    for ((&xf, &g), &n) in x.iter().zip(gamma).zip(noise_var) {
        let (g, n) = (g.max(VARIANCE_FLOOR), n.max(VARIANCE_FLOOR));
        let gain = g / (g + n);
        eta.push(xf * gain);
        nu.push(n * gain);
    }
    Ok((eta, nu))
}

/// Everything the latent update of one `(t, m)` pair depends on besides
/// the variational parameters themselves.
#[derive(Debug, Clone, Copy)]
pub struct EzFrame<'a> {
    pub model: &'a VaeModel,
    pub visual: Option<&'a [f64]>,
    pub prior_mean: &'a [f64],
    pub prior_log_var: &'a [f64],
    pub eta: &'a [Complex64],
    pub nu: &'a [f64],
    /// Switch posterior weight `r(m_t = m)`.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EzObjective {
    pub value: f64,
    pub grad_mean: Vec<f64>,
    pub grad_log_var: Vec<f64>,
}

/// Single-sample estimate of the latent objective, to be maximized:
/// `r * [ sum_f (-log sigma_f^2 - (|eta_f|^2 + nu_f) / sigma_f^2) - KL(N(c, Omega) || N(xi, Lambda)) ]`
/// with `z = c + exp(log_var / 2) * eps`, plus its gradients.
pub fn e_z_objective(frame: &EzFrame<'_>, mean: &[f64], log_var: &[f64], eps: &[f64]) -> Result<EzObjective> {
    let l = frame.model.latent_dim;
    for (what, len) in [("mean", mean.len()), ("log_var", log_var.len()), ("eps", eps.len())] {
        if len != l {
            return Err(Error::shape("e_z_objective", format!("{what} of length {l}"), len));
        }
    }
    let f = frame.model.freq_bins;
    if frame.eta.len() != f || frame.nu.len() != f {
        return Err(Error::shape("e_z_objective posterior", f, frame.eta.len().min(frame.nu.len())));
    }
    let r = frame.weight;
    if r == 0.0 {
        return Ok(EzObjective {
            value: 0.0,
            grad_mean: vec![0.0; l],
            grad_log_var: vec![0.0; l],
        });
    }
    let std: Vec<f64> = log_var.iter().map(|v| (0.5 * v).exp()).collect();
    let z: Vec<f64> = mean.iter().zip(&std).zip(eps).map(|((c, s), e)| c + s * e).collect();
    let jac = frame.model.decode_variance_grad_z(&z, frame.visual)?;

    let mut rec = 0.0;
    let mut g_log = Vec::with_capacity(f);
    for ((&s2, e), &n) in jac.variance().iter().zip(frame.eta).zip(frame.nu) {
        let p = e.norm_sqr() + n;
        rec -= s2.ln() + p / s2;
        g_log.push(r * (p / s2 - 1.0));
    }
    let kl = gaussian_kl(mean, log_var, frame.prior_mean, frame.prior_log_var);
    let value = r * (rec - kl);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("latent objective of model {}", frame.model.id)));
    }
    let g_z = jac.vjp_log(&g_log);
    let mut grad_mean = Vec::with_capacity(l);
    let mut grad_log_var = Vec::with_capacity(l);
    for j in 0..l {
        let inv_lam = (-frame.prior_log_var[j]).exp();
        grad_mean.push(g_z[j] - r * (mean[j] - frame.prior_mean[j]) * inv_lam);
        grad_log_var.push(g_z[j] * eps[j] * 0.5 * std[j] - r * 0.5 * ((log_var[j]).exp() * inv_lam - 1.0));
    }
    Ok(EzObjective {
        value,
        grad_mean,
        grad_log_var,
    })
}

/// Inputs of the emission cost of one `(t, m)` pair.
#[derive(Debug, Clone, Copy)]
pub struct GtFrame<'a> {
    pub x: &'a [Complex64],
    pub noise_var: &'a [f64],
    pub eta: &'a [Complex64],
    pub nu: &'a [f64],
    pub gamma: &'a [f64],
    pub mean_log_variance: &'a [f64],
    pub latent_mean: &'a [f64],
    pub latent_log_var: &'a [f64],
    pub prior_mean: &'a [f64],
    pub prior_log_var: &'a [f64],
}

/// Emission cost `g_t(m)`: expected speech KL, minus the expected
/// log-likelihood of the mixture, plus the latent KL.
///
/// The speech KL per bin is `E[log sigma^2] - log nu + (nu + |eta|^2) E[1/sigma^2] - 1`
/// with both expectations taken over the cached samples (`E[1/sigma^2] = 1/gamma`).
pub fn g_t(frame: &GtFrame<'_>) -> f64 {
    let mut speech_kl = 0.0;
    let mut neg_loglik = 0.0;
    for f in 0..frame.x.len() {
        let nu = frame.nu[f].max(VARIANCE_FLOOR);
        let e2 = frame.eta[f].norm_sqr();
        speech_kl += frame.mean_log_variance[f] - nu.ln() + (nu + e2) / frame.gamma[f] - 1.0;
        let n = frame.noise_var[f].max(VARIANCE_FLOOR);
        neg_loglik += (std::f64::consts::PI * n).ln() + ((frame.x[f] - frame.eta[f]).norm_sqr() + nu) / n;
    }
    speech_kl
        + neg_loglik
        + gaussian_kl(frame.latent_mean, frame.latent_log_var, frame.prior_mean, frame.prior_log_var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, Rng};
    use crate::vae::{Activation, Mlp, ModelKind, VaeArch};

    fn model(kind: ModelKind, seed: u64) -> VaeModel {
        let arch = VaeArch {
            latent_dim: 3,
            hidden: vec![6],
            activation: Activation::Tanh,
        };
        VaeModel::new(0, kind, &arch, 5, 2, &mut Rng::new(seed)).unwrap()
    }

    /// Decoder with zero weights and per-bin log-variance `bias`.
    fn constant_decoder(mut m: VaeModel, bias: &[f64]) -> VaeModel {
        let n = m.decoder.params().len();
        let mut p = vec![0.0; n];
        p[n - bias.len()..].copy_from_slice(bias);
        m.decoder = Mlp::from_params(m.decoder.sizes(), m.decoder.activation(), p).unwrap();
        m
    }

    #[test]
    fn gamma_is_harmonic_mean() {
        let m = constant_decoder(model(ModelKind::AudioOnly, 1), &[0.0; 5]);
        let samples = [0.1, 0.2, 0.3];
        assert_eq!(gamma_mc(&m, &samples, None).unwrap(), vec![1.0; 5]);

        // two samples whose variances are 1 and 3 in every bin: a linear
        // decoder with log sigma^2 = z_0 * ln 3
        let arch = VaeArch {
            latent_dim: 1,
            hidden: vec![],
            activation: Activation::Identity,
        };
        let mut lin = VaeModel::new(0, ModelKind::AudioOnly, &arch, 4, 0, &mut Rng::new(2)).unwrap();
        let mut p = vec![3f64.ln(); 4];
        p.extend([0.0; 4]);
        lin.decoder = Mlp::from_params(&[1, 4], Activation::Identity, p).unwrap();
        let g = gamma_mc(&lin, &[0.0, 1.0], None).unwrap();
        for x in g {
            assert!((x - 1.5).abs() < 1e-12, "{x}");
        }
        // a single sample gives its own variance back
        let s = lin.decode_variance(&[0.37], None).unwrap();
        assert_eq!(gamma_mc(&lin, &[0.37], None).unwrap(), s);
        assert!(gamma_mc(&lin, &[], None).is_err());
    }

    #[test]
    fn wiener_limits() {
        let x = [Complex64::new(1.0, -2.0), Complex64::new(0.5, 0.25)];
        let (eta, nu) = e_s_step(&x, &[2.0, 3.0], &[2.0, 3.0]).unwrap();
        assert_eq!(eta, vec![x[0] / 2.0, x[1] / 2.0]);
        assert_eq!(nu, vec![1.0, 1.5]);

        let (eta, nu) = e_s_step(&x, &[1.0, 1.0], &[1e-12, 1e-12]).unwrap();
        for (e, xx) in eta.iter().zip(&x) {
            assert!((e - xx).norm() < 1e-6);
        }
        assert!(nu.iter().all(|&n| n < 1e-6));

        let (eta, nu) = e_s_step(&x, &[1e-12, 1e-12], &[1.0, 1.0]).unwrap();
        assert!(eta.iter().all(|e| e.norm() < 1e-6));
        assert!(nu.iter().all(|&n| n < 1e-6));
        assert!(e_s_step(&x, &[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn constant_variances_give_classic_wiener_gain() {
        let x = [Complex64::new(0.3, 0.4); 5];
        let (eta, _) = e_s_step(&x, &[2.0; 5], &[6.0; 5]).unwrap();
        for e in eta {
            assert!((e - x[0] * 0.25).norm() < 1e-15);
        }
    }

    fn frame_inputs(rng: &mut Rng) -> (Vec<Complex64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let eta = (0..5).map(|_| Complex64::new(rng.standard_normal(), rng.standard_normal())).collect();
        let nu = (0..5).map(|_| rng.uniform(0.1, 1.0)).collect();
        let xi = (0..3).map(|_| 0.5 * rng.standard_normal()).collect();
        let ll = (0..3).map(|_| rng.uniform(-0.5, 0.5)).collect();
        (eta, nu, xi, ll)
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        let mut rng = Rng::new(3);
        for trial in 0..10 {
            let kind = if trial % 2 == 0 { ModelKind::AudioOnly } else { ModelKind::AudioVisual };
            let m = model(kind, 100 + trial);
            let (eta, nu, xi, ll) = frame_inputs(&mut rng);
            let v = [rng.standard_normal(), rng.standard_normal()];
            let frame = EzFrame {
                model: &m,
                visual: Some(&v),
                prior_mean: &xi,
                prior_log_var: &ll,
                eta: &eta,
                nu: &nu,
                weight: rng.uniform(0.1, 1.0),
            };
            let c: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let lw: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 0.5)).collect();
            let eps: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let obj = e_z_objective(&frame, &c, &lw, &eps).unwrap();
            let mut x0 = c.clone();
            x0.extend(&lw);
            let mut g = obj.grad_mean.clone();
            g.extend(&obj.grad_log_var);
            let err = finite_diff_check(
                |p| e_z_objective(&frame, &p[..3], &p[3..], &eps).unwrap().value,
                &x0,
                &g,
                1e-4,
            )
            .unwrap();
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }

    #[test]
    fn zero_weight_and_prior_match() {
        let mut rng = Rng::new(4);
        let m = constant_decoder(model(ModelKind::AudioOnly, 5), &[0.1, 0.2, 0.3, 0.4, 0.5]);
        let (eta, nu, _, _) = frame_inputs(&mut rng);
        let zero = [0.0; 3];
        let mut frame = EzFrame {
            model: &m,
            visual: None,
            prior_mean: &zero,
            prior_log_var: &zero,
            eta: &eta,
            nu: &nu,
            weight: 0.0,
        };
        let obj = e_z_objective(&frame, &[1.0, 2.0, 3.0], &[0.1; 3], &[0.5; 3]).unwrap();
        assert_eq!(obj.value, 0.0);
        assert!(obj.grad_mean.iter().chain(&obj.grad_log_var).all(|&g| g == 0.0));

        frame.weight = 0.7;
        let obj = e_z_objective(&frame, &zero, &zero, &[0.5, -0.3, 1.2]).unwrap();
        assert!(obj.grad_mean.iter().chain(&obj.grad_log_var).all(|&g| g == 0.0));
        let expected: f64 = (0..5)
            .map(|f| {
                let s2 = (0.1 * (f + 1) as f64).exp();
                -(s2.ln() + (eta[f].norm_sqr() + nu[f]) / s2)
            })
            .sum::<f64>()
            * 0.7;
        assert!((obj.value - expected).abs() < 1e-12);
    }

    #[test]
    fn g_t_closed_form_terms() {
        let f = 4;
        let x: Vec<Complex64> = (0..f).map(|i| Complex64::new(i as f64 + 0.5, -0.25)).collect();
        let sigma2 = [0.5, 1.0, 2.0, 4.0];
        let log_s: Vec<f64> = sigma2.iter().map(|s: &f64| s.ln()).collect();
        let noise = [1.0, 2.0, 3.0, 4.0];
        let zero = [0.0; 2];
        // r^s equal to the speech prior: first term vanishes
        let eta0 = vec![Complex64::new(0.0, 0.0); f];
        let frame = GtFrame {
            x: &x,
            noise_var: &noise,
            eta: &eta0,
            nu: &sigma2,
            gamma: &sigma2,
            mean_log_variance: &log_s,
            latent_mean: &zero,
            latent_log_var: &zero,
            prior_mean: &zero,
            prior_log_var: &zero,
        };
        let lik: f64 = (0..f)
            .map(|i| (std::f64::consts::PI * noise[i]).ln() + (x[i].norm_sqr() + sigma2[i]) / noise[i])
            .sum();
        assert!((g_t(&frame) - lik).abs() < 1e-12);

        // eta = x and tiny nu: the likelihood term tends to sum log(pi WH)
        let tiny = [1e-9; 4];
        let frame = GtFrame {
            eta: &x,
            nu: &tiny,
            ..frame
        };
        let speech: f64 = (0..f).map(|i| log_s[i] - tiny[i].ln() + (tiny[i] + x[i].norm_sqr()) / sigma2[i] - 1.0).sum();
        let lik: f64 = noise.iter().map(|n| (std::f64::consts::PI * n).ln()).sum();
        assert!((g_t(&frame) - speech - lik).abs() < 1e-8);
    }
}
