use num_complex::Complex64;

use super::*;
use crate::hmm::oracle::brute_force;
use crate::nmf::is_divergence;
use crate::numerics::{ComplexMatrix, RealMatrix};
use crate::signal::StftConfig;
use crate::vae::{Activation, Mlp, ModelKind, VaeArch};

const F: usize = 9;

fn spectrogram(values: ComplexMatrix) -> ComplexSpectrogram {
    let config = StftConfig {
        window_len: 2 * (F - 1),
        hop: F - 1,
        ..StftConfig::default()
    };
    ComplexSpectrogram {
        signal_len: values.rows() * (F - 1),
        values,
        config,
        sample_rate: 8000,
    }
}

fn random_mixture(t: usize, rng: &mut Rng) -> ComplexSpectrogram {
    spectrogram(ComplexMatrix::from_fn(t, F, |_, f| {
        Complex64::new(rng.standard_normal(), rng.standard_normal()) * (1.0 + f as f64 * 0.2)
    }))
}

fn model(id: u32, kind: ModelKind, seed: u64) -> VaeModel {
    let arch = VaeArch {
        latent_dim: 3,
        hidden: vec![8],
        activation: Activation::Tanh,
    };
    VaeModel::new(id, kind, &arch, F, 2, &mut Rng::new(seed)).unwrap()
}

fn constant_decoder(mut m: VaeModel, log_var: &[f64]) -> VaeModel {
    let n = m.decoder.params().len();
    let mut p = vec![0.0; n];
    p[n - log_var.len()..].copy_from_slice(log_var);
    m.decoder = Mlp::from_params(m.decoder.sizes(), m.decoder.activation(), p).unwrap();
    m
}

fn visual(t: usize, rng: &mut Rng) -> VisualSequence {
    VisualSequence::new(RealMatrix::from_fn(t, 2, |_, _| rng.standard_normal())).unwrap()
}

fn quick_cfg(seed: u64) -> EnhancerConfig {
    EnhancerConfig {
        mc_samples: 4,
        em_iterations: 5,
        ez_iterations: 3,
        nmf_rank: 2,
        seed,
        ..EnhancerConfig::default()
    }
}

#[test]
fn init_is_uniform_and_reproducible() {
    let mut rng = Rng::new(1);
    let x = random_mixture(6, &mut rng);
    let v = visual(6, &mut rng);
    let models = [model(0, ModelKind::AudioOnly, 2), model(1, ModelKind::AudioVisual, 3)];
    let cfg = quick_cfg(7);
    let problem = Problem {
        x: &x,
        visual: Some(&v),
        models: &models,
    };
    let nmf = init_nmf(&x, &cfg).unwrap();
    let a = init_posterior(&problem, &nmf, &cfg).unwrap();
    assert!(a.switch.marginals.as_slice().iter().all(|&r| r == 0.5));
    assert_eq!(a, init_posterior(&problem, &nmf, &cfg).unwrap());
    assert_eq!(a.shrinkage_violations, 0);
    // the encoder outputs seed the latent posterior
    let (c, lw) = models[1].encode(x.power().row(2), Some(v.frame(2))).unwrap();
    assert_eq!(a.models[1].latent_mean.row(2), &c[..]);
    assert_eq!(a.models[1].latent_log_var.row(2), &lw[..]);
}

#[test]
fn init_with_constant_variances_is_plain_wiener() {
    let mut rng = Rng::new(2);
    let x = random_mixture(4, &mut rng);
    let m = constant_decoder(model(0, ModelKind::AudioOnly, 4), &[2f64.ln(); F]);
    let nmf = NmfState::new(RealMatrix::filled(F, 1, 1.0), RealMatrix::filled(1, 4, 6.0)).unwrap();
    let problem = Problem {
        x: &x,
        visual: None,
        models: std::slice::from_ref(&m),
    };
    let s = init_posterior(&problem, &nmf, &quick_cfg(0)).unwrap();
    for t in 0..4 {
        for f in 0..F {
            assert!((s.models[0].eta[(t, f)] - x.values[(t, f)] * 0.25).norm() < 1e-12);
            assert!((s.models[0].nu[(t, f)] - 1.5).abs() < 1e-12);
        }
    }
}

#[test]
fn mismatched_inputs_rejected() {
    let mut rng = Rng::new(3);
    let x = random_mixture(5, &mut rng);
    let av = model(0, ModelKind::AudioVisual, 5);
    let cfg = quick_cfg(0);
    assert!(enhance(&x, None, std::slice::from_ref(&av), &cfg).is_err());
    assert!(enhance(&x, Some(&visual(4, &mut rng)), std::slice::from_ref(&av), &cfg).is_err());
    assert!(enhance(&x, None, &[], &cfg).is_err());
    let arch = VaeArch::default();
    let wrong = VaeModel::new(0, ModelKind::AudioOnly, &arch, F + 1, 0, &mut rng).unwrap();
    assert!(enhance(&x, None, &[wrong], &cfg).is_err());
    let bad = EnhancerConfig {
        ez_learning_rate: 0.0,
        ..cfg
    };
    assert!(matches!(
        enhance(&x, Some(&visual(5, &mut rng)), &[av], &bad),
        Err(Error::Config(_))
    ));
}

#[test]
fn enhance_is_deterministic_and_shrinks() {
    let mut rng = Rng::new(4);
    let x = random_mixture(8, &mut rng);
    let v = visual(8, &mut rng);
    let models = [model(0, ModelKind::AudioOnly, 6), model(1, ModelKind::AudioVisual, 7)];
    let a = enhance(&x, Some(&v), &models, &quick_cfg(11)).unwrap();
    let b = enhance(&x, Some(&v), &models, &quick_cfg(11)).unwrap();
    assert_eq!(a.diagnostics, b.diagnostics);
    assert_eq!(a.diagnostics.to_jsonl(), b.diagnostics.to_jsonl());
    assert_eq!(a.estimate, b.estimate);
    let c = enhance(&x, Some(&v), &models, &quick_cfg(12)).unwrap();
    assert_ne!(a.estimate, c.estimate);

    assert_eq!(a.diagnostics.shrinkage_violations, 0);
    assert_eq!(a.diagnostics.iterations.len(), 5);
    let s = &a.state;
    for t in 0..8 {
        for f in 0..F {
            let xn = x.values[(t, f)].norm();
            for mp in &s.models {
                assert!(mp.eta[(t, f)].norm() <= xn);
                assert!(mp.nu[(t, f)] > 0.0 && mp.nu[(t, f)] <= mp.gamma[(t, f)].min(s.noise_var[(t, f)]));
            }
            // convex combination: inside the box spanned by the model means
            let (e0, e1) = (s.models[0].eta[(t, f)], s.models[1].eta[(t, f)]);
            let r = s.switch.marginals.row(t);
            assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
            let est = a.estimate.values[(t, f)];
            assert!((est - (e0 * r[0] + e1 * r[1])).norm() < 1e-12);
            assert!(est.re >= e0.re.min(e1.re) - 1e-12 && est.re <= e0.re.max(e1.re) + 1e-12);
        }
    }
    let tau_rows: Vec<f64> = a.diagnostics.final_tau.iter().map(|r| r.iter().sum()).collect();
    assert!(tau_rows.iter().all(|s| (s - 1.0).abs() < 1e-12));
}

#[test]
fn single_model_reduces_to_its_wiener_mean() {
    let mut rng = Rng::new(5);
    let x = random_mixture(6, &mut rng);
    let m = model(0, ModelKind::AudioOnly, 8);
    let out = enhance(&x, None, std::slice::from_ref(&m), &quick_cfg(3)).unwrap();
    assert!(out.state.switch.marginals.as_slice().iter().all(|&r| r == 1.0));
    assert_eq!(out.estimate.values, out.state.models[0].eta);
}

#[test]
fn zero_inner_iterations_only_refresh_samples() {
    let mut rng = Rng::new(6);
    let x = random_mixture(4, &mut rng);
    let models = [model(0, ModelKind::AudioOnly, 9)];
    let cfg = EnhancerConfig {
        ez_iterations: 0,
        ..quick_cfg(5)
    };
    let problem = Problem {
        x: &x,
        visual: None,
        models: &models,
    };
    let nmf = init_nmf(&x, &cfg).unwrap();
    let before = init_posterior(&problem, &nmf, &cfg).unwrap();
    let mut after = before.clone();
    e_z_step(&mut after, &problem, &cfg, 0).unwrap();
    assert_eq!(before.models[0].latent_mean, after.models[0].latent_mean);
    assert_eq!(before.models[0].latent_log_var, after.models[0].latent_log_var);
    assert_ne!(before.models[0].samples, after.models[0].samples);
}

#[test]
fn latent_ascent_improves_frozen_objective() {
    let mut rng = Rng::new(7);
    let m = model(0, ModelKind::AudioVisual, 10);
    let v = [0.3, -0.4];
    let eta: Vec<Complex64> = (0..F).map(|f| Complex64::new(1.0 + f as f64, 0.5)).collect();
    let nu = vec![0.2; F];
    let (xi, ll) = m.prior_params(Some(&v)).unwrap();
    let frame = EzFrame {
        model: &m,
        visual: Some(&v),
        prior_mean: &xi,
        prior_log_var: &ll,
        eta: &eta,
        nu: &nu,
        weight: 1.0,
    };
    let eps: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
    let mut p = vec![0.0; 6];
    let before = e_z_objective(&frame, &p[..3], &p[3..], &eps).unwrap().value;
    let mut adam = crate::numerics::AdamState::new(6, 0.05).unwrap();
    for _ in 0..10 {
        let o = e_z_objective(&frame, &p[..3], &p[3..], &eps).unwrap();
        let g: Vec<f64> = o.grad_mean.iter().chain(&o.grad_log_var).map(|g| -g).collect();
        crate::numerics::adam_step(&mut p, &g, &mut adam).unwrap();
    }
    let after = e_z_objective(&frame, &p[..3], &p[3..], &eps).unwrap().value;
    assert!(after >= before, "{before} -> {after}");
}

#[test]
fn matched_model_has_lower_emission_cost() {
    let mut rng = Rng::new(8);
    let spec_a: Vec<f64> = (0..F).map(|f| if f < F / 2 { 4.0 } else { 0.05 }).collect();
    let spec_b: Vec<f64> = spec_a.iter().rev().copied().collect();
    let log_a: Vec<f64> = spec_a.iter().map(|s| s.ln()).collect();
    let log_b: Vec<f64> = spec_b.iter().map(|s| s.ln()).collect();
    let models = [
        constant_decoder(model(0, ModelKind::AudioOnly, 11), &log_a),
        constant_decoder(model(1, ModelKind::AudioOnly, 12), &log_b),
    ];
    let cfg = quick_cfg(0);
    let mut wins = 0;
    for trial in 0..100 {
        let truth = if trial % 2 == 0 { &spec_a } else { &spec_b };
        let x = spectrogram(ComplexMatrix::from_fn(1, F, |_, f| {
            let s = Complex64::new(rng.standard_normal(), rng.standard_normal()) * (truth[f] / 2.0).sqrt();
            let n = Complex64::new(rng.standard_normal(), rng.standard_normal()) * 0.05;
            s + n
        }));
        let nmf = NmfState::new(RealMatrix::filled(F, 1, 0.1), RealMatrix::filled(1, 1, 0.05)).unwrap();
        let problem = Problem {
            x: &x,
            visual: None,
            models: &models,
        };
        let state = init_posterior(&problem, &nmf, &cfg).unwrap();
        let g = emission_costs(&state, &problem);
        let (right, wrong) = if trial % 2 == 0 { (g[(0, 0)], g[(0, 1)]) } else { (g[(0, 1)], g[(0, 0)]) };
        if right < wrong {
            wins += 1;
        }
    }
    assert!(wins >= 95, "{wins}/100");
}

#[test]
fn switch_update_matches_enumeration_and_shift_invariance() {
    let mut rng = Rng::new(9);
    let x = random_mixture(4, &mut rng);
    let v = visual(4, &mut rng);
    let models = [model(0, ModelKind::AudioOnly, 13), model(1, ModelKind::AudioVisual, 14)];
    let cfg = quick_cfg(1);
    let problem = Problem {
        x: &x,
        visual: Some(&v),
        models: &models,
    };
    let nmf = init_nmf(&x, &cfg).unwrap();
    let mut state = init_posterior(&problem, &nmf, &cfg).unwrap();
    let hmm = HmmParams::sticky(2, 0.8).unwrap();
    e_m_step(&mut state, &problem, &hmm).unwrap();
    let logits = emission_costs(&state, &problem).map(|g| -g);
    let (marg, joints) = brute_force(&hmm, &logits);
    for (a, b) in state.switch.marginals.as_slice().iter().zip(marg.as_slice()) {
        assert!((a - b).abs() < 1e-10);
    }
    for (j, bj) in state.switch.joints.iter().zip(&joints) {
        for (a, b) in j.as_slice().iter().zip(bj.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
    // equal costs across models: the posterior is the chain's own smoothing
    let flat = RealMatrix::filled(4, 2, -3.0);
    let (prior_marg, _) = brute_force(&hmm, &flat);
    let post = crate::hmm::forward_backward(&hmm, &flat).unwrap();
    for (a, b) in post.marginals.as_slice().iter().zip(prior_marg.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn m_step_does_not_increase_divergence() {
    let mut rng = Rng::new(10);
    let x = random_mixture(10, &mut rng);
    let models = [model(0, ModelKind::AudioOnly, 15), model(1, ModelKind::AudioOnly, 16)];
    let cfg = quick_cfg(2);
    let problem = Problem {
        x: &x,
        visual: None,
        models: &models,
    };
    let nmf = init_nmf(&x, &cfg).unwrap();
    let state = init_posterior(&problem, &nmf, &cfg).unwrap();
    let etas: Vec<_> = state.models.iter().map(|m| m.eta.clone()).collect();
    let nus: Vec<_> = state.models.iter().map(|m| m.nu.clone()).collect();
    let v = crate::nmf::posterior_power(&x.values, &state.switch.marginals, &etas, &nus).unwrap();
    let before = is_divergence(v.matrix(), &nmf.wh()).unwrap();
    let (new_nmf, new_hmm, after) = m_step(&state, &problem, &nmf).unwrap();
    assert!(after <= before + 1e-10, "{before} -> {after}");
    assert!((is_divergence(v.matrix(), &new_nmf.wh()).unwrap() - after).abs() < 1e-9);
    assert!((new_hmm.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn early_stop_and_jsonl() {
    let mut rng = Rng::new(11);
    let x = random_mixture(5, &mut rng);
    let m = model(0, ModelKind::AudioOnly, 17);
    let cfg = EnhancerConfig {
        em_iterations: 40,
        early_stop: Some(1.0),
        ..quick_cfg(4)
    };
    let out = enhance(&x, None, std::slice::from_ref(&m), &cfg).unwrap();
    assert!(out.diagnostics.stopped_early);
    assert_eq!(out.diagnostics.iterations.len(), 11);
    let text = out.diagnostics.to_jsonl();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    let rec: IterationRecord = serde_json::from_str(lines[3]).unwrap();
    assert_eq!(rec, out.diagnostics.iterations[3]);
}
