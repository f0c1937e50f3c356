//! Enhances one noisy mixture with an A-VAE / AV-VAE switching pair.
use swvae::metrics::{sdr, segmental_snr, SEGMENT_LEN};
use swvae::pipeline::{enhance_waveform, make_mixture, synth_corpus, train_model, training_set};
use swvae::signal::{NoiseKind, StftConfig, SynthConfig};
use swvae::swvae::EnhancerConfig;
use swvae::vae::{EncoderNoise, ModelKind, TrainConfig, VaeArch};

fn main() -> swvae::Result<()> {
    let stft_cfg = StftConfig { window_len: 512, hop: 128, ..StftConfig::default() };
    let synth = SynthConfig::default();
    let corpus = synth_corpus(60, 2, 1.0, &synth, &stft_cfg, 1)?;
    let arch = VaeArch { latent_dim: 8, hidden: vec![64], ..VaeArch::default() };
    let train = TrainConfig { epochs: 20, batch_size: 32, learning_rate: 2e-3, calibrate: true, encoder_noise: Some(EncoderNoise::default()) };
    let a = train_model(0, ModelKind::AudioOnly, &arch, &training_set(&corpus, &stft_cfg, false, None)?, &train, 2)?;
    let av = train_model(1, ModelKind::AudioVisual, &arch, &training_set(&corpus, &stft_cfg, true, None)?, &train, 2)?;
    let models = [a.model, av.model];

    let utt = &synth_corpus(1, 2, 1.0, &synth, &stft_cfg, 99)?[0];
    let mix = make_mixture(&utt.waveform, NoiseKind::Pink, 5.0, 42)?;
    let cfg = EnhancerConfig { em_iterations: 30, ..EnhancerConfig::default() };
    let (enhanced, out) = enhance_waveform(&mix, Some(&utt.visual), &models, &stft_cfg, &cfg)?;

    println!("SDR  {:.2} dB -> {:.2} dB", sdr(&utt.waveform, &mix)?, sdr(&utt.waveform, &enhanced)?);
    println!(
        "segSNR {:.2} dB -> {:.2} dB",
        segmental_snr(&utt.waveform, &mix, SEGMENT_LEN)?,
        segmental_snr(&utt.waveform, &enhanced, SEGMENT_LEN)?
    );
    let last = out.diagnostics.iterations.last().expect("at least one iteration");
    println!("final surrogate {:.1}, mean switch weights {:?}", last.elbo, last.mean_r);
    println!("shrinkage violations: {}", out.diagnostics.shrinkage_violations);
    Ok(())
}
