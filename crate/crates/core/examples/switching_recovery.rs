//! Recovers the regime sequence of a mixture with one VAE per regime.
use swvae::metrics::switch_accuracy;
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
    let models = (0..2)
        .map(|r| {
            let data = training_set(&corpus, &stft_cfg, false, Some(r))?;
            Ok(train_model(r as u32, ModelKind::AudioOnly, &arch, &data, &train, 1)?.model)
        })
        .collect::<swvae::Result<Vec<_>>>()?;

    let cfg = EnhancerConfig { em_iterations: 30, ..EnhancerConfig::default() };
    for (i, utt) in synth_corpus(3, 2, 1.0, &synth, &stft_cfg, 99)?.iter().enumerate() {
        let mix = make_mixture(&utt.waveform, NoiseKind::White, 5.0, 100 + i as u64)?;
        let (_, out) = enhance_waveform(&mix, None, &models, &stft_cfg, &cfg)?;
        let acc = switch_accuracy(&utt.labels, &out.state.switch)?;
        let path: String = out.state.switch.argmax().iter().map(|m| char::from(b'0' + *m as u8)).collect();
        let truth: String = utt.labels.iter().map(|m| char::from(b'0' + *m as u8)).collect();
        println!("utterance {i}: accuracy {acc:.3}\n  truth {truth}\n  found {path}");
    }
    Ok(())
}
