//! Trains an audio-only and an audio-visual VAE and saves checkpoints.
use swvae::pipeline::{synth_corpus, train_model, training_set};
use swvae::signal::{StftConfig, SynthConfig};
use swvae::vae::{EncoderNoise, load_model, save_model, CheckpointMeta, ModelKind, TrainConfig, VaeArch};

fn main() -> swvae::Result<()> {
    let stft_cfg = StftConfig { window_len: 512, hop: 128, ..StftConfig::default() };
    let corpus = synth_corpus(40, 2, 1.0, &SynthConfig::default(), &stft_cfg, 1)?;
    let arch = VaeArch { latent_dim: 8, hidden: vec![64], ..VaeArch::default() };
    let train = TrainConfig { epochs: 10, batch_size: 32, learning_rate: 2e-3, calibrate: true, encoder_noise: Some(EncoderNoise::default()) };
    let dir = std::env::temp_dir().join("swvae_train_example");
    std::fs::create_dir_all(&dir).map_err(|e| swvae::Error::io(&dir, e))?;

    for (id, kind) in [(0, ModelKind::AudioOnly), (1, ModelKind::AudioVisual)] {
        let data = training_set(&corpus, &stft_cfg, kind == ModelKind::AudioVisual, None)?;
        let report = train_model(id, kind, &arch, &data, &train, 1)?;
        let curve = &report.loss_curve;
        println!("{}: {} frames, loss {:.1} -> {:.1}", kind.name(), data.len(), curve[0], curve[curve.len() - 1]);

        let path = dir.join(format!("{}.bin", kind.name()));
        save_model(&report.model, &path, Some(&CheckpointMeta::for_model(&report.model, curve.clone(), 1)))?;
        let back = load_model(&path)?;
        println!("  saved {} ({} parameters), reload identical: {}", path.display(), back.param_count(), back == report.model);
    }
    Ok(())
}
