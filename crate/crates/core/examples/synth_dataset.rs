//! Synthetic two-regime speech, noise at a target SNR and visual occlusion.
use swvae::numerics::Rng;
use swvae::signal::{mix_at_snr, occlude, power, spectral_centroids, synth_clean, synth_noise, NoiseKind, StftConfig, SynthConfig};

fn main() -> swvae::Result<()> {
    let stft_cfg = StftConfig { window_len: 512, hop: 128, ..StftConfig::default() };
    let mut rng = Rng::new(3);
    let utt = synth_clean(2, 1.5, &SynthConfig::default(), &stft_cfg, &mut rng)?;
    let centroids = spectral_centroids(&utt.waveform, &stft_cfg)?;
    for regime in 0..2 {
        let c: Vec<f64> = centroids.iter().zip(&utt.labels).filter(|(_, &l)| l == regime).map(|(c, _)| *c).collect();
        println!("regime {regime}: {} frames, mean centroid {:.0} Hz", c.len(), c.iter().sum::<f64>() / c.len().max(1) as f64);
    }

    for kind in [NoiseKind::White, NoiseKind::Pink, NoiseKind::Brown] {
        let noise = synth_noise(kind, utt.waveform.len(), utt.waveform.sample_rate, &mut rng)?;
        let mix = mix_at_snr(&utt.waveform, &noise, 5.0)?;
        let residual: Vec<f64> = mix.samples.iter().zip(&utt.waveform.samples).map(|(m, s)| m - s).collect();
        let snr = 10.0 * (power(&utt.waveform.samples) / power(&residual)).log10();
        println!("{:>5} noise mixed at {snr:.3} dB", kind.name());
    }

    let occ = occlude(&utt.visual, 1.0 / 3.0, 20, &mut rng)?;
    println!("occluded {} of {} visual frames", occ.occluded_count(), occ.frames());
    Ok(())
}
