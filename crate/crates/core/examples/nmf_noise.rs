//! Itakura-Saito NMF of a noise power spectrogram.
use swvae::nmf::{is_divergence, update_h, update_w, NmfState, PosteriorPower};
use swvae::numerics::Rng;
use swvae::signal::{stft, synth_noise, NoiseKind, StftConfig};

fn main() -> swvae::Result<()> {
    let cfg = StftConfig { window_len: 512, hop: 128, ..StftConfig::default() };
    let mut rng = Rng::new(5);
    let noise = synth_noise(NoiseKind::Pink, 16_000, 16_000, &mut rng)?;
    let spec = stft(&noise, &cfg)?;
    let p = spec.power();
    let v = PosteriorPower::new(p.transpose())?;

    let mut nmf = NmfState::init(spec.bins(), spec.frames(), 4, p.mean(), &mut rng)?;
    for it in 0..=200 {
        if it % 50 == 0 {
            println!("iteration {it:>3}: IS divergence per bin {:.4}", is_divergence(v.matrix(), &nmf.wh())? / (p.rows() * p.cols()) as f64);
        }
        nmf = update_h(&nmf, &v)?;
        nmf = update_w(&nmf, &v)?;
    }
    Ok(())
}
