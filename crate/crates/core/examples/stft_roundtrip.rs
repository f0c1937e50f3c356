//! Analysis and resynthesis of a synthetic utterance, plus a WAV round trip.
use swvae::numerics::Rng;
use swvae::signal::{istft, read_wav, stft, synth_clean, write_wav, StftConfig, SynthConfig, WavFormat};

fn main() -> swvae::Result<()> {
    let cfg = StftConfig { window_len: 512, hop: 128, ..StftConfig::default() };
    let utt = synth_clean(2, 1.0, &SynthConfig::default(), &cfg, &mut Rng::new(7))?;
    let spec = stft(&utt.waveform, &cfg)?;
    println!("{} samples -> {} frames x {} bins", utt.waveform.len(), spec.frames(), spec.bins());

    let back = istft(&spec)?;
    let err: f64 = utt.waveform.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max reconstruction error {err:.2e}");

    let path = std::env::temp_dir().join("swvae_stft_roundtrip.wav");
    write_wav(&path, &back, WavFormat::Float32)?;
    let read = read_wav(&path)?;
    println!("wrote and re-read {} ({} samples at {} Hz)", path.display(), read.len(), read.sample_rate);
    Ok(())
}
