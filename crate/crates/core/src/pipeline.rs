//! Glue between the signal, model and inference layers: corpus synthesis,
//! training-set extraction and waveform-in, waveform-out enhancement.

use crate::error::{Error, Result};
use crate::numerics::{RealMatrix, Rng};
use crate::signal::{istft, mix_at_snr, stft, synth_clean, synth_noise, CleanUtterance, NoiseKind, StftConfig, SynthConfig, VisualSequence, Waveform};
use crate::swvae::{enhance, EnhanceOutput, EnhancerConfig};
use crate::vae::{train_vae, ModelKind, TrainConfig, TrainReport, TrainingSet, VaeArch, VaeModel};

/// `count` clean utterances, each drawn from its own seeded substream.
pub fn synth_corpus(
    count: usize,
    regimes: usize,
    duration: f64,
    synth: &SynthConfig,
    stft_config: &StftConfig,
    seed: u64,
) -> Result<Vec<CleanUtterance>> {
    (0..count)
        .map(|i| synth_clean(regimes, duration, synth, stft_config, &mut Rng::substream(seed, &[0x5e, i as u64])))
        .collect()
}

/// Clean power frames (and visual vectors when `with_visual`) from a corpus,
/// optionally restricted to frames labelled `regime`.
pub fn training_set(
    corpus: &[CleanUtterance],
    stft_config: &StftConfig,
    with_visual: bool,
    regime: Option<usize>,
) -> Result<TrainingSet> {
    let mut power = Vec::new();
    let mut visual = Vec::new();
    let mut rows = 0;
    let mut bins = 0;
    let mut vdim = 0;
    for u in corpus {
        let spec = stft(&u.waveform, stft_config)?;
        if spec.frames() != u.labels.len() || spec.frames() != u.visual.frames() {
            return Err(Error::shape("utterance frames", spec.frames(), u.labels.len()));
        }
        bins = spec.bins();
        vdim = u.visual.dim();
        let p = spec.power();
        for t in 0..spec.frames() {
            if regime.is_some_and(|r| u.labels[t] != r) {
                continue;
            }
            power.extend_from_slice(p.row(t));
            visual.extend_from_slice(u.visual.frame(t));
            rows += 1;
        }
    }
    if rows == 0 {
        return Err(Error::InvalidInput("no training frames selected".into()));
    }
    let power = RealMatrix::from_vec(rows, bins, power)?;
    let visual = if with_visual { Some(RealMatrix::from_vec(rows, vdim, visual)?) } else { None };
    TrainingSet::new(power, visual)
}

/// Builds and trains one model on `data`.
pub fn train_model(
    id: u32,
    kind: ModelKind,
    arch: &VaeArch,
    data: &TrainingSet,
    train: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    let mut rng = Rng::substream(seed, &[0x7a, id as u64]);
    let vdim = data.visual.as_ref().map_or(0, |v| v.cols());
    let model = VaeModel::new(id, kind, arch, data.power.cols(), vdim, &mut rng)?;
    train_vae(model, data, train, &mut rng)
}

/// Mixes `clean` with unit-power noise of `kind` at `snr_db`.
pub fn make_mixture(clean: &Waveform, kind: NoiseKind, snr_db: f64, seed: u64) -> Result<Waveform> {
    let noise = synth_noise(kind, clean.len(), clean.sample_rate, &mut Rng::new(seed))?;
    mix_at_snr(clean, &noise, snr_db)
}

/// STFT, variational EM and inverse STFT of one mixture.
pub fn enhance_waveform(
    mixture: &Waveform,
    visual: Option<&VisualSequence>,
    models: &[VaeModel],
    stft_config: &StftConfig,
    cfg: &EnhancerConfig,
) -> Result<(Waveform, EnhanceOutput)> {
    let x = stft(mixture, stft_config)?;
    let out = enhance(&x, visual, models, cfg)?;
    let w = istft(&out.estimate)?;
    Ok((w, out))
}
