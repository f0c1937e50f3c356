use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a mono RIFF file (16/24/32-bit PCM or 32-bit float).
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected mono, found {} channels", spec.channels),
        });
    }
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err(path))?,
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(wav_err(path))?
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono RIFF file. PCM output is clipped to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for &x in &w.samples {
        match format {
            WavFormat::Pcm16 => {
                let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(v).map_err(wav_err(path))?;
            }
            WavFormat::Float32 => writer.write_sample(x as f32).map_err(wav_err(path))?,
        }
    }
    writer.finalize().map_err(wav_err(path))
}
