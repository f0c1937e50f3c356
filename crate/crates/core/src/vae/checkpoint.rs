//! Binary model checkpoints with a JSON metadata sidecar.
//!
//! Layout (little endian): magic `SWVAECK1`, u32 version, u8 kind, u32 id,
//! u32 latent/freq/visual dims, f64 input shift and scale (`freq` each), u8
//! network count, then per network: u8 activation, u32 layer count, u32 sizes,
//! f64 parameters.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mlp::{param_count, Activation, Mlp};
use super::model::{ModelKind, VaeModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SWVAECK1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub id: u32,
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub freq_bins: usize,
    pub visual_dim: usize,
    pub param_count: usize,
    pub loss_curve: Vec<f64>,
    pub seed: u64,
}

impl CheckpointMeta {
    pub fn for_model(model: &VaeModel, loss_curve: Vec<f64>, seed: u64) -> Self {
        CheckpointMeta {
            id: model.id,
            kind: model.kind,
            latent_dim: model.latent_dim,
            freq_bins: model.freq_bins,
            visual_dim: model.visual_dim,
            param_count: model.param_count(),
            loss_curve,
            seed,
        }
    }
}

/// Sidecar path: `model.bin` -> `model.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_model(model: &VaeModel) -> Vec<u8> {
    let mut b = Vec::with_capacity(8 * model.param_count() + 256);
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.push(match model.kind {
        ModelKind::AudioOnly => 0,
        ModelKind::AudioVisual => 1,
    });
    for x in [model.id, model.latent_dim as u32, model.freq_bins as u32, model.visual_dim as u32] {
        b.extend_from_slice(&x.to_le_bytes());
    }
    for x in model.input_shift.iter().chain(&model.input_scale) {
        b.extend_from_slice(&x.to_le_bytes());
    }
    let nets: Vec<&Mlp> = [Some(&model.encoder), Some(&model.decoder), model.prior.as_ref()]
        .into_iter()
        .flatten()
        .collect();
    b.push(nets.len() as u8);
    for net in nets {
        b.push(net.activation().code());
        b.extend_from_slice(&(net.sizes().len() as u32).to_le_bytes());
        for &s in net.sizes() {
            b.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for p in net.params() {
            b.extend_from_slice(&p.to_le_bytes());
        }
    }
    b
}

struct Cursor<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(self.err("truncated checkpoint"));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn mlp(&mut self) -> Result<Mlp> {
        let act = Activation::from_code(self.u8()?).ok_or_else(|| self.err("unknown activation"))?;
        let n = self.u32()? as usize;
        if !(2..=64).contains(&n) {
            return Err(self.err(format!("implausible layer count {n}")));
        }
        let sizes = (0..n).map(|_| self.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        if sizes.iter().any(|&s| s == 0 || s > 1 << 20) {
            return Err(self.err(format!("implausible layer sizes {sizes:?}")));
        }
        let params = self.f64s(param_count(&sizes))?;
        Mlp::from_params(&sizes, act, params).map_err(|e| self.err(e.to_string()))
    }
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<VaeModel> {
    let mut c = Cursor { bytes, path };
    if c.take(8)? != MAGIC {
        return Err(c.err("not a model checkpoint"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(c.err(format!("unsupported checkpoint version {version}")));
    }
    let kind = match c.u8()? {
        0 => ModelKind::AudioOnly,
        1 => ModelKind::AudioVisual,
        k => return Err(c.err(format!("unknown model kind {k}"))),
    };
    let id = c.u32()?;
    let (latent_dim, freq_bins, visual_dim) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
    let input_shift = c.f64s(freq_bins)?;
    let input_scale = c.f64s(freq_bins)?;
    let n_nets = c.u8()?;
    let expected = if kind == ModelKind::AudioOnly { 2 } else { 3 };
    if n_nets != expected {
        return Err(c.err(format!("expected {expected} networks, found {n_nets}")));
    }
    let encoder = c.mlp()?;
    let decoder = c.mlp()?;
    let prior = if expected == 3 { Some(c.mlp()?) } else { None };
    if !c.bytes.is_empty() {
        return Err(c.err("trailing bytes"));
    }
    let v = visual_dim;
    let consistent = encoder.input_dim() == freq_bins + v
        && encoder.output_dim() == 2 * latent_dim
        && decoder.input_dim() == latent_dim + v
        && decoder.output_dim() == freq_bins
        && prior.as_ref().is_none_or(|p| p.input_dim() == v && p.output_dim() == 2 * latent_dim);
    if !consistent {
        return Err(c.err("network shapes disagree with header dimensions"));
    }
    Ok(VaeModel {
        id,
        kind,
        latent_dim,
        freq_bins,
        visual_dim,
        input_shift,
        input_scale,
        encoder,
        decoder,
        prior,
    })
}

/// Writes the binary checkpoint and, when `meta` is given, its JSON sidecar.
pub fn save_model(model: &VaeModel, path: &Path, meta: Option<&CheckpointMeta>) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_model(model)).map_err(|e| Error::io(path, e))?;
    if let Some(meta) = meta {
        let mp = meta_path(path);
        let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
        std::fs::write(&mp, json).map_err(|e| Error::io(&mp, e))?;
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<VaeModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: mp,
        reason: e.to_string(),
    })
}
