//! Binary frame-feature files: visual embeddings, occlusion masks, labels.
//!
//! Layout (little-endian): 8-byte magic `SWFEAT01`, `u32` frames, `u32` dim,
//! then `frames * dim` `f32` values in row-major order.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

pub const FEATURE_MAGIC: &[u8; 8] = b"SWFEAT01";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureFile {
    pub frames: usize,
    pub dim: usize,
    pub values: Vec<Vec<f64>>,
}

pub fn write_features(path: impl AsRef<Path>, m: &RealMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(16 + 4 * m.as_slice().len());
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &x in m.as_slice() {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<RealMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != FEATURE_MAGIC {
        return Err(bad("missing SWFEAT01 header"));
    }
    let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * frames * dim {
        return Err(bad(&format!(
            "header says {frames}x{dim} but body holds {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    RealMatrix::from_vec(frames, dim, data).map_err(|_| bad("non-finite value"))
}

/// Human-readable JSON export of the same content.
pub fn write_features_json(path: impl AsRef<Path>, m: &RealMatrix) -> Result<()> {
    let path = path.as_ref();
    let doc = FeatureFile {
        frames: m.rows(),
        dim: m.cols(),
        values: m.rows_iter().map(|r| r.iter().map(|&x| x as f32 as f64).collect()).collect(),
    };
    let text = serde_json::to_string_pretty(&doc).expect("feature export serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.feat");
        let m = RealMatrix::from_fn(7, 3, |r, c| (r as f64 - c as f64) * 0.37);
        write_features(&p, &m).unwrap();
        let back = read_features(&p).unwrap();
        assert_eq!(back.shape(), (7, 3));
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(*a as f32 as f64, *b);
        }
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"SWFEAT01");
        assert_eq!(bytes.len(), 16 + 7 * 3 * 4);
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.feat");
        write_features(&p, &RealMatrix::zeros(2, 2)).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_features(&p), Err(Error::Format { .. })));
    }
}
