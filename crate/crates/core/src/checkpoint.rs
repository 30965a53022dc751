//! Single-file checkpoint archive.
//!
//! Layout: the 8-byte magic `SACCCKPT`, a little-endian `u32` format version,
//! a `u64` header length, a JSON [`CheckpointHeader`], then the raw
//! little-endian `f32` data of every tensor in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"SACCCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("tensor {0} is missing from the checkpoint")]
    MissingTensor(String),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything except the tensor payload. `config` is the run configuration
/// snapshot as JSON so this module stays independent of its type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: serde_json::Value,
    /// Epochs completed.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: u64,
    pub rng: RngState,
    pub tensors: Vec<TensorEntry>,
}

/// All randomness in a run is derived from the seed and the epoch counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    /// One buffer per header entry.
    pub data: Vec<Vec<f32>>,
}

fn io_err(path: &Path, e: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<(&TensorEntry, &[f32]), CheckpointError> {
        self.header
            .tensors
            .iter()
            .zip(&self.data)
            .find(|(e, _)| e.name == name)
            .map(|(e, d)| (e, d.as_slice()))
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let payload: usize = self.data.iter().map(|d| d.len() * 4).sum();
        let mut out = Vec::with_capacity(20 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for d in &self.data {
            for v in d {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 20 {
            return Err(if bytes.starts_with(MAGIC) || bytes.len() < 8 {
                CheckpointError::Truncated
            } else {
                CheckpointError::BadMagic
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let hend = 20usize.checked_add(hlen).ok_or(CheckpointError::Truncated)?;
        if bytes.len() < hend {
            return Err(CheckpointError::Truncated);
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[20..hend]).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut pos = hend;
        let mut data = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let end = pos + e.len() * 4;
            if bytes.len() < end {
                return Err(CheckpointError::Truncated);
            }
            data.push(
                bytes[pos..end]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
            pos = end;
        }
        if pos != bytes.len() {
            return Err(CheckpointError::Header(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self { header, data })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path).map_err(|e| io_err(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                config: serde_json::json!({"a": 1}),
                epoch: 3,
                step: 12,
                rng: RngState { seed: 5, next_epoch: 3 },
                tensors: vec![
                    TensorEntry { name: "w".into(), shape: vec![2, 2] },
                    TensorEntry { name: "b".into(), shape: vec![3] },
                ],
            },
            data: vec![vec![1.0, -2.0, 3.5, f32::MIN_POSITIVE], vec![0.0, 7.0, -0.0]],
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.tensor("b").unwrap().1, &[0.0, 7.0, -0.0]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        sample().save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), sample());
    }

    #[test]
    fn rejects_damage() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(CheckpointError::Version { found: 2 })));
        assert!(matches!(sample().tensor("nope"), Err(CheckpointError::MissingTensor(_))));
    }
}
