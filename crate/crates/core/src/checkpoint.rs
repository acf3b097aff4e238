//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `MFTPCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the JSON manifest, then
//! raw little-endian `f64` arrays at the byte offsets the manifest lists
//! (relative to the end of the manifest).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::nn::ParameterSet;
use crate::trainer::{EpochLog, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"MFTPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Value,
    AdamFirst,
    AdamSecond,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub offset: u64,
}

/// Seed and position of the data-order generator; epoch `e` shuffles with
/// stream `e + 1` of `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dtype: String,
    pub endianness: String,
    pub with_map: bool,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub state: TrainState,
    pub rng: RngState,
    pub history: Vec<EpochLog>,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    pub params: ParameterSet,
    pub train: Option<TrainConfig>,
    pub state: TrainState,
    pub history: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data: Vec<u8> = Vec::new();
        let mut tensors = Vec::new();
        for e in self.params.entries() {
            let arrays: [(TensorKind, &[f64]); 3] = [
                (TensorKind::Value, e.value.values()),
                (TensorKind::AdamFirst, &e.first_moment),
                (TensorKind::AdamSecond, &e.second_moment),
            ];
            for (kind, vals) in arrays {
                tensors.push(TensorRecord {
                    name: e.name.clone(),
                    kind,
                    shape: e.value.shape().to_vec(),
                    offset: data.len() as u64,
                });
                for v in vals {
                    data.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let manifest = CheckpointManifest {
            dtype: "f64".into(),
            endianness: "little".into(),
            with_map: self.network.with_map,
            model: self.network.cfg.clone(),
            train: self.train.clone(),
            state: self.state,
            rng: RngState {
                seed: self.train.as_ref().map_or(0, |t| t.seed),
                next_epoch: self.state.epoch,
            },
            history: self.history.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(20..20 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: CheckpointManifest = serde_json::from_slice(json)?;
        if manifest.dtype != "f64" || manifest.endianness != "little" {
            return Err(bad("only little-endian f64 arrays are supported"));
        }
        let data = &bytes[20 + len..];
        let (network, mut params) = Network::new(&manifest.model, manifest.with_map, 0)?;
        let mut seen = vec![[false; 3]; params.len()];
        for t in &manifest.tensors {
            let id = params
                .id(&t.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", t.name)))?;
            let entry = params.get_mut(id);
            if entry.value.shape() != t.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?} in the file but {:?} in the model",
                    t.name,
                    t.shape,
                    entry.value.shape()
                )));
            }
            let n = entry.value.len();
            let start = t.offset as usize;
            let raw = data
                .get(start..start + 8 * n)
                .ok_or_else(|| Error::Checkpoint(format!("array {} out of bounds", t.name)))?;
            let vals = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
            let slot = match t.kind {
                TensorKind::Value => 0,
                TensorKind::AdamFirst => 1,
                TensorKind::AdamSecond => 2,
            };
            let dst: &mut [f64] = match t.kind {
                TensorKind::Value => entry.value.values_mut(),
                TensorKind::AdamFirst => &mut entry.first_moment,
                TensorKind::AdamSecond => &mut entry.second_moment,
            };
            for (d, v) in dst.iter_mut().zip(vals) {
                *d = v;
            }
            seen[id.index()][slot] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s[0]) {
            return Err(Error::Checkpoint(format!(
                "parameter {} missing from file",
                params.entries()[i].name
            )));
        }
        Ok(Checkpoint {
            network,
            params,
            train: manifest.train,
            state: manifest.state,
            history: manifest.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_preserves_every_bit() {
        let (network, mut params) = Network::new(&small(), true, 5).unwrap();
        params.entries_mut()[3].first_moment[0] = 0.125;
        params.entries_mut()[4].second_moment[1] = f64::MIN_POSITIVE;
        let ck = Checkpoint {
            network,
            params,
            train: Some(TrainConfig::default()),
            state: TrainState { epoch: 2, step: 40 },
            history: Vec::new(),
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.params.fingerprint(), ck.params.fingerprint());
        assert_eq!(back.params.entries()[3].first_moment, ck.params.entries()[3].first_moment);
        assert_eq!(back.params.entries()[4].second_moment, ck.params.entries()[4].second_moment);
        assert_eq!(back.state, ck.state);
        assert_eq!(back.network.cfg, ck.network.cfg);
    }

    #[test]
    fn rejects_corruption() {
        let (network, params) = Network::new(&small(), false, 1).unwrap();
        let ck = Checkpoint {
            network,
            params,
            train: None,
            state: TrainState { epoch: 0, step: 0 },
            history: Vec::new(),
        };
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
