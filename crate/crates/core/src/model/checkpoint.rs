//! The PDTC checkpoint container.
//!
//! Little-endian layout: magic `PDTC`, `u32` version, `u64` header length,
//! JSON header (architecture config, normalization statistics, provenance,
//! buffer names and shapes), then every weight buffer as `f64` in layout
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig, Params};
use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PDTC_MAGIC: &[u8; 4] = b"PDTC";
pub const PDTC_VERSION: u32 = 1;

/// Where a set of weights came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Hex SHA-256 of the training dataset file (empty if trained in memory).
    pub dataset_hash: String,
    pub seed: u64,
    pub epochs: usize,
    /// Hash of the checkpoint these weights were finetuned from.
    pub lineage: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BufferInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    norm_stats: NormStats,
    provenance: Provenance,
    buffers: Vec<BufferInfo>,
}

/// Trained model together with everything needed to run it on raw data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub norm: NormStats,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: PDTC_VERSION,
            model: self.model.config.clone(),
            norm_stats: self.norm.clone(),
            provenance: self.provenance.clone(),
            buffers: self
                .model
                .params
                .iter()
                .map(|(n, t)| BufferInfo {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.model.params.count());
        out.extend_from_slice(PDTC_MAGIC);
        out.extend_from_slice(&PDTC_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.model.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses checkpoint bytes; `path` only labels errors.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let truncated = |expected: u64| Error::Truncated {
            path: path.to_path_buf(),
            found: bytes.len() as u64,
            expected,
        };
        if bytes.len() < 4 || &bytes[..4] != PDTC_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: "PDTC",
            });
        }
        if bytes.len() < 16 {
            return Err(truncated(16));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != PDTC_VERSION {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                found: version,
                expected: PDTC_VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let start = 16u64.saturating_add(hlen);
        if (bytes.len() as u64) < start {
            return Err(truncated(start));
        }
        let header_err = |msg: String| Error::Header {
            path: path.to_path_buf(),
            msg,
        };
        let header: Header =
            serde_json::from_slice(&bytes[16..start as usize]).map_err(|e| header_err(e.to_string()))?;
        if header.format_version != PDTC_VERSION {
            return Err(header_err(format!("header declares version {}", header.format_version)));
        }
        let total: u64 = header
            .buffers
            .iter()
            .map(|b| b.shape.iter().product::<usize>() as u64 * 8)
            .sum();
        if bytes.len() as u64 != start + total {
            return Err(truncated(start + total));
        }
        let mut params = Params::new();
        let mut off = start as usize;
        for b in header.buffers {
            let n: usize = b.shape.iter().product();
            let data: Vec<f64> = bytes[off..off + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            off += 8 * n;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    path: path.to_path_buf(),
                    what: format!("weight buffer {}", b.name),
                });
            }
            let t = Tensor::new(b.shape, data).map_err(|e| header_err(e.to_string()))?;
            params.push(b.name, t);
        }
        let model = Model::from_parts(header.model, params).map_err(|e| header_err(e.to_string()))?;
        Ok(Checkpoint {
            model,
            norm: header.norm_stats,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    /// Hex SHA-256 of the encoded checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.encode()?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FnoConfig, ViTConfig};

    fn sample(config: ModelConfig) -> Checkpoint {
        Checkpoint {
            model: Model::init(config, 5).unwrap(),
            norm: NormStats {
                mean: vec![0.1],
                std: vec![0.7],
                param_min: vec![0.1],
                param_max: vec![2.0],
            },
            provenance: Provenance {
                dataset_hash: "ab".repeat(32),
                seed: 5,
                epochs: 3,
                lineage: None,
            },
        }
    }

    fn vit() -> ModelConfig {
        let mut c = ViTConfig::new(&[16], 3, 1, 4).with_size(1, 8);
        c.patch = vec![4, 1];
        c.heads = 2;
        ModelConfig::Vit(c)
    }

    #[test]
    fn round_trip_is_byte_identical_and_predicts_identically() {
        let dir = tempfile::tempdir().unwrap();
        for cfg in [vit(), ModelConfig::Fno(FnoConfig::new(&[16], 1, 3, 4))] {
            let mut ck = sample(cfg);
            // give the zero-initialized head some weight so outputs are non-trivial
            for t in ck.model.params.tensors_mut() {
                t.data_mut()
                    .iter_mut()
                    .enumerate()
                    .for_each(|(i, v)| *v += 1e-3 * (i as f64).sin());
            }
            let path = dir.path().join("m.pdtc");
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.encode().unwrap(), std::fs::read(&path).unwrap());
            let ctx = Tensor::from_fn(&[4, 3, 16], |i| (i as f64 * 0.3).cos());
            let (a, b) = (ck.model.predict(&ctx).unwrap(), back.model.predict(&ctx).unwrap());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn corruption_is_detected() {
        let ck = sample(vit());
        let bytes = ck.encode().unwrap();
        let p = Path::new("x.pdtc");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad, p), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            Checkpoint::decode(&bad, p),
            Err(Error::VersionMismatch { .. })
        ));
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 8], p),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(Checkpoint::decode(&bad, p), Err(Error::NonFinite { .. })));
        assert_eq!(ck.hash().unwrap().len(), 64);
    }
}
