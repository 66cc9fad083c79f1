//! The PDET trajectory container.
//!
//! Little-endian layout:
//!
//! | bytes       | content                                          |
//! |-------------|--------------------------------------------------|
//! | 0..4        | magic `PDET`                                     |
//! | 4..8        | `u32` format version (1)                         |
//! | 8..16       | `u64` header length `H`                          |
//! | 16..16+H    | UTF-8 JSON [`DatasetManifest`]                   |
//! | 16+H..      | payload: per trajectory, `f32` frames ordered    |
//! |             | `[t][channel][spatial row-major]`                |
//!
//! Trajectory offsets in the manifest count bytes from the start of the
//! payload, so the header can be serialized without knowing its own length.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetMeta, Trajectory};
use crate::datagen::{GridSpec, System};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PDET_MAGIC: &[u8; 4] = b"PDET";
pub const PDET_VERSION: u32 = 1;
const PREAMBLE: u64 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub params: Vec<f64>,
    pub seed: u64,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub system: System,
    pub grid: GridSpec,
    pub channel_names: Vec<String>,
    pub param_names: Vec<String>,
    pub trajectories: Vec<TrajectoryRecord>,
}

impl DatasetManifest {
    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            system: self.system,
            grid: self.grid.clone(),
            channel_names: self.channel_names.clone(),
            param_names: self.param_names.clone(),
        }
    }

    /// Bytes occupied by one trajectory in the payload.
    pub fn trajectory_bytes(&self) -> u64 {
        (self.meta().frame_shape().iter().product::<usize>() * 4) as u64
    }

    pub fn payload_bytes(&self) -> u64 {
        self.trajectory_bytes() * self.trajectories.len() as u64
    }
}

fn manifest_for(ds: &Dataset) -> DatasetManifest {
    let meta = &ds.meta;
    let per = (meta.frame_shape().iter().product::<usize>() * 4) as u64;
    DatasetManifest {
        format_version: PDET_VERSION,
        system: meta.system,
        grid: meta.grid.clone(),
        channel_names: meta.channel_names.clone(),
        param_names: meta.param_names.clone(),
        trajectories: ds
            .trajectories
            .iter()
            .enumerate()
            .map(|(i, t)| TrajectoryRecord {
                params: t.params.clone(),
                seed: t.seed,
                offset: i as u64 * per,
            })
            .collect(),
    }
}

/// Serializes `ds` into PDET bytes.
pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let shape = ds.meta.frame_shape();
    let manifest = manifest_for(ds);
    let header = serde_json::to_vec(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    let mut out = Vec::with_capacity(PREAMBLE as usize + header.len() + manifest.payload_bytes() as usize);
    out.extend_from_slice(PDET_MAGIC);
    out.extend_from_slice(&PDET_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (i, t) in ds.trajectories.iter().enumerate() {
        if t.frames.shape() != shape.as_slice() {
            return Err(Error::Data(format!(
                "trajectory {i} has shape {:?}, dataset expects {shape:?}",
                t.frames.shape()
            )));
        }
        if t.params.len() != ds.meta.n_params() {
            return Err(Error::Data(format!("trajectory {i} has {} parameters", t.params.len())));
        }
        for &v in t.frames.data() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::Data(format!("trajectory {i} holds a non-finite value")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_dataset(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads the header eagerly and trajectories on demand. `&self` methods
/// open their own file handle, so a reader can be shared across threads.
#[derive(Clone, Debug)]
pub struct PdetReader {
    path: PathBuf,
    manifest: DatasetManifest,
    payload_start: u64,
}

impl PdetReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let file_len = f.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut pre = [0u8; PREAMBLE as usize];
        if file_len < PREAMBLE {
            return Err(Error::Truncated {
                path,
                found: file_len,
                expected: PREAMBLE,
            });
        }
        f.read_exact(&mut pre).map_err(|e| Error::io(&path, e))?;
        if &pre[0..4] != PDET_MAGIC {
            return Err(Error::BadMagic { path, expected: "PDET" });
        }
        let version = u32::from_le_bytes(pre[4..8].try_into().unwrap());
        if version != PDET_VERSION {
            return Err(Error::VersionMismatch {
                path,
                found: version,
                expected: PDET_VERSION,
            });
        }
        let hlen = u64::from_le_bytes(pre[8..16].try_into().unwrap());
        if file_len < PREAMBLE + hlen {
            return Err(Error::Truncated {
                path,
                found: file_len,
                expected: PREAMBLE + hlen,
            });
        }
        let mut header = vec![0u8; hlen as usize];
        f.read_exact(&mut header).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_slice(&header).map_err(|e| Error::Header {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        validate_manifest(&path, &manifest)?;
        let expected = PREAMBLE + hlen + manifest.payload_bytes();
        if file_len != expected {
            return Err(Error::Truncated {
                path,
                found: file_len,
                expected,
            });
        }
        Ok(PdetReader {
            path,
            manifest,
            payload_start: PREAMBLE + hlen,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.manifest.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.trajectories.is_empty()
    }

    /// Absolute file offset of trajectory `i`'s first byte.
    pub fn absolute_offset(&self, i: usize) -> u64 {
        self.payload_start + self.manifest.trajectories[i].offset
    }

    pub fn read_trajectory(&self, i: usize) -> Result<Trajectory> {
        let rec = self
            .manifest
            .trajectories
            .get(i)
            .ok_or_else(|| Error::Data(format!("trajectory index {i} out of range ({})", self.len())))?;
        let shape = self.manifest.meta().frame_shape();
        let n: usize = shape.iter().product();
        let mut f = File::open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        f.seek(SeekFrom::Start(self.absolute_offset(i)))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = vec![0u8; n * 4];
        f.read_exact(&mut buf).map_err(|e| Error::io(&self.path, e))?;
        let mut data = Vec::with_capacity(n);
        for c in buf.chunks_exact(4) {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: self.path.clone(),
                    what: format!("trajectory {i}"),
                });
            }
            data.push(v as f64);
        }
        Ok(Trajectory {
            params: rec.params.clone(),
            seed: rec.seed,
            frames: Tensor::new(shape, data)?,
        })
    }

    pub fn read_all(&self) -> Result<Dataset> {
        let trajectories = (0..self.len())
            .map(|i| self.read_trajectory(i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            meta: self.manifest.meta(),
            trajectories,
        })
    }
}

fn validate_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    let bad = |msg: String| Error::Header {
        path: path.to_path_buf(),
        msg,
    };
    if m.format_version != PDET_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: m.format_version,
            expected: PDET_VERSION,
        });
    }
    m.grid.validate().map_err(|e| bad(e.to_string()))?;
    if m.channel_names.is_empty() {
        return Err(bad("no channels".into()));
    }
    let per = m.trajectory_bytes();
    for (i, r) in m.trajectories.iter().enumerate() {
        if r.offset != i as u64 * per {
            return Err(bad(format!(
                "trajectory {i} offset {} breaks the contiguous layout (expected {})",
                r.offset,
                i as u64 * per
            )));
        }
        if r.params.len() != m.param_names.len() {
            return Err(bad(format!("trajectory {i} has {} parameters", r.params.len())));
        }
    }
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    PdetReader::open(path)?.read_all()
}

/// Hex SHA-256 of a file's bytes.
pub fn dataset_hash(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
