//! Checkpoint file format: magic `CKPT`, a little-endian u32 header length,
//! a JSON header (architecture tag, config snapshot, tensor table, training
//! metadata), zero padding so the weight blob starts on a 64-byte boundary,
//! then the named tensors as little-endian f32.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::ParamDef;

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
const BLOB_ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainMeta {
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub test_auc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    architecture: String,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
    meta: TrainMeta,
}

/// In-memory checkpoint: parsed header plus the raw f32 blob.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub architecture: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub meta: TrainMeta,
    blob: Vec<u8>,
}

impl Checkpoint {
    pub fn build(
        architecture: &str,
        config: serde_json::Value,
        defs: &[ParamDef],
        params: &[Tensor<f32>],
        meta: TrainMeta,
    ) -> Result<Checkpoint> {
        if defs.len() != params.len() {
            return Err(Error::Internal("checkpoint defs/params length mismatch".into()));
        }
        let mut tensors = Vec::with_capacity(defs.len());
        let mut blob = Vec::new();
        for (def, p) in defs.iter().zip(params) {
            tensors.push(TensorEntry {
                name: def.name.clone(),
                shape: p.shape().to_vec(),
                dtype: "f32".into(),
                byte_offset: blob.len() as u64,
            });
            for &v in p.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(Checkpoint {
            architecture: architecture.into(),
            config,
            tensors,
            meta,
            blob,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let header = Header {
            architecture: self.architecture.clone(),
            config: self.config.clone(),
            tensors: self.tensors.clone(),
            meta: self.meta,
        };
        let header_json = serde_json::to_vec(&header).map_err(|e| Error::Internal(e.to_string()))?;
        let mut out = Vec::with_capacity(8 + header_json.len() + BLOB_ALIGN + self.blob.len());
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        while out.len() % BLOB_ALIGN != 0 {
            out.push(0);
        }
        out.extend_from_slice(&self.blob);
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 {
            return Err(Error::Format { offset: 0, msg: "file shorter than magic + header length".into() });
        }
        if &bytes[..4] != CKPT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("expected magic {:?}, found {:?}", CKPT_MAGIC, &bytes[..4]),
            });
        }
        let header_len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
        if bytes.len() < 8 + header_len {
            return Err(Error::Format { offset: 8, msg: "truncated header".into() });
        }
        let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
            .map_err(|e| Error::Format { offset: 8, msg: format!("header json: {e}") })?;
        let blob_start = (8 + header_len).div_ceil(BLOB_ALIGN) * BLOB_ALIGN;
        if bytes.len() < blob_start {
            return Err(Error::Format { offset: (8 + header_len) as u64, msg: "truncated padding".into() });
        }
        let blob = bytes[blob_start..].to_vec();

        let want: u64 = header
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>() as u64 * 4)
            .sum();
        if blob.len() as u64 != want {
            return Err(Error::Format {
                offset: blob_start as u64 + blob.len().min(want as usize) as u64,
                msg: format!("blob holds {} bytes, tensor table wants {want}", blob.len()),
            });
        }
        Ok(Checkpoint {
            architecture: header.architecture,
            config: header.config,
            tensors: header.tensors,
            meta: header.meta,
            blob,
        })
    }

    pub fn expect_architecture(&self, tag: &str) -> Result<()> {
        if self.architecture != tag {
            return Err(Error::Incompatible(format!(
                "checkpoint holds architecture {:?}, expected {tag:?}",
                self.architecture
            )));
        }
        Ok(())
    }

    /// Extract tensors in def order, verifying names and shapes before any copy.
    pub fn tensors_for(&self, defs: &[ParamDef]) -> Result<Vec<Tensor<f32>>> {
        if self.tensors.len() != defs.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint holds {} tensors, config wants {}",
                self.tensors.len(),
                defs.len()
            )));
        }
        for (entry, def) in self.tensors.iter().zip(defs) {
            if entry.name != def.name || entry.shape != def.shape {
                return Err(Error::Incompatible(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    entry.name, entry.shape, def.name, def.shape
                )));
            }
            if entry.dtype != "f32" {
                return Err(Error::Incompatible(format!(
                    "tensor {} has dtype {}, expected f32",
                    entry.name, entry.dtype
                )));
            }
        }
        let mut out = Vec::with_capacity(defs.len());
        for entry in &self.tensors {
            let numel: usize = entry.shape.iter().product();
            let start = entry.byte_offset as usize;
            let end = start + numel * 4;
            if end > self.blob.len() {
                return Err(Error::Format {
                    offset: entry.byte_offset,
                    msg: format!("tensor {} runs past the blob", entry.name),
                });
            }
            let data: Vec<f32> = self.blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            out.push(Tensor::new(&entry.shape, data));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Cnn3d, Cnn3dConfig, Mvit, MvitConfig};
    use super::*;

    #[test]
    fn save_load_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Cnn3d::<f32>::init(Cnn3dConfig::nano(16, 16), 42).unwrap();
        let meta = TrainMeta { seed: 42, epoch: 3, train_loss: 0.25, test_auc: 0.9 };
        model.to_checkpoint(meta).unwrap().write(&path).unwrap();

        let ckpt = Checkpoint::read(&path).unwrap();
        assert_eq!(ckpt.meta, meta);
        let back = Cnn3d::<f32>::from_checkpoint(&ckpt).unwrap();
        assert_eq!(back.config, model.config);
        for (a, b) in model.params().iter().zip(back.params()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn cross_architecture_load_is_incompatible() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cnn.ckpt");
        let model = Cnn3d::<f32>::init(Cnn3dConfig::nano(16, 16), 1).unwrap();
        model.to_checkpoint(TrainMeta::default()).unwrap().write(&path).unwrap();
        let ckpt = Checkpoint::read(&path).unwrap();
        assert!(matches!(
            Mvit::<f32>::from_checkpoint(&ckpt),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn mismatched_config_rejected_before_weight_copy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Mvit::<f32>::init(MvitConfig::tiny(16, 16), 1).unwrap();
        model.to_checkpoint(TrainMeta::default()).unwrap().write(&path).unwrap();
        let ckpt = Checkpoint::read(&path).unwrap();
        let other = MvitConfig::nano(16, 16);
        assert!(matches!(
            Mvit::<f32>::from_checkpoint_with_config(&ckpt, &other),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn truncated_blob_is_format_error_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.ckpt");
        let model = Cnn3d::<f32>::init(Cnn3dConfig::nano(16, 16), 2).unwrap();
        model.to_checkpoint(TrainMeta::default()).unwrap().write(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(Checkpoint::read(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_is_format_error_at_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"NOTACKPT").unwrap();
        match Checkpoint::read(&path) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at 0, got {other:?}"),
        }
    }
}
