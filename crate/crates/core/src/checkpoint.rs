//! Parameter checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes   "BWCK"
//! version      1 byte    0x01
//! digest       32 bytes  SHA-256 of the canonical config JSON below
//! config_len   u32
//! config       config_len bytes, serde_json of ModelConfig
//! epoch        u32
//! val_accuracy f64
//! fold_id      u32
//! tensor_count u32
//! per tensor (declaration order: parameters, then bn running stats):
//!   name_len   u16
//!   name       name_len bytes UTF-8
//!   ndim       u8
//!   dims       ndim x u32
//!   data       prod(dims) x f32
//! ```
//!
//! Values are stored as 32-bit floats; a network restored from disk is
//! bit-identical to the in-memory checkpoint it was saved from because
//! checkpoints themselves hold f32-rounded parameters.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"BWCK";
const VERSION: u8 = 1;

/// A training snapshot: the architecture, selection metadata and every
/// tensor needed to restore the network.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub val_accuracy: f64,
    pub fold_id: u32,
    pub tensors: Vec<(String, Tensor)>,
}

/// SHA-256 of the canonical (serde_json) config encoding.
pub fn config_digest(config: &ModelConfig) -> [u8; 32] {
    let json = serde_json::to_vec(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&json);
    hasher.finalize().into()
}

/// Rounds every value through f32, the checkpoint storage precision.
fn round_f32(t: &Tensor) -> Tensor {
    let data: Vec<f64> = t.data().iter().map(|&v| v as f32 as f64).collect();
    Tensor::new(t.shape().to_vec(), data).expect("shape unchanged")
}

impl Checkpoint {
    /// Snapshots a network. Parameters are rounded through f32 here so the
    /// in-memory checkpoint and its on-disk form predict identically.
    pub fn from_network(net: &Network, epoch: usize, val_accuracy: f64, fold_id: u32) -> Self {
        Checkpoint {
            config: net.config().clone(),
            epoch,
            val_accuracy,
            fold_id,
            tensors: net
                .named_tensors()
                .into_iter()
                .map(|(name, t)| (name, round_f32(&t)))
                .collect(),
        }
    }

    pub fn to_network(&self) -> Result<Network> {
        Network::from_tensors(&self.config, &self.tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let config_json = serde_json::to_vec(&self.config).expect("config serializes");

        let mut write = |bytes: &[u8]| -> Result<()> {
            w.write_all(bytes).map_err(|e| Error::io(path, e))
        };
        write(MAGIC)?;
        write(&[VERSION])?;
        write(&config_digest(&self.config))?;
        write(&(config_json.len() as u32).to_le_bytes())?;
        write(&config_json)?;
        write(&(self.epoch as u32).to_le_bytes())?;
        write(&self.val_accuracy.to_le_bytes())?;
        write(&self.fold_id.to_le_bytes())?;
        write(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.tensors {
            write(&(name.len() as u16).to_le_bytes())?;
            write(name.as_bytes())?;
            write(&[tensor.shape().len() as u8])?;
            for &dim in tensor.shape() {
                write(&(dim as u32).to_le_bytes())?;
            }
            for &v in tensor.data() {
                write(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let format_err = |detail: String| Error::Format {
            path: path.to_path_buf(),
            detail,
        };

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != MAGIC {
            return Err(format_err("bad magic, not a checkpoint".into()));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version).map_err(|e| Error::io(path, e))?;
        if version[0] != VERSION {
            return Err(format_err(format!(
                "unsupported checkpoint version {}",
                version[0]
            )));
        }
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest).map_err(|e| Error::io(path, e))?;
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4).map_err(|e| Error::io(path, e))?;
        let config_len = u32::from_le_bytes(buf4) as usize;
        let mut config_json = vec![0u8; config_len];
        r.read_exact(&mut config_json).map_err(|e| Error::io(path, e))?;
        let config: ModelConfig = serde_json::from_slice(&config_json)
            .map_err(|e| format_err(format!("config does not parse: {e}")))?;
        if config_digest(&config) != digest {
            return Err(format_err("config digest mismatch".into()));
        }

        r.read_exact(&mut buf4).map_err(|e| Error::io(path, e))?;
        let epoch = u32::from_le_bytes(buf4) as usize;
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8).map_err(|e| Error::io(path, e))?;
        let val_accuracy = f64::from_le_bytes(buf8);
        r.read_exact(&mut buf4).map_err(|e| Error::io(path, e))?;
        let fold_id = u32::from_le_bytes(buf4);
        r.read_exact(&mut buf4).map_err(|e| Error::io(path, e))?;
        let tensor_count = u32::from_le_bytes(buf4) as usize;

        let mut tensors = Vec::with_capacity(tensor_count);
        for _ in 0..tensor_count {
            let mut buf2 = [0u8; 2];
            r.read_exact(&mut buf2).map_err(|e| Error::io(path, e))?;
            let name_len = u16::from_le_bytes(buf2) as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes).map_err(|e| Error::io(path, e))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| format_err(format!("tensor name is not UTF-8: {e}")))?;
            let mut ndim = [0u8; 1];
            r.read_exact(&mut ndim).map_err(|e| Error::io(path, e))?;
            let mut shape = Vec::with_capacity(ndim[0] as usize);
            for _ in 0..ndim[0] {
                r.read_exact(&mut buf4).map_err(|e| Error::io(path, e))?;
                shape.push(u32::from_le_bytes(buf4) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * 4];
            r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }

        Ok(Checkpoint {
            config,
            epoch,
            val_accuracy,
            fold_id,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build, ModelConfig};

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let config = ModelConfig::tiny();
        let net = build(&config, 17).unwrap();
        let ckpt = Checkpoint::from_network(&net, 12, 0.875, 3);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bwck");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();

        assert_eq!(loaded.epoch, 12);
        assert_eq!(loaded.fold_id, 3);
        assert!((loaded.val_accuracy - 0.875).abs() < 1e-12);
        assert_eq!(loaded.config, config);

        // Saved and loaded checkpoints predict bit-identically.
        let batch = crate::tensor::Tensor::full(vec![2, 1, 32, 32], 0.4);
        let a = ckpt.to_network().unwrap().predict(&batch).unwrap();
        let b = loaded.to_network().unwrap().predict(&batch).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn load_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bwck");
        std::fs::write(&path, b"WHAT1234").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format { .. })));
    }
}
