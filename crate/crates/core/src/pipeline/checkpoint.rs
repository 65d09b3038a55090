//! Versioned binary checkpoints: parameter snapshot + step + validation
//! score, guarded by a hash of the experiment configuration.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::params::ParamSet;

const MAGIC: &[u8; 8] = b"RKDCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("truncated checkpoint file")]
    Truncated,
    #[error("checkpoint was written for a different configuration")]
    ConfigHashMismatch,
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Snapshot of model parameters at one training step.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ParamSet<f64>,
    pub step: usize,
    pub val_ndcg: f64,
    pub config_hash: [u8; 32],
}

pub fn hash_bytes(bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().into()
}

impl Checkpoint {
    pub fn write_file(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&self.config_hash)?;
        w.write_all(&(self.step as u64).to_le_bytes())?;
        w.write_all(&self.val_ndcg.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for (name, tensor) in self.params.iter() {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(tensor.rank() as u64).to_le_bytes())?;
            for &d in tensor.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Read a checkpoint, verifying the configuration hash when
    /// `expected_hash` is provided.
    pub fn read_file(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| CheckpointError::Truncated)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut hash = [0u8; 32];
        r.read_exact(&mut hash).map_err(|_| CheckpointError::Truncated)?;
        if let Some(expect) = expected_hash {
            if expect != &hash {
                return Err(CheckpointError::ConfigHashMismatch);
            }
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| CheckpointError::Truncated)?;
        let step = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8).map_err(|_| CheckpointError::Truncated)?;
        let val_ndcg = f64::from_le_bytes(b8);
        r.read_exact(&mut b8).map_err(|_| CheckpointError::Truncated)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            r.read_exact(&mut b8).map_err(|_| CheckpointError::Truncated)?;
            let name_len = u64::from_le_bytes(b8) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(|_| CheckpointError::Truncated)?;
            let name = String::from_utf8(name)
                .map_err(|_| CheckpointError::ParamMismatch("non-utf8 name".into()))?;
            r.read_exact(&mut b8).map_err(|_| CheckpointError::Truncated)?;
            let rank = u64::from_le_bytes(b8) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                r.read_exact(&mut b8).map_err(|_| CheckpointError::Truncated)?;
                shape.push(u64::from_le_bytes(b8) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut b8).map_err(|_| CheckpointError::Truncated)?;
                data.push(f64::from_le_bytes(b8));
            }
            params.add(
                name,
                Tensor::new(shape, data)
                    .map_err(|e| CheckpointError::ParamMismatch(e.to_string()))?,
            );
        }
        Ok(Checkpoint {
            params,
            step,
            val_ndcg,
            config_hash: hash,
        })
    }

    /// Copy the snapshot into a live parameter set (names and shapes must
    /// match exactly).
    pub fn apply_to(&self, target: &mut ParamSet<f64>) -> Result<(), CheckpointError> {
        if target.len() != self.params.len() {
            return Err(CheckpointError::ParamMismatch(format!(
                "{} parameters vs {} in checkpoint",
                target.len(),
                self.params.len()
            )));
        }
        for i in 0..self.params.len() {
            let id = crate::params::ParamId(i);
            let (src_name, src) = (self.params.name(id), self.params.get(id));
            if target.name(id) != src_name || target.get(id).shape() != src.shape() {
                return Err(CheckpointError::ParamMismatch(format!(
                    "parameter {i}: {src_name} {:?} vs {} {:?}",
                    src.shape(),
                    target.name(id),
                    target.get(id).shape()
                )));
            }
        }
        for i in 0..self.params.len() {
            let id = crate::params::ParamId(i);
            let src = self.params.get(id).clone();
            *target.get_mut(id) = src;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_exact_and_hash_guarded() {
        let mut params: ParamSet<f64> = ParamSet::new();
        params.add("a", Tensor::new(vec![2, 2], vec![1.5, -2.25, 1e-300, 0.0]).unwrap());
        params.add("b", Tensor::vector(vec![42.0]));
        let ckpt = Checkpoint {
            params,
            step: 123,
            val_ndcg: 0.875,
            config_hash: hash_bytes(b"config-v1"),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.write_file(&path).unwrap();

        let back = Checkpoint::read_file(&path, Some(&hash_bytes(b"config-v1"))).unwrap();
        assert_eq!(back.step, 123);
        assert_eq!(back.val_ndcg, 0.875);
        for (a, b) in ckpt.params.tensors().iter().zip(back.params.tensors()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        assert!(matches!(
            Checkpoint::read_file(&path, Some(&hash_bytes(b"other-config"))),
            Err(CheckpointError::ConfigHashMismatch)
        ));
    }
}
