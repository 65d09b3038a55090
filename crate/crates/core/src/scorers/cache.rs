//! Binary passage-representation cache.
//!
//! Layout (little-endian): header `{kind: u8, dim: u64, count: u64}`,
//! then per entry `{passage_id: i64, length n: u64, n*dim f64 row-major}`.
//! Values are written as 64-bit floats, so an f64 cache round-trips
//! bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

use super::ScorerKind;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("unknown scorer kind code {0}")]
    BadKind(u8),
    #[error("cache entry for passage {pid} has dim {got}, header says {expect}")]
    DimMismatch { pid: i64, got: usize, expect: usize },
    #[error("duplicate passage id {0} in cache")]
    DuplicatePassage(i64),
    #[error("truncated cache file")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Precomputed representation for one passage: `[n, dim]` rows.
#[derive(Debug, Clone)]
pub struct CacheEntry<S> {
    pub passage_id: i64,
    pub rows: Tensor<S>,
}

impl<S: Scalar> CacheEntry<S> {
    pub fn num_rows(&self) -> usize {
        self.rows.shape()[0]
    }
}

/// All cached entries for one scorer kind.
#[derive(Debug, Clone)]
pub struct PassageCache<S> {
    pub kind: ScorerKind,
    pub dim: usize,
    entries: Vec<CacheEntry<S>>,
    by_id: BTreeMap<i64, usize>,
}

impl<S: Scalar> PassageCache<S> {
    pub fn new(kind: ScorerKind, dim: usize) -> Self {
        PassageCache {
            kind,
            dim,
            entries: Vec::new(),
            by_id: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, entry: CacheEntry<S>) -> Result<(), CacheError> {
        if entry.rows.shape()[1] != self.dim {
            return Err(CacheError::DimMismatch {
                pid: entry.passage_id,
                got: entry.rows.shape()[1],
                expect: self.dim,
            });
        }
        if self.by_id.contains_key(&entry.passage_id) {
            return Err(CacheError::DuplicatePassage(entry.passage_id));
        }
        self.by_id.insert(entry.passage_id, self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn get(&self, passage_id: i64) -> Option<&CacheEntry<S>> {
        self.by_id.get(&passage_id).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[CacheEntry<S>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total stored rows. One per passage for single-vector caches, one
    /// per token occurrence for per-token caches.
    pub fn total_rows(&self) -> usize {
        self.entries.iter().map(|e| e.num_rows()).sum()
    }

    pub fn write_file(&self, path: &Path) -> Result<(), CacheError> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&[self.kind.code()])?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&e.passage_id.to_le_bytes())?;
            w.write_all(&(e.num_rows() as u64).to_le_bytes())?;
            for v in e.rows.data() {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, CacheError> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut b1 = [0u8; 1];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b1).map_err(|_| CacheError::Truncated)?;
        let kind = ScorerKind::from_code(b1[0]).ok_or(CacheError::BadKind(b1[0]))?;
        r.read_exact(&mut b8).map_err(|_| CacheError::Truncated)?;
        let dim = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8).map_err(|_| CacheError::Truncated)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut cache = PassageCache::new(kind, dim);
        for _ in 0..count {
            r.read_exact(&mut b8).map_err(|_| CacheError::Truncated)?;
            let pid = i64::from_le_bytes(b8);
            r.read_exact(&mut b8).map_err(|_| CacheError::Truncated)?;
            let n = u64::from_le_bytes(b8) as usize;
            let mut data = Vec::with_capacity(n * dim);
            for _ in 0..n * dim {
                r.read_exact(&mut b8).map_err(|_| CacheError::Truncated)?;
                data.push(S::of(f64::from_le_bytes(b8)));
            }
            let rows = Tensor::new(vec![n, dim], data).expect("sized by construction");
            cache.insert(CacheEntry {
                passage_id: pid,
                rows,
            })?;
        }
        Ok(cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.bin");
        let mut cache: PassageCache<f64> = PassageCache::new(ScorerKind::Colbert, 3);
        cache
            .insert(CacheEntry {
                passage_id: 42,
                rows: Tensor::new(vec![2, 3], vec![0.1, -2.5, 1e-300, 3.7, 0.0, -0.0]).unwrap(),
            })
            .unwrap();
        cache
            .insert(CacheEntry {
                passage_id: 7,
                rows: Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap(),
            })
            .unwrap();
        cache.write_file(&path).unwrap();
        let back: PassageCache<f64> = PassageCache::read_file(&path).unwrap();
        assert_eq!(back.kind, ScorerKind::Colbert);
        assert_eq!(back.dim, 3);
        assert_eq!(back.len(), 2);
        assert_eq!(back.total_rows(), 3);
        for (a, b) in cache.entries().iter().zip(back.entries()) {
            assert_eq!(a.passage_id, b.passage_id);
            assert!(a
                .rows
                .data()
                .iter()
                .zip(b.rows.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.get(42).unwrap().num_rows(), 2);
        assert!(back.get(999).is_none());
    }

    #[test]
    fn duplicate_passage_rejected() {
        let mut cache: PassageCache<f64> = PassageCache::new(ScorerKind::Dot, 2);
        let entry = CacheEntry {
            passage_id: 1,
            rows: Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(),
        };
        cache.insert(entry.clone()).unwrap();
        assert!(matches!(
            cache.insert(entry),
            Err(CacheError::DuplicatePassage(1))
        ));
    }
}
