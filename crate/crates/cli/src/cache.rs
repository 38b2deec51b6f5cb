//! Content-addressed artifact cache.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tadlab_core::Result;

use crate::io::write_atomic;

pub const CACHE_ENV: &str = "TADLAB_CACHE";

/// Hash of everything that determines an artifact: the input bytes' checksum,
/// the serialized configuration and the seed. Fields are length-prefixed so
/// no two distinct triples share a preimage.
pub fn cache_key(data_checksum: &str, config: &impl Serialize, seed: u64) -> Result<String> {
    let cfg = serde_json::to_vec(config)?;
    let mut h = Sha256::new();
    for part in [data_checksum.as_bytes(), &cfg[..]] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.update(seed.to_le_bytes());
    Ok(hex::encode(h.finalize()))
}

/// Cache directory: `TADLAB_CACHE` if set, otherwise `<out>/cache`.
pub fn cache_dir(out: &Path) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => out.join("cache"),
    }
}

#[derive(Debug)]
pub struct Cache {
    dir: PathBuf,
    /// When false every lookup misses, so artifacts are rebuilt and
    /// overwritten.
    reuse: bool,
    hits: AtomicUsize,
    builds: AtomicUsize,
}

impl Cache {
    pub fn new(dir: PathBuf, reuse: bool) -> Self {
        Self {
            dir,
            reuse,
            hits: AtomicUsize::new(0),
            builds: AtomicUsize::new(0),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, kind: &str, key: &str) -> PathBuf {
        self.dir.join(kind).join(format!("{key}.bin"))
    }

    /// Returns the cached bytes, or runs `build`, stores and returns its
    /// output. Unreadable or undecodable entries are rebuilt.
    pub fn get_or_build<T>(
        &self,
        kind: &str,
        key: &str,
        decode: impl Fn(&[u8]) -> Result<T>,
        encode: impl Fn(&T) -> Result<Vec<u8>>,
        build: impl FnOnce() -> Result<T>,
    ) -> Result<T> {
        let path = self.path(kind, key);
        if self.reuse {
            if let Ok(bytes) = std::fs::read(&path) {
                if let Ok(v) = decode(&bytes) {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(v);
                }
            }
        }
        let v = build()?;
        self.builds.fetch_add(1, Ordering::Relaxed);
        write_atomic(&path, &encode(&v)?)?;
        Ok(v)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn builds(&self) -> usize {
        self.builds.load(Ordering::Relaxed)
    }
}
