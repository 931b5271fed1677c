//! Disk cache for remote logprob responses.
//!
//! One content-addressed record per (model, prefix, k) key. Values are
//! deterministic for a deterministic endpoint, so concurrent writers racing
//! on the same key are benign: writes go to a temp file and are renamed into
//! place, last writer wins.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::util::now_rfc3339;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// On-disk record: key fields kept verbatim for diagnosis, raw token and
/// logprob pairs as returned by the endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub model: String,
    pub prefix: String,
    pub top_logprobs: u8,
    pub created_at: String,
    pub tokens: Vec<TokenLogprob>,
}

/// Running hit/miss counters, reported in eval records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Content address of a (model, prefix, k) query. Fields are hashed as a
    /// JSON array so no separator ambiguity exists.
    pub fn key(model: &str, prefix: &str, top_logprobs: u8) -> String {
        let canonical = serde_json::to_string(&(model, prefix, top_logprobs))
            .expect("strings and integers serialize");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Returns the cached record for the key, `None` on a miss.
    pub fn read(&self, model: &str, prefix: &str, top_logprobs: u8) -> Result<Option<CacheRecord>> {
        let path = self.path_for(&Self::key(model, prefix, top_logprobs));
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(CoreError::io(path, e)),
        };
        let record: CacheRecord =
            serde_json::from_slice(&bytes).map_err(|e| CoreError::Protocol {
                message: format!("corrupt cache record {}: {e}", path.display()),
                payload: String::from_utf8_lossy(&bytes).into_owned(),
            })?;
        Ok(Some(record))
    }

    /// Writes a record atomically (temp file + rename).
    pub fn write(&self, model: &str, prefix: &str, top_logprobs: u8, tokens: &[TokenLogprob]) -> Result<()> {
        let record = CacheRecord {
            model: model.to_owned(),
            prefix: prefix.to_owned(),
            top_logprobs,
            created_at: now_rfc3339(),
            tokens: tokens.to_vec(),
        };
        let path = self.path_for(&Self::key(model, prefix, top_logprobs));
        let dir = path.parent().expect("cache paths have parents");
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let json = serde_json::to_vec_pretty(&record).expect("record serializes");
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CoreError::io(dir, e))?;
        std::fs::write(tmp.path(), &json).map_err(|e| CoreError::io(tmp.path(), e))?;
        tmp.persist(&path)
            .map_err(|e| CoreError::io(&path, e.error))?;
        Ok(())
    }
}
