use std::collections::BTreeMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gsm::BlobRef;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum BlobError {
    #[error("blob {0} not found")]
    NotFound(String),
    #[error("blob {digest} is corrupt: content hashes to {actual}")]
    Corrupt { digest: String, actual: String },
    #[error("blob store i/o failure: {0}")]
    Io(String),
}

pub fn digest_of(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content-addressed, immutable blob storage.
pub trait BlobStore: Send + Sync {
    /// Stores raw bytes under their digest. Storing identical content twice is a no-op.
    fn put_bytes(&self, bytes: &[u8]) -> Result<String, BlobError>;
    /// Returns the content after verifying it still hashes to `digest`.
    fn get(&self, digest: &str) -> Result<Vec<u8>, BlobError>;
    fn contains(&self, digest: &str) -> bool;

    fn put(&self, name: &str, media_type: &str, bytes: &[u8]) -> Result<BlobRef, BlobError> {
        let digest = self.put_bytes(bytes)?;
        Ok(BlobRef {
            digest,
            name: name.to_string(),
            media_type: media_type.to_string(),
            size: bytes.len() as u64,
        })
    }

    fn get_text(&self, digest: &str) -> Result<String, BlobError> {
        String::from_utf8(self.get(digest)?).map_err(|e| BlobError::Io(format!("blob {digest} is not utf-8: {e}")))
    }
}

pub(crate) fn verified(digest: &str, bytes: Vec<u8>) -> Result<Vec<u8>, BlobError> {
    let actual = digest_of(&bytes);
    if actual == digest {
        Ok(bytes)
    } else {
        Err(BlobError::Corrupt {
            digest: digest.to_string(),
            actual,
        })
    }
}

#[derive(Debug, Default)]
pub struct MemoryBlobs {
    blobs: RwLock<BTreeMap<String, Vec<u8>>>,
}

impl MemoryBlobs {
    pub fn new() -> Self {
        Self::default()
    }

    /// All stored blobs in digest order.
    pub fn entries(&self) -> Vec<(String, Vec<u8>)> {
        let map = self.blobs.read().expect("blob lock poisoned");
        map.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    #[cfg(test)]
    pub(crate) fn tamper(&self, digest: &str, bytes: Vec<u8>) {
        self.blobs
            .write()
            .expect("blob lock poisoned")
            .insert(digest.to_string(), bytes);
    }
}

impl BlobStore for MemoryBlobs {
    fn put_bytes(&self, bytes: &[u8]) -> Result<String, BlobError> {
        let digest = digest_of(bytes);
        self.blobs
            .write()
            .expect("blob lock poisoned")
            .entry(digest.clone())
            .or_insert_with(|| bytes.to_vec());
        Ok(digest)
    }

    fn get(&self, digest: &str) -> Result<Vec<u8>, BlobError> {
        let bytes = self
            .blobs
            .read()
            .expect("blob lock poisoned")
            .get(digest)
            .cloned()
            .ok_or_else(|| BlobError::NotFound(digest.to_string()))?;
        verified(digest, bytes)
    }

    fn contains(&self, digest: &str) -> bool {
        self.blobs.read().expect("blob lock poisoned").contains_key(digest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_is_content_addressed() {
        let store = MemoryBlobs::new();
        let a = store.put("a.txt", "text/plain", b"hello").unwrap();
        let b = store.put("b.txt", "text/plain", b"hello").unwrap();
        assert_eq!(a.digest, b.digest);
        assert_eq!(a.size, 5);
        assert_eq!(store.entries().len(), 1);
        assert_eq!(store.get_text(&a.digest).unwrap(), "hello");
    }

    #[test]
    fn tampered_content_is_rejected() {
        let store = MemoryBlobs::new();
        let r = store.put("a", "text/plain", b"hello").unwrap();
        store.tamper(&r.digest, b"jello".to_vec());
        assert!(matches!(store.get(&r.digest), Err(BlobError::Corrupt { .. })));
        assert!(matches!(store.get("00"), Err(BlobError::NotFound(_))));
    }
}
