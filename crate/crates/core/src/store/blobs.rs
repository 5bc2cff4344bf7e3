use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use crate::toolbox::{digest_of, BlobError, BlobStore};

/// Blobs as files named by their digest. Reads fall back to read-only directories, so a
/// study can reference content uploaded to the shared store.
#[derive(Debug, Clone)]
pub struct FsBlobs {
    dir: PathBuf,
    fallback: Vec<PathBuf>,
}

fn io(path: &Path, e: std::io::Error) -> BlobError {
    BlobError::Io(format!("{}: {e}", path.display()))
}

fn well_formed(digest: &str) -> bool {
    digest.len() == 64 && digest.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

impl FsBlobs {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BlobError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        Ok(FsBlobs {
            dir,
            fallback: Vec::new(),
        })
    }

    pub fn with_fallback(mut self, dir: impl Into<PathBuf>) -> Self {
        self.fallback.push(dir.into());
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Digests stored in the primary directory, sorted.
    pub fn digests(&self) -> Result<Vec<String>, BlobError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| io(&self.dir, e))? {
            let name = entry.map_err(|e| io(&self.dir, e))?.file_name();
            if let Some(n) = name.to_str().filter(|n| well_formed(n)) {
                out.push(n.to_string());
            }
        }
        out.sort();
        Ok(out)
    }

    fn locate(&self, digest: &str) -> Option<PathBuf> {
        std::iter::once(&self.dir)
            .chain(&self.fallback)
            .map(|d| d.join(digest))
            .find(|p| p.is_file())
    }
}

impl BlobStore for FsBlobs {
    fn put_bytes(&self, bytes: &[u8]) -> Result<String, BlobError> {
        let digest = digest_of(bytes);
        let path = self.dir.join(&digest);
        if path.is_file() {
            return Ok(digest);
        }
        // Rename is atomic, so a reader never sees a half-written blob.
        let tmp = self
            .dir
            .join(format!(".{digest}.{}.tmp", uuid::Uuid::new_v4().simple()));
        fs::write(&tmp, bytes).map_err(|e| io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io(&path, e))?;
        Ok(digest)
    }

    fn get(&self, digest: &str) -> Result<Vec<u8>, BlobError> {
        if !well_formed(digest) {
            return Err(BlobError::NotFound(digest.to_string()));
        }
        let path = self
            .locate(digest)
            .ok_or_else(|| BlobError::NotFound(digest.to_string()))?;
        match fs::read(&path) {
            Ok(bytes) => crate::toolbox::verified(digest, bytes),
            Err(e) if e.kind() == ErrorKind::NotFound => Err(BlobError::NotFound(digest.to_string())),
            Err(e) => Err(io(&path, e)),
        }
    }

    fn contains(&self, digest: &str) -> bool {
        well_formed(digest) && self.locate(digest).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let store = FsBlobs::open(dir.path().join("b")).unwrap();
        let r = store.put("x.txt", "text/plain", b"hello").unwrap();
        assert_eq!(store.get_text(&r.digest).unwrap(), "hello");
        assert_eq!(store.digests().unwrap(), vec![r.digest.clone()]);
        fs::write(store.dir().join(&r.digest), b"jello").unwrap();
        assert!(matches!(store.get(&r.digest), Err(BlobError::Corrupt { .. })));
        assert!(matches!(store.get("../etc/passwd"), Err(BlobError::NotFound(_))));
    }

    #[test]
    fn fallback_is_read_only() {
        let dir = tempfile::tempdir().unwrap();
        let shared = FsBlobs::open(dir.path().join("shared")).unwrap();
        let d = shared.put_bytes(b"shared").unwrap();
        let own = FsBlobs::open(dir.path().join("own"))
            .unwrap()
            .with_fallback(shared.dir());
        assert!(own.contains(&d));
        assert_eq!(own.get(&d).unwrap(), b"shared");
        assert!(own.digests().unwrap().is_empty());
    }
}
