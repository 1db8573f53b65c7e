//! Content-addressed stage cache.
//!
//! Each stage directory holds a `stage.json` naming the digest of the
//! stage's inputs and the files it produced. A stage is skipped when the
//! digest matches and every listed file is still present.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::write_text;
use crate::error::{Error, Result};

const MARKER: &str = "stage.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Marker {
    digest: String,
    outputs: Vec<String>,
}

/// Accumulates everything a stage depends on.
#[derive(Clone)]
pub struct DigestBuilder(Sha256);

impl DigestBuilder {
    pub fn new(stage: &str) -> Self {
        let mut h = Sha256::new();
        h.update(stage.as_bytes());
        h.update([0]);
        Self(h)
    }

    pub fn text(mut self, s: &str) -> Self {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
        self
    }

    pub fn json<T: Serialize>(self, value: &T) -> Self {
        let s = serde_json::to_string(value).expect("serializable");
        self.text(&s)
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

/// sha256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct StageDir {
    pub dir: PathBuf,
    pub digest: String,
}

impl StageDir {
    pub fn new(dir: PathBuf, digest: String) -> Self {
        Self { dir, digest }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// True when a previous run with the same digest left all its outputs.
    pub fn is_fresh(&self) -> bool {
        let Ok(text) = fs::read_to_string(self.dir.join(MARKER)) else {
            return false;
        };
        let Ok(m) = serde_json::from_str::<Marker>(&text) else {
            return false;
        };
        m.digest == self.digest && m.outputs.iter().all(|o| self.dir.join(o).exists())
    }

    /// Clear stale outputs before recomputing.
    pub fn prepare(&self) -> Result<()> {
        let _ = fs::remove_file(self.dir.join(MARKER));
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }

    /// Record every file in the stage directory. Written last so an
    /// interrupted stage never looks complete.
    pub fn commit(&self) -> Result<()> {
        let mut outputs = Vec::new();
        list_files(&self.dir, &self.dir, &mut outputs)?;
        outputs.retain(|o| o != MARKER);
        outputs.sort();
        let m = Marker {
            digest: self.digest.clone(),
            outputs,
        };
        write_text(
            self.dir.join(MARKER),
            &serde_json::to_string_pretty(&m).expect("serializable"),
        )
    }
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_string_lossy().into_owned());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_depends_on_every_part() {
        let a = DigestBuilder::new("s").text("x").finish();
        assert_eq!(a, DigestBuilder::new("s").text("x").finish());
        assert_ne!(a, DigestBuilder::new("t").text("x").finish());
        assert_ne!(a, DigestBuilder::new("s").text("y").finish());
        // length prefixes keep concatenations apart
        assert_ne!(
            DigestBuilder::new("s").text("ab").text("c").finish(),
            DigestBuilder::new("s").text("a").text("bc").finish()
        );
    }

    #[test]
    fn freshness_tracks_digest_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let s = StageDir::new(dir.path().join("st"), "d1".into());
        assert!(!s.is_fresh());
        s.prepare().unwrap();
        write_text(s.path("a.txt"), "hi").unwrap();
        s.commit().unwrap();
        assert!(s.is_fresh());
        assert!(!StageDir::new(s.dir.clone(), "d2".into()).is_fresh());
        fs::remove_file(s.path("a.txt")).unwrap();
        assert!(!s.is_fresh());
    }
}
