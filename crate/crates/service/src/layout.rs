//! On-disk layout: `images/<sha256>.png`, `sessions/<id>.json`,
//! `annotations.jsonl`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct StoreLayout {
    root: PathBuf,
}

impl StoreLayout {
    pub fn create(root: impl Into<PathBuf>) -> io::Result<Self> {
        let layout = Self { root: root.into() };
        fs::create_dir_all(layout.images_dir())?;
        fs::create_dir_all(layout.sessions_dir())?;
        Ok(layout)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.root.join("annotations.jsonl")
    }

    pub fn image_path(&self, id: &str) -> Option<PathBuf> {
        is_hex_id(id).then(|| self.images_dir().join(format!("{id}.png")))
    }

    pub fn session_path(&self, id: &str) -> Option<PathBuf> {
        is_safe_id(id).then(|| self.sessions_dir().join(format!("{id}.json")))
    }
}

fn is_hex_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_hexdigit())
}

fn is_safe_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// Writes via a synced temporary file and a rename, so readers never see a
/// partial document.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_cannot_escape_the_root() {
        let dir = tempfile::tempdir().unwrap();
        let l = StoreLayout::create(dir.path()).unwrap();
        assert!(l.session_path("../etc/passwd").is_none());
        assert!(l.session_path("").is_none());
        assert!(l.image_path("abc").is_none());
        assert!(l.image_path(&"a".repeat(64)).is_some());
        assert!(l.session_path("0b9f-x_1").is_some());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("doc.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert!(!dir.path().join("doc.tmp").exists());
    }
}
