use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_FILE: &str = "MANIFEST";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Complete,
    Failed,
    NotRun,
}

/// Completion state of every stage plus a content hash of every file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub complete: bool,
    pub stages: BTreeMap<String, StageState>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).expect("walk stays under root");
        let rel = rel.to_string_lossy().replace('\\', "/");
        if rel == MANIFEST_FILE {
            continue;
        }
        let bytes = fs::read(&path)?;
        out.push(FileEntry {
            path: rel,
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
    }
    Ok(())
}

impl Manifest {
    /// Hashes everything currently under `root`.
    pub fn scan(root: &Path, stages: BTreeMap<String, StageState>, error: Option<String>) -> Result<Self> {
        let mut files = Vec::new();
        collect(root, root, &mut files)?;
        Ok(Manifest {
            complete: error.is_none(),
            stages,
            error,
            files,
        })
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(root.join(MANIFEST_FILE))?)?)
    }

    pub fn hash_of(&self, path: &str) -> Option<&str> {
        self.files.iter().find(|f| f.path == path).map(|f| f.sha256.as_str())
    }
}
