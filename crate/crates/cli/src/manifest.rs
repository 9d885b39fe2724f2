//! Run manifest and content hashing.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_at, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    /// Hash of the config fields the stage depends on.
    pub params_hash: String,
    /// Consumed files and their hashes at the time of use. Keys are
    /// relative to the output directory, or absolute for external inputs.
    pub inputs: BTreeMap<String, String>,
    /// Produced files, relative to the output directory.
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageEntry>,
    #[serde(default)]
    pub report: Option<StageEntry>,
}

impl Manifest {
    pub fn new(config_hash: String) -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            config_hash,
            stages: BTreeMap::new(),
            report: None,
        }
    }

    pub fn path(out_dir: &Path) -> PathBuf {
        out_dir.join(MANIFEST_FILE)
    }

    /// Load the manifest of `out_dir`, or start an empty one.
    pub fn load_or_new(out_dir: &Path, config_hash: &str) -> Result<Self> {
        let path = Self::path(out_dir);
        match fs::read(&path) {
            Ok(bytes) => {
                let mut m: Manifest = serde_json::from_slice(&bytes).map_err(|e| io_at(&path)(io::Error::other(e)))?;
                m.config_hash = config_hash.to_string();
                Ok(m)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Manifest::new(config_hash.to_string())),
            Err(e) => Err(io_at(&path)(e)),
        }
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(&Self::path(out_dir), &json)
    }

    /// Every file the manifest points to, relative to the output directory.
    pub fn output_files(&self) -> Vec<String> {
        self.stages
            .values()
            .chain(self.report.as_ref())
            .flat_map(|e| e.outputs.keys().cloned())
            .collect()
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(io_at(path))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io_at(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_sibling(path);
    fs::write(&tmp, bytes).map_err(io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(io_at(path))
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

/// Files under `dir`, as sorted paths relative to it.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(io_at(&d))? {
            let p = entry.map_err(io_at(&d))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Manifest key of a path: relative to `out_dir` with `/` separators when
/// inside it, absolute otherwise.
pub fn key_of(out_dir: &Path, path: &Path) -> String {
    match path.strip_prefix(out_dir) {
        Ok(rel) => rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
        Err(_) => path.display().to_string(),
    }
}
