use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::StageError;
use crate::error::Error;

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write through a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_jsonl_atomic<T: Serialize>(path: &Path, items: &[T]) -> Result<(), Error> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

/// Record of one stage run: hashes of what it read and wrote, relative to
/// the workspace (dump inputs keep their absolute path).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn path(workspace: &Path, stage: &str) -> PathBuf {
        workspace.join("manifests").join(format!("{stage}.json"))
    }

    pub fn load(workspace: &Path, stage: &str) -> Option<Manifest> {
        let text = std::fs::read_to_string(Self::path(workspace, stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Hash the listed files.
    pub fn record(stage: &str, config_text: &str, root: &Path, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<Manifest, Error> {
        let hash_all = |files: &[PathBuf]| -> Result<BTreeMap<String, String>, Error> {
            files
                .iter()
                .map(|f| {
                    let full = if f.is_absolute() { f.clone() } else { root.join(f) };
                    Ok((f.to_string_lossy().into_owned(), sha256_file(&full)?))
                })
                .collect()
        };
        Ok(Manifest {
            stage: stage.into(),
            config_sha256: sha256_bytes(config_text.as_bytes()),
            inputs: hash_all(inputs)?,
            outputs: hash_all(outputs)?,
        })
    }

    pub fn save(&self, workspace: &Path) -> Result<(), Error> {
        write_json_atomic(&Self::path(workspace, &self.stage), self)
    }
}

/// Ensure `stage` has run and its outputs are unchanged since.
pub fn require(workspace: &Path, stage: &str, needed_by: &str, force: bool) -> Result<Manifest, StageError> {
    let Some(m) = Manifest::load(workspace, stage) else {
        return Err(StageError::StageOrder(format!("`{needed_by}` needs the `{stage}` stage; run it first")));
    };
    for (file, want) in &m.outputs {
        let path = workspace.join(file);
        let got = sha256_file(&path).ok();
        if got.as_deref() != Some(want.as_str()) {
            if force {
                log::warn!("{file} changed since `{stage}` ran; continuing because of --force");
                continue;
            }
            return Err(StageError::StageOrder(format!(
                "{file} is missing or changed since `{stage}` ran; rerun `{stage}` (or pass --force)"
            )));
        }
    }
    Ok(m)
}
