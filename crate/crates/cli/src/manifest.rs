//! Per-output-directory run manifest.

use std::path::Path;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use spine_enhance::io::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub input: Option<String>,
    pub output: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, output: &Path) -> Self {
        Self {
            command: command.to_string(),
            config: None,
            input: None,
            output: output.display().to_string(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn read(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&std::fs::read_to_string(&path)?)?))
    }

    /// Claims `dir` for this command and writes the manifest.
    ///
    /// A directory that already holds a manifest is only reused with
    /// `overwrite`, or with `resume` when the earlier run was the same command.
    pub fn claim(&self, dir: &Path, overwrite: bool, resume: bool) -> Result<()> {
        if let Some(prev) = Self::read(dir)? {
            let resumable = resume && prev.command == self.command;
            if !overwrite && !resumable {
                bail!(
                    "{} already holds output of `{}`; pass --overwrite to replace it",
                    dir.display(),
                    prev.command
                );
            }
        }
        write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn claim_refuses_second_run() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new("preprocess", dir.path());
        m.claim(dir.path(), false, false).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap().unwrap(), m);
        assert!(m.claim(dir.path(), false, false).is_err());
        m.claim(dir.path(), true, false).unwrap();
        m.claim(dir.path(), false, true).unwrap();
        assert!(RunManifest::new("train", dir.path()).claim(dir.path(), false, true).is_err());
    }
}
