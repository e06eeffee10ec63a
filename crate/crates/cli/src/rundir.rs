use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::PipelineConfig;

pub const INCOMPLETE_MARKER: &str = ".incomplete";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// An output directory. The marker file stays behind if the run fails.
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn start(path: &Path, cfg: &PipelineConfig) -> Result<RunDir> {
        fs::create_dir_all(path).with_context(|| format!("creating run directory {}", path.display()))?;
        write(&path.join(INCOMPLETE_MARKER), "")?;
        write(&path.join(RESOLVED_CONFIG), &cfg.to_toml())?;
        Ok(RunDir { path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: impl AsRef<Path>) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: impl AsRef<Path>, contents: &str) -> Result<()> {
        let p = self.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        write(&p, contents)
    }

    pub fn write_json<T: serde::Serialize>(&self, name: impl AsRef<Path>, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }

    pub fn finish(self) -> Result<()> {
        let m = self.join(INCOMPLETE_MARKER);
        fs::remove_file(&m).with_context(|| format!("removing {}", m.display()))
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| pathssl_core::Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
        .map_err(Into::into)
}
