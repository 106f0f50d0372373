use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, OUTPUT_ROOT_VAR};
use crate::error::{CliError, Result};

/// Output root used when the environment variable is unset.
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versions {
    pub core: String,
    pub cli: String,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            core: romelab_core::VERSION.to_string(),
            cli: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Who wrote an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
}

/// Every JSON artifact on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub provenance: Provenance,
    pub payload: T,
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| CliError::io(parent, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// An output root plus the configuration every command runs under.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub config: ExperimentConfig,
    provenance: Provenance,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let provenance = Provenance {
            config_hash: config.hash(),
            seed: config.seed,
            versions: Versions::current(),
        };
        Ok(Self {
            root: root.into(),
            config,
            provenance,
        })
    }

    /// Root from the environment, falling back to [`DEFAULT_OUTPUT_ROOT`].
    pub fn from_env(config: ExperimentConfig) -> Result<Self> {
        let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT), PathBuf::from);
        Self::new(root, config)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn path(&self, relative: impl AsRef<Path>) -> PathBuf {
        self.root.join(relative)
    }

    /// Wraps `payload` with this workspace's provenance and writes it.
    pub fn write<T: Serialize>(&self, relative: impl AsRef<Path>, payload: &T) -> Result<PathBuf> {
        let artifact = Artifact {
            provenance: self.provenance.clone(),
            payload,
        };
        let path = self.path(relative);
        write_atomic(&path, serde_json::to_string(&artifact)?.as_bytes())?;
        Ok(path)
    }

    pub fn write_text(&self, relative: impl AsRef<Path>, text: &str) -> Result<PathBuf> {
        let path = self.path(relative);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Reads an artifact written by `command`.
    pub fn read<T: DeserializeOwned>(&self, relative: impl AsRef<Path>, command: &'static str) -> Result<T> {
        Ok(self.read_artifact(relative, command)?.payload)
    }

    pub fn read_artifact<T: DeserializeOwned>(&self, relative: impl AsRef<Path>, command: &'static str) -> Result<Artifact<T>> {
        let bytes = self.read_bytes(relative, command)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn read_bytes(&self, relative: impl AsRef<Path>, command: &'static str) -> Result<Vec<u8>> {
        let path = self.path(relative);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::Missing { path, command }),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }

    pub fn exists(&self, relative: impl AsRef<Path>) -> bool {
        self.path(relative).exists()
    }
}
