use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub c_omega: Option<f64>,
    pub c_omega_prime: Option<f64>,
    pub c_v: Option<f64>,
    /// Admissible deformation radius.
    pub radius: Option<f64>,
    /// Relative-bound constant `C = max{1, M}/R`.
    pub relative_c: Option<f64>,
    /// Smallest commutator-ladder radius over the commlab batch.
    pub r_prime: Option<f64>,
}

impl Constants {
    fn merge(&mut self, other: &Constants) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(c_omega, c_omega_prime, c_v, radius, relative_c, r_prime);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: String,
    pub seconds: f64,
    pub checks: Vec<Check>,
    pub files: Vec<FileRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub constants: Constants,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Output directory of one scenario; every file written through it is hashed.
pub struct RunDir {
    pub root: PathBuf,
    files: Vec<FileRecord>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Runs `write` on `root/rel` and records the content hash.
    pub fn emit<F>(&mut self, rel: &str, write: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&Path) -> Result<(), CliError>,
    {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write(&path)?;
        let sha256 = sha256_file(&path)?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileRecord {
            path: rel.to_string(),
            sha256,
        });
        Ok(path)
    }

    pub fn emit_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf, CliError> {
        self.emit(rel, |p| {
            let mut text = serde_json::to_string_pretty(value)?;
            text.push('\n');
            std::fs::write(p, text)?;
            Ok(())
        })
    }

    pub fn take_files(&mut self) -> Vec<FileRecord> {
        std::mem::take(&mut self.files)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    pub fn read_manifest(&self) -> Result<Option<RunManifest>, CliError> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
    }

    /// Merges one stage into the manifest on disk.
    pub fn record(
        &self,
        scenario: &str,
        hash: &str,
        stage: &str,
        record: StageRecord,
        constants: &Constants,
    ) -> Result<RunManifest, CliError> {
        let mut m = match self.read_manifest()? {
            Some(m) if m.scenario_hash == hash => m,
            _ => RunManifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                scenario: scenario.into(),
                scenario_hash: hash.into(),
                constants: Constants::default(),
                stages: BTreeMap::new(),
            },
        };
        m.constants.merge(constants);
        m.stages.insert(stage.into(), record);
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        std::fs::write(self.manifest_path(), text)?;
        Ok(m)
    }
}

/// Re-hashes every file referenced by the manifest; returns the paths that do not match.
pub fn verify(root: &Path) -> Result<Vec<String>, CliError> {
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(root.join(MANIFEST))?)?;
    let mut bad = Vec::new();
    for stage in m.stages.values() {
        for f in &stage.files {
            let path = root.join(&f.path);
            if !path.exists() || sha256_file(&path)? != f.sha256 {
                bad.push(f.path.clone());
            }
        }
    }
    Ok(bad)
}
