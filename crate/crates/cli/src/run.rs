//! Run directories: plain JSON/JSONL artifacts plus a manifest recording
//! the content hash of every artifact and of the inputs it was built from.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
/// Upstream name under which an artifact records the dataset it used.
pub const DATASET: &str = "dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the run directory.
    pub path: String,
    pub hash: String,
    /// Hashes of the inputs at the time the artifact was written.
    pub upstream: BTreeMap<String, String>,
    pub written_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub dataset: Option<DatasetRef>,
    pub seed: Option<u64>,
    pub artifacts: BTreeMap<String, ArtifactRecord>,
    pub created_at: u64,
    pub updated_at: u64,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

/// Writes through a temporary file and a rename so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| CliError::Parse {
            path: path.to_owned(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Opens a run directory, creating it and its manifest if needed.
    pub fn open_or_create(root: impl Into<PathBuf>) -> CliResult<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        let run = Self { root };
        if !run.manifest_path().exists() {
            let t = now();
            let manifest = RunManifest {
                run_id: run.run_id(),
                dataset: None,
                seed: None,
                artifacts: BTreeMap::new(),
                created_at: t,
                updated_at: t,
            };
            write_atomic(&run.manifest_path(), &to_json(&manifest)?)?;
        }
        Ok(run)
    }

    /// Opens an existing run directory.
    pub fn open(root: impl Into<PathBuf>) -> CliResult<Self> {
        let run = Self { root: root.into() };
        if !run.manifest_path().exists() {
            return Err(CliError::NotARun(run.root));
        }
        Ok(run)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn run_id(&self) -> String {
        self.root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_owned())
    }

    fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    pub fn manifest(&self) -> CliResult<RunManifest> {
        let path = self.manifest_path();
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn update(&self, f: impl FnOnce(&mut RunManifest)) -> CliResult<()> {
        let mut m = self.manifest()?;
        f(&mut m);
        m.updated_at = now();
        write_atomic(&self.manifest_path(), &to_json(&m)?)
    }

    /// Records the dataset used by this run.
    pub fn set_dataset(&self, path: &Path, hash: &str) -> CliResult<()> {
        let dataset = DatasetRef {
            path: path.to_owned(),
            hash: hash.to_owned(),
        };
        self.update(|m| m.dataset = Some(dataset))
    }

    pub fn set_seed(&self, seed: u64) -> CliResult<()> {
        self.update(|m| m.seed = Some(seed))
    }

    /// Writes an artifact and records its hash and upstream hashes.
    pub fn write_artifact(
        &self,
        name: &str,
        bytes: &[u8],
        upstream: BTreeMap<String, String>,
    ) -> CliResult<String> {
        write_atomic(&self.path(name), bytes)?;
        let hash = hash_bytes(bytes);
        let record = ArtifactRecord {
            path: name.to_owned(),
            hash: hash.clone(),
            upstream,
            written_at: now(),
        };
        self.update(|m| {
            m.artifacts.insert(name.to_owned(), record);
        })?;
        Ok(hash)
    }

    pub fn has_artifact(&self, name: &str) -> CliResult<bool> {
        Ok(self.manifest()?.artifacts.contains_key(name) && self.path(name).exists())
    }

    /// Current hash of an upstream input: the dataset or another artifact.
    fn current_hash(&self, manifest: &RunManifest, name: &str) -> CliResult<Option<String>> {
        if name == DATASET {
            return Ok(manifest.dataset.as_ref().map(|d| d.hash.clone()));
        }
        Ok(manifest.artifacts.get(name).map(|a| a.hash.clone()))
    }

    /// Checks that an artifact is unchanged on disk and was built from the
    /// current versions of its inputs; returns its record.
    pub fn verify(&self, name: &str) -> CliResult<ArtifactRecord> {
        let manifest = self.manifest()?;
        let record = manifest
            .artifacts
            .get(name)
            .cloned()
            .ok_or_else(|| CliError::MissingArtifact(name.to_owned()))?;
        let on_disk = hash_file(&self.path(name))?;
        if on_disk != record.hash {
            return Err(CliError::StaleArtifact {
                artifact: name.to_owned(),
                reason: "file changed since it was recorded".to_owned(),
            });
        }
        for (input, hash) in &record.upstream {
            if self.current_hash(&manifest, input)?.as_deref() != Some(hash.as_str()) {
                return Err(CliError::StaleArtifact {
                    artifact: name.to_owned(),
                    reason: format!("input {input} changed"),
                });
            }
        }
        Ok(record)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> CliResult<T> {
        self.verify(name)?;
        let path = self.path(name);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn read_rows<T: DeserializeOwned>(&self, name: &str) -> CliResult<Vec<T>> {
        self.verify(name)?;
        read_jsonl(&self.path(name))
    }

    /// Upstream map with the current hashes of the named inputs.
    pub fn upstream(&self, names: &[&str]) -> CliResult<BTreeMap<String, String>> {
        let manifest = self.manifest()?;
        let mut out = BTreeMap::new();
        for name in names {
            let hash = self
                .current_hash(&manifest, name)?
                .ok_or_else(|| CliError::MissingArtifact((*name).to_owned()))?;
            out.insert((*name).to_owned(), hash);
        }
        Ok(out)
    }
}
