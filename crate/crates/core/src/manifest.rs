//! Dump manifests: the JSON index tying sentence ids to representation and
//! log-prob tensors for one (model, dataset, layer) triple.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::npy::read_tensor_header;

pub const SCHEMA_VERSION: &str = "1";

/// Layer index meaning the final hidden states before the output head.
pub const LAST_LAYER: i64 = -1;

fn default_layer() -> i64 {
    LAST_LAYER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub sentence_id: String,
    /// Path to an `N x d` tensor, relative to the manifest's directory.
    pub reps_path: PathBuf,
    pub token_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpManifest {
    pub schema_version: String,
    pub model_id: String,
    pub dataset_id: String,
    #[serde(default = "default_layer")]
    pub layer: i64,
    pub hidden_dim: usize,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<Sampling>,
    /// Whether each log-prob sequence starts at the first token (BOS
    /// conditioned) rather than the second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs_include_first_token: Option<bool>,
}

impl DumpManifest {
    pub fn new(model_id: impl Into<String>, dataset_id: impl Into<String>, hidden_dim: usize) -> Self {
        DumpManifest {
            schema_version: SCHEMA_VERSION.to_string(),
            model_id: model_id.into(),
            dataset_id: dataset_id.into(),
            layer: LAST_LAYER,
            hidden_dim,
            entries: Vec::new(),
            sampling: None,
            logprobs_include_first_token: None,
        }
    }

    /// Parses manifest JSON and checks everything that does not touch the
    /// filesystem.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let manifest: DumpManifest =
            serde_path_to_error::deserialize(de).map_err(|err| Error::SchemaViolation {
                pointer: json_pointer(err.path()),
                message: err.inner().to_string(),
            })?;
        manifest.check_schema()?;
        Ok(manifest)
    }

    fn check_schema(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaViolation {
                pointer: "/schema_version".into(),
                message: format!("unsupported schema_version {:?}, expected \"1\"", self.schema_version),
            });
        }
        if self.hidden_dim == 0 {
            return Err(Error::SchemaViolation {
                pointer: "/hidden_dim".into(),
                message: "hidden_dim must be positive".into(),
            });
        }
        let mut seen = HashSet::with_capacity(self.entries.len());
        for entry in &self.entries {
            if !seen.insert(entry.sentence_id.as_str()) {
                return Err(Error::DuplicateSentenceId(entry.sentence_id.clone()));
            }
        }
        if let Some(s) = &self.sampling {
            if s.subset_size == Some(0) {
                return Err(Error::SchemaViolation {
                    pointer: "/sampling/subset_size".into(),
                    message: "subset_size must be positive".into(),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn has_logprobs(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.logprobs_path.is_some())
    }
}

pub(crate) fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// A manifest validated against the files it references.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: DumpManifest,
    pub path: PathBuf,
    pub base_dir: PathBuf,
    /// Hex SHA-256 of the manifest file bytes.
    pub digest: String,
}

impl LoadedManifest {
    pub fn reps_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.reps_path)
    }

    pub fn logprobs_path(&self, entry: &ManifestEntry) -> Option<PathBuf> {
        entry.logprobs_path.as_ref().map(|p| self.base_dir.join(p))
    }
}

/// Loads a manifest and checks that every referenced tensor exists and has
/// the declared shape. Only tensor headers are read.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<LoadedManifest> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest = DumpManifest::from_json(&bytes).map_err(|e| Error::at_path(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = LoadedManifest {
        digest: hex_digest(&bytes),
        path: path.to_path_buf(),
        base_dir,
        manifest,
    };

    for (i, entry) in loaded.manifest.entries.iter().enumerate() {
        let reps = loaded.reps_path(entry);
        let header = read_tensor_header(&reps)?;
        let expected = [entry.token_count, loaded.manifest.hidden_dim];
        if header.shape != expected {
            return Err(Error::at_path(
                path,
                Error::ShapeMismatch(format!(
                    "/entries/{i}: {} has shape {:?}, manifest declares {:?}",
                    reps.display(),
                    header.shape,
                    expected
                )),
            ));
        }
        if let Some(lp) = loaded.logprobs_path(entry) {
            let header = read_tensor_header(&lp)?;
            if header.shape.len() != 1 {
                return Err(Error::at_path(
                    path,
                    Error::ShapeMismatch(format!(
                        "/entries/{i}: log-probs {} must be rank 1, got shape {:?}",
                        lp.display(),
                        header.shape
                    )),
                ));
            }
        }
    }
    Ok(loaded)
}

pub fn write_manifest(manifest: &DumpManifest, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), manifest.to_json().as_bytes())
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex_digest(&bytes))
}
