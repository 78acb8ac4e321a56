//! Checkpoint inventory and the currently loaded inference model.

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::Serialize;
use silhouette_core::QuantizationScheme;
use silhouette_nn::{synthesizer_from_checkpoint, Checkpoint, CheckpointKind, Synthesizer};

use crate::error::ServiceError;

const EXTENSION: &str = "ckpt";

/// A frozen synthesizer plus what it was loaded from.
pub struct LoadedModel {
    pub id: String,
    pub path: PathBuf,
    pub fingerprint: String,
    pub quantization: Option<QuantizationScheme>,
    pub step: u64,
    pub synth: Box<dyn Synthesizer>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelEntry {
    pub id: String,
    pub path: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<CheckpointKind>,
    pub fingerprint: Option<String>,
    pub quantization: Option<QuantizationScheme>,
    pub step: Option<u64>,
    pub loaded: bool,
    /// Set when the header could not be read.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadedSummary {
    pub id: String,
    pub fingerprint: String,
    pub quantization: Option<QuantizationScheme>,
    pub step: u64,
}

impl From<&LoadedModel> for LoadedSummary {
    fn from(m: &LoadedModel) -> Self {
        Self {
            id: m.id.clone(),
            fingerprint: m.fingerprint.clone(),
            quantization: m.quantization,
            step: m.step,
        }
    }
}

/// Many readers take an `Arc` snapshot of the current model; a load builds
/// the replacement outside the lock and swaps the pointer in one write.
pub struct Registry {
    dir: PathBuf,
    pinned: Option<String>,
    current: RwLock<Option<Arc<LoadedModel>>>,
}

impl Registry {
    /// Registry over `dir` with nothing loaded.
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        Self {
            dir: dir.canonicalize().unwrap_or(dir),
            pinned: None,
            current: RwLock::new(None),
        }
    }

    /// Only checkpoints with this architecture fingerprint may be loaded.
    pub fn pinned_to(mut self, fingerprint: impl Into<String>) -> Self {
        self.pinned = Some(fingerprint.into());
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn pinned(&self) -> Option<&str> {
        self.pinned.as_deref()
    }

    pub fn current(&self) -> Option<Arc<LoadedModel>> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Checkpoints in the directory and its immediate subdirectories, by id.
    pub fn inventory(&self) -> Vec<ModelEntry> {
        let loaded = self.current().map(|m| m.path.clone());
        let mut paths = Vec::new();
        collect_checkpoints(&self.dir, 1, &mut paths);
        let mut out: Vec<ModelEntry> = paths
            .into_iter()
            .map(|path| {
                let id = self.id_of(&path);
                let is_loaded = loaded.is_some() && loaded == path.canonicalize().ok();
                match Checkpoint::inspect(&path) {
                    Ok(info) => ModelEntry {
                        id,
                        kind: Some(info.kind),
                        fingerprint: Some(info.fingerprint),
                        quantization: info.quantization,
                        step: Some(info.step),
                        loaded: is_loaded,
                        error: None,
                        path,
                    },
                    Err(e) => ModelEntry {
                        id,
                        kind: None,
                        fingerprint: None,
                        quantization: None,
                        step: None,
                        loaded: is_loaded,
                        error: Some(e.to_string()),
                        path,
                    },
                }
            })
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Path of an inventory id, if such a checkpoint exists.
    pub fn resolve_id(&self, id: &str) -> Option<PathBuf> {
        self.inventory().into_iter().find(|e| e.id == id).map(|e| e.path)
    }

    fn id_of(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.dir).unwrap_or(path).with_extension("");
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Reads and validates a checkpoint without touching the current model.
    pub fn prepare(&self, path: &Path) -> Result<LoadedModel, ServiceError> {
        if !path.is_file() {
            return Err(ServiceError::NotFound(format!("no checkpoint at {}", path.display())));
        }
        let path = &path.canonicalize().map_err(|e| ServiceError::Internal(e.to_string()))?;
        let ckpt = Checkpoint::load(path)
            .map_err(|e| ServiceError::Conflict(format!("incompatible checkpoint: {e}")))?;
        let fingerprint = ckpt.fingerprint();
        if let Some(p) = &self.pinned {
            if *p != fingerprint {
                return Err(ServiceError::Conflict(format!(
                    "checkpoint fingerprint {fingerprint} does not match the served architecture {p}"
                )));
            }
        }
        let synth = synthesizer_from_checkpoint(&ckpt)
            .map_err(|e| ServiceError::Conflict(format!("incompatible checkpoint: {e}")))?;
        Ok(LoadedModel {
            id: self.id_of(path),
            path: path.to_path_buf(),
            fingerprint,
            quantization: ckpt.quantization,
            step: ckpt.step,
            synth,
        })
    }

    /// Makes `model` current; requests already holding the old one finish with it.
    pub fn install(&self, model: LoadedModel) -> Arc<LoadedModel> {
        let model = Arc::new(model);
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Some(model.clone());
        model
    }

    pub fn load(&self, path: &Path) -> Result<Arc<LoadedModel>, ServiceError> {
        Ok(self.install(self.prepare(path)?))
    }
}

fn collect_checkpoints(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return;
    };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            if depth > 0 {
                collect_checkpoints(&path, depth - 1, out);
            }
        } else if path.extension().is_some_and(|e| e == EXTENSION)
            && !path
                .file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with("diag_"))
        {
            out.push(path);
        }
    }
}
