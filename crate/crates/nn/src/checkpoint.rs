//! Binary checkpoint container: `SILHCKPT`, a little-endian `u32` version, a
//! `u64` header length, a JSON header and a payload of `f64` LE values.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use silhouette_core::QuantizationScheme;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SILHCKPT";
const VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

/// Fingerprint recorded for the debug replay synthesizer.
pub const REPLAY_FINGERPRINT: &str = "replay-debug";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    Gan,
    ReplayDebug,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: CheckpointKind,
    fingerprint: String,
    config: Option<ModelConfig>,
    quantization: Option<QuantizationScheme>,
    step: u64,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Header fields of a checkpoint, readable without loading the payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub kind: CheckpointKind,
    pub fingerprint: String,
    pub quantization: Option<QuantizationScheme>,
    pub step: u64,
}

fn read_preamble(bytes: &[u8]) -> Result<usize> {
    if bytes.len() < PREAMBLE || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a silhouette checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    Ok(u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize)
}

/// Model parameters plus optional training state, grouped by name
/// (`params`, optimizer moments, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config: Option<ModelConfig>,
    pub quantization: Option<QuantizationScheme>,
    pub step: u64,
    /// Free-form training metadata (plan, RNG position, ...).
    pub meta: serde_json::Value,
    pub groups: BTreeMap<String, ParamStore>,
}

impl Checkpoint {
    pub fn gan(config: ModelConfig, params: ParamStore) -> Self {
        let mut groups = BTreeMap::new();
        groups.insert("params".to_string(), params);
        Self {
            kind: CheckpointKind::Gan,
            config: Some(config),
            quantization: None,
            step: 0,
            meta: serde_json::Value::Null,
            groups,
        }
    }

    pub fn replay_debug() -> Self {
        Self {
            kind: CheckpointKind::ReplayDebug,
            config: None,
            quantization: None,
            step: 0,
            meta: serde_json::Value::Null,
            groups: BTreeMap::new(),
        }
    }

    pub fn fingerprint(&self) -> String {
        match (&self.kind, &self.config) {
            (CheckpointKind::Gan, Some(c)) => c.fingerprint(),
            _ => REPLAY_FINGERPRINT.to_string(),
        }
    }

    pub fn params(&self) -> Option<&ParamStore> {
        self.groups.get("params")
    }

    pub fn group(&self, name: &str) -> Option<&ParamStore> {
        self.groups.get(name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.kind == CheckpointKind::Gan && self.config.is_none() {
            return Err(Error::Checkpoint("GAN checkpoints need a model config".into()));
        }
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (group, store) in &self.groups {
            for (name, t) in store.iter() {
                tensors.push(TensorEntry {
                    group: group.clone(),
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                });
                offset += t.len();
            }
        }
        let header = Header {
            kind: self.kind,
            fingerprint: self.fingerprint(),
            config: self.config.clone(),
            quantization: self.quantization,
            step: self.step,
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for store in self.groups.values() {
            for (_, t) in store.iter() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let hlen = read_preamble(bytes)?;
        let body = bytes
            .get(PREAMBLE..)
            .filter(|b| b.len() >= hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let payload = &body[hlen..];
        if payload.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let values = payload.len() / 8;
        let mut groups: BTreeMap<String, ParamStore> = BTreeMap::new();
        let mut expected = 0;
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset != expected || e.offset + n > values {
                return Err(Error::Checkpoint(format!("bad tensor extent for {}", e.name)));
            }
            let data = payload[e.offset * 8..(e.offset + n) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            groups
                .entry(e.group.clone())
                .or_default()
                .insert(e.name.clone(), Tensor::new(e.shape.clone(), data));
            expected += n;
        }
        if expected != values {
            return Err(bad("payload length does not match the tensor index"));
        }
        if let Some(c) = &header.config {
            c.validate()?;
        }
        let ckpt = Self {
            kind: header.kind,
            config: header.config,
            quantization: header.quantization,
            step: header.step,
            meta: header.meta,
            groups,
        };
        if ckpt.fingerprint() != header.fingerprint {
            return Err(Error::Checkpoint(format!(
                "recorded fingerprint {} does not match config {}",
                header.fingerprint,
                ckpt.fingerprint()
            )));
        }
        Ok(ckpt)
    }

    /// Writes via a temporary file and rename so readers never see a partial file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Reads only the header of the checkpoint at `path`.
    pub fn inspect(path: impl AsRef<Path>) -> Result<CheckpointInfo> {
        use std::io::Read;
        let path = path.as_ref();
        let io = |e: std::io::Error| Error::Checkpoint(format!("{}: {e}", path.display()));
        let mut f = std::fs::File::open(path).map_err(io)?;
        let mut pre = [0u8; PREAMBLE];
        f.read_exact(&mut pre)
            .map_err(|_| Error::Checkpoint("not a silhouette checkpoint".into()))?;
        let hlen = read_preamble(&pre)?;
        let mut json = Vec::new();
        f.take(hlen as u64).read_to_end(&mut json).map_err(io)?;
        if json.len() != hlen {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header =
            serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(CheckpointInfo {
            kind: header.kind,
            fingerprint: header.fingerprint,
            quantization: header.quantization,
            step: header.step,
        })
    }
}
