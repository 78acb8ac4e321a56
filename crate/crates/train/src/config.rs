//! TOML run configurations for training and evaluation. Relative paths are
//! resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use silhouette_core::{load_wav, QuantizationScheme, Waveform};
use silhouette_nn::{ModelConfig, Profile};

use crate::error::{Error, Result};
use crate::eval::{SystemSpec, TargetSpec};
use crate::plan::TrainPlan;

fn parse_scheme(s: &Option<String>) -> Result<Option<QuantizationScheme>> {
    s.as_deref()
        .filter(|s| !s.eq_ignore_ascii_case("none"))
        .map(|s| s.parse().map_err(|e: silhouette_core::Error| Error::Config(e.to_string())))
        .transpose()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, PathBuf)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

/// Expands files and directories (their `*.wav` entries, sorted) into
/// `(id, waveform)` pairs; ids are file stems.
pub fn load_audio_set(paths: &[PathBuf]) -> Result<Vec<(String, Waveform)>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    files
        .iter()
        .map(|f| {
            let id = f
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| f.display().to_string());
            Ok((id, load_wav(f)?))
        })
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    #[serde(default)]
    profile: Option<Profile>,
    #[serde(default)]
    model: Option<ModelConfig>,
    #[serde(default)]
    quantization: Option<String>,
    corpus: Vec<PathBuf>,
    output_dir: PathBuf,
    plan: TrainPlan,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub scheme: Option<QuantizationScheme>,
    pub corpus: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub plan: TrainPlan,
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let (f, base): (TrainFile, _) = read_config(path)?;
        let model = match (f.model, f.profile) {
            (Some(m), _) => {
                m.validate()?;
                m
            }
            (None, p) => ModelConfig::profile(p.unwrap_or(Profile::Tiny)),
        };
        f.plan.validate()?;
        Ok(Self {
            model,
            scheme: parse_scheme(&f.quantization)?,
            corpus: f.corpus.iter().map(|p| resolve(&base, p)).collect(),
            output_dir: resolve(&base, &f.output_dir),
            plan: f.plan,
        })
    }

    pub fn load_corpus(&self) -> Result<Vec<Waveform>> {
        Ok(load_audio_set(&self.corpus)?.into_iter().map(|(_, w)| w).collect())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub id: String,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Use the identity system (returns the source segment).
    #[serde(default)]
    pub identity: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    #[serde(default)]
    pub quantization: Option<String>,
    pub targets: Vec<TargetConfig>,
}

fn default_segment_seconds() -> f64 {
    6.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_segment_seconds")]
    pub segment_seconds: f64,
    pub sources: Vec<PathBuf>,
    /// Report path without extension; `.json` and `.txt` are written.
    pub output: PathBuf,
    /// Optional directory for one overlay PNG per system/target/test.
    #[serde(default)]
    pub overlay_dir: Option<PathBuf>,
    pub systems: Vec<SystemConfig>,
}

impl EvalConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let (mut c, base): (EvalConfig, _) = read_config(path)?;
        c.sources = c.sources.iter().map(|p| resolve(&base, p)).collect();
        c.output = resolve(&base, &c.output);
        c.overlay_dir = c.overlay_dir.map(|p| resolve(&base, &p));
        for s in &mut c.systems {
            for t in &mut s.targets {
                t.checkpoint = t.checkpoint.as_ref().map(|p| resolve(&base, p));
            }
        }
        if c.systems.is_empty() {
            return Err(Error::Config("no systems to evaluate".into()));
        }
        if !(c.segment_seconds > 0.0) {
            return Err(Error::Config("segment_seconds must be positive".into()));
        }
        Ok(c)
    }

    pub fn build_systems(&self) -> Result<Vec<SystemSpec>> {
        self.systems
            .iter()
            .map(|s| {
                let scheme = parse_scheme(&s.quantization)?;
                let targets = s
                    .targets
                    .iter()
                    .map(|t| match (&t.checkpoint, t.identity) {
                        (None, true) => Ok(TargetSpec::identity(&t.id)),
                        (Some(p), false) => TargetSpec::from_checkpoint(&t.id, p, scheme),
                        _ => Err(Error::Config(format!(
                            "target {} needs exactly one of checkpoint or identity",
                            t.id
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(SystemSpec {
                    name: s.name.clone(),
                    scheme,
                    targets,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_config_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.toml");
        std::fs::write(
            &p,
            r#"
profile = "tiny"
quantization = "MU016"
corpus = ["clips"]
output_dir = "runs/a"

[plan]
stage = "pretrain"
total_steps = 10
batch_size = 1
segment_seconds = 0.5
aug_lambda_range = [0.3, 1.0]
rng_seed = 4
"#,
        )
        .unwrap();
        let c = TrainConfig::load(&p).unwrap();
        assert_eq!(c.output_dir, dir.path().join("runs/a"));
        assert_eq!(c.scheme, Some(QuantizationScheme::mu_law(16)));
        assert_eq!(c.plan.loss_weights.mel, 45.0);
        assert_eq!(c.model, ModelConfig::tiny());
    }

    #[test]
    fn eval_config_rejects_ambiguous_targets() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eval.toml");
        std::fs::write(
            &p,
            r#"
sources = ["a.wav"]
output = "report"

[[systems]]
name = "x"
targets = [{ id = "t", identity = true, checkpoint = "c.ckpt" }]
"#,
        )
        .unwrap();
        let c = EvalConfig::load(&p).unwrap();
        assert_eq!(c.segment_seconds, 6.0);
        assert!(c.build_systems().is_err());
    }
}
