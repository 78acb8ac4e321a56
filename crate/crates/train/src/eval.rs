use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use silhouette_core::{
    extract_silhouette, silhouette_mse, QuantizationKind, QuantizationScheme, SilhouetteTrack,
    Waveform, DEFAULT_HOP, DEFAULT_WINDOW,
};
use silhouette_nn::{synthesizer_from_checkpoint, Checkpoint, Synthesizer};

use crate::error::{Error, Result};

pub const SEGMENTS_PER_SOURCE: usize = 2;

/// One test silhouette: a source segment, its unquantized silhouette (the
/// MSE reference) and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub source_id: String,
    pub index: usize,
    pub offset: usize,
    /// The source was shorter than the segment and was zero-padded.
    pub padded: bool,
    pub segment: Waveform,
    pub reference: SilhouetteTrack,
}

impl TestCase {
    /// The silhouette a system is conditioned on: the reference quantized
    /// with the system's scheme (bin centers), or the reference itself.
    pub fn conditioning(&self, scheme: Option<QuantizationScheme>) -> Result<SilhouetteTrack> {
        Ok(match scheme {
            Some(s) => self.reference.quantize(s)?,
            None => self.reference.clone(),
        })
    }
}

/// Two segments per source at seeded random offsets.
pub fn build_test_set(sources: &[(String, Waveform)], segment_len: usize, seed: u64) -> Result<Vec<TestCase>> {
    if sources.is_empty() {
        return Err(Error::Eval("no test sources".into()));
    }
    if segment_len < DEFAULT_WINDOW {
        return Err(Error::Eval(format!(
            "segment of {segment_len} samples is shorter than one window"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(sources.len() * SEGMENTS_PER_SOURCE);
    for (id, w) in sources {
        for index in 0..SEGMENTS_PER_SOURCE {
            let offset = if w.len() > segment_len {
                rng.random_range(0..=w.len() - segment_len)
            } else {
                0
            };
            let segment = w.segment(offset, segment_len)?;
            let reference = extract_silhouette(&segment, DEFAULT_WINDOW, DEFAULT_HOP)?;
            cases.push(TestCase {
                source_id: id.clone(),
                index,
                offset,
                padded: w.len() < segment_len,
                segment,
                reference,
            });
        }
    }
    Ok(cases)
}

/// A fine-tuned model, or the identity system that returns the source segment.
pub enum Target {
    Model(Box<dyn Synthesizer>),
    Identity,
}

impl Target {
    pub fn synthesize(&self, case: &TestCase, conditioning: &SilhouetteTrack) -> Result<Waveform> {
        match self {
            Target::Model(m) => Ok(m.synthesize(conditioning)?),
            Target::Identity => Ok(case.segment.clone()),
        }
    }

    fn fingerprint(&self) -> String {
        match self {
            Target::Model(m) => m.fingerprint(),
            Target::Identity => "identity".into(),
        }
    }
}

pub struct TargetSpec {
    pub id: String,
    pub target: Target,
    /// Where the target came from, e.g. a checkpoint path.
    pub source: String,
}

impl TargetSpec {
    /// Loads a checkpoint, rejecting one trained for a different scheme.
    pub fn from_checkpoint(id: &str, path: &Path, scheme: Option<QuantizationScheme>) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        if let (Some(trained), Some(wanted)) = (ckpt.quantization, scheme) {
            if trained != wanted {
                return Err(Error::Eval(format!(
                    "{} was trained with {trained}, system uses {wanted}",
                    path.display()
                )));
            }
        }
        Ok(Self {
            id: id.into(),
            target: Target::Model(synthesizer_from_checkpoint(&ckpt)?),
            source: path.display().to_string(),
        })
    }

    pub fn identity(id: &str) -> Self {
        Self {
            id: id.into(),
            target: Target::Identity,
            source: "identity".into(),
        }
    }
}

pub struct SystemSpec {
    pub name: String,
    pub scheme: Option<QuantizationScheme>,
    pub targets: Vec<TargetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRow {
    pub name: String,
    pub kind: Option<QuantizationKind>,
    pub num_bins: Option<u32>,
    pub num_tests: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub system: String,
    pub target: String,
    pub source: String,
    pub segment: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetProvenance {
    pub system: String,
    pub target: String,
    pub source: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub targets: Vec<TargetProvenance>,
    /// Sources shorter than the segment length (zero-padded).
    pub padded_sources: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<SystemRow>,
    pub records: Vec<TestRecord>,
    pub provenance: Provenance,
}

/// Synthesizes every (target, test case) pair and scores the output's
/// silhouette against the unquantized reference.
/// Silhouette MSE between an unquantized reference and the silhouette
/// re-extracted from `output` with the reference's framing.
pub fn achieved_mse(reference: &SilhouetteTrack, output: &Waveform) -> Result<f64> {
    let reference = reference.without_tag();
    let achieved = extract_silhouette(output, reference.window_len(), reference.hop_len())?;
    Ok(silhouette_mse(&reference, &achieved)?)
}

pub fn evaluate_system(system: &SystemSpec, cases: &[TestCase]) -> Result<EvalReport> {
    if system.targets.is_empty() || cases.is_empty() {
        return Err(Error::Eval(format!("system {} has nothing to evaluate", system.name)));
    }
    let mut records = Vec::with_capacity(system.targets.len() * cases.len());
    for case in cases {
        let conditioning = case.conditioning(system.scheme)?;
        for t in &system.targets {
            let out = t.target.synthesize(case, &conditioning)?;
            let mse = achieved_mse(&case.reference, &out)?;
            records.push(TestRecord {
                system: system.name.clone(),
                target: t.id.clone(),
                source: case.source_id.clone(),
                segment: case.index,
                mse,
            });
        }
    }
    sort_records(&mut records);
    let mse = records.iter().map(|r| r.mse).sum::<f64>() / records.len() as f64;
    let mut padded: Vec<String> = cases.iter().filter(|c| c.padded).map(|c| c.source_id.clone()).collect();
    padded.dedup();
    Ok(EvalReport {
        rows: vec![SystemRow {
            name: system.name.clone(),
            kind: system.scheme.map(|s| s.kind),
            num_bins: system.scheme.map(|s| s.num_bins),
            num_tests: records.len(),
            mse,
        }],
        records,
        provenance: Provenance {
            seed: None,
            targets: system
                .targets
                .iter()
                .map(|t| TargetProvenance {
                    system: system.name.clone(),
                    target: t.id.clone(),
                    source: t.source.clone(),
                    fingerprint: t.target.fingerprint(),
                })
                .collect(),
            padded_sources: padded,
        },
    })
}

fn sort_records(records: &mut [TestRecord]) {
    records.sort_by(|a, b| {
        (&a.system, &a.target, &a.source, a.segment).cmp(&(&b.system, &b.target, &b.source, b.segment))
    });
}

impl EvalReport {
    pub fn merge(mut self, other: EvalReport) -> Self {
        self.rows.extend(other.rows);
        self.records.extend(other.records);
        sort_records(&mut self.records);
        self.provenance.targets.extend(other.provenance.targets);
        for s in other.provenance.padded_sources {
            if !self.provenance.padded_sources.contains(&s) {
                self.provenance.padded_sources.push(s);
            }
        }
        self.provenance.seed = self.provenance.seed.or(other.provenance.seed);
        self
    }

    /// Mean of the records belonging to `system`.
    pub fn recomputed_mean(&self, system: &str) -> Option<f64> {
        let v: Vec<f64> = self.records.iter().filter(|r| r.system == system).map(|r| r.mse).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Eval(format!("bad report: {e}")))
    }

    /// Plain-text table with columns System, Type, nBins, nTests, MSE.
    pub fn to_table(&self) -> String {
        let mut rows = vec![["System".to_string(), "Type".into(), "nBins".into(), "nTests".into(), "MSE".into()]];
        for r in &self.rows {
            rows.push([
                r.name.clone(),
                match r.kind {
                    Some(QuantizationKind::Linear) => "Linear".into(),
                    Some(QuantizationKind::MuLaw) => "μ-law".into(),
                    None => "none".into(),
                },
                r.num_bins.map_or("-".into(), |b| b.to_string()),
                r.num_tests.to_string(),
                format!("{:.4}", r.mse),
            ]);
        }
        let widths: Vec<usize> = (0..5)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}
