//! Config-driven runs: a training stage into an output directory and a full
//! evaluation with report files.

use std::fs;
use std::path::{Path, PathBuf};

use silhouette_core::{extract_silhouette, DEFAULT_HOP, DEFAULT_WINDOW};
use silhouette_nn::Checkpoint;

use crate::config::{load_audio_set, EvalConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{build_test_set, evaluate_system, EvalReport};
use crate::overlay::render_overlay;
use crate::state::TrainState;
use crate::trainer::{checkpoint_path, latest_checkpoint, run_stage, RunOptions, StepObserver};

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Step of the checkpoint the run resumed from, if any.
    pub resumed_from: Option<u64>,
    pub checkpoint: PathBuf,
}

/// Runs the configured stage into `cfg.output_dir`. An existing checkpoint
/// there is resumed; otherwise training starts from `init` (fine-tuning) or
/// from a seeded initialization.
pub fn train_from_config<'a>(
    cfg: &TrainConfig,
    init: Option<&Path>,
    on_step: Option<&'a mut StepObserver<'a>>,
) -> Result<TrainOutcome> {
    let corpus = cfg.load_corpus()?;
    let (state, resumed_from) = match latest_checkpoint(&cfg.output_dir)? {
        Some((step, path)) => {
            let (state, _) = TrainState::from_checkpoint(&Checkpoint::load(&path)?)?;
            if state.config != cfg.model || state.scheme != cfg.scheme {
                return Err(Error::Config(format!(
                    "{} holds a run with a different model or quantization",
                    cfg.output_dir.display()
                )));
            }
            (state, Some(step))
        }
        None => match init {
            Some(p) => (
                TrainState::from_pretrained(&Checkpoint::load(p)?, cfg.scheme, &cfg.plan)?,
                None,
            ),
            None => (TrainState::new(cfg.model.clone(), cfg.scheme, &cfg.plan)?, None),
        },
    };
    if state.config != cfg.model {
        return Err(Error::Config("initial checkpoint does not match the configured model".into()));
    }
    let opts = RunOptions {
        out_dir: Some(cfg.output_dir.clone()),
        on_step,
    };
    let state = run_stage(state, &cfg.plan, &corpus, opts)?;
    let checkpoint = checkpoint_path(&cfg.output_dir, state.step);
    Ok(TrainOutcome {
        state,
        resumed_from,
        checkpoint,
    })
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub json_path: PathBuf,
    pub table_path: PathBuf,
    pub overlays: usize,
}

/// Evaluates every configured system on one shared test set and writes
/// `<output>.json` and `<output>.txt`.
pub fn evaluate_from_config(cfg: &EvalConfig) -> Result<EvalOutcome> {
    let sources = load_audio_set(&cfg.sources)?;
    let rate = sources
        .first()
        .map(|(_, w)| w.sample_rate_hz())
        .ok_or_else(|| Error::Eval("no test sources".into()))?;
    if let Some((id, _)) = sources.iter().find(|(_, w)| w.sample_rate_hz() != rate) {
        return Err(Error::Eval(format!("source {id} is not at {rate} Hz")));
    }
    let segment_len = (cfg.segment_seconds * rate as f64).round() as usize;
    let cases = build_test_set(&sources, segment_len, cfg.seed)?;
    let systems = cfg.build_systems()?;
    let mut report = EvalReport::default();
    for system in &systems {
        report = report.merge(evaluate_system(system, &cases)?);
    }
    report.provenance.seed = Some(cfg.seed);

    let mut overlays = 0;
    if let Some(dir) = &cfg.overlay_dir {
        fs::create_dir_all(dir)?;
        for system in &systems {
            for case in &cases {
                let conditioning = case.conditioning(system.scheme)?;
                for t in &system.targets {
                    let out = t.target.synthesize(case, &conditioning)?;
                    let achieved = extract_silhouette(&out, DEFAULT_WINDOW, DEFAULT_HOP)?;
                    let name = format!("{}_{}_{}_{}.png", system.name, t.id, case.source_id, case.index);
                    render_overlay(&case.reference, &achieved, dir.join(sanitize(&name)))?;
                    overlays += 1;
                }
            }
        }
    }

    if let Some(parent) = cfg.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let json_path = cfg.output.with_extension("json");
    let table_path = cfg.output.with_extension("txt");
    fs::write(&json_path, report.to_json())?;
    fs::write(&table_path, report.to_table())?;
    Ok(EvalOutcome {
        report,
        json_path,
        table_path,
        overlays,
    })
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}
