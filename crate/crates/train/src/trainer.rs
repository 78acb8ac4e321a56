use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use silhouette_core::{MelAnalyzer, MelConfig, Waveform};
use silhouette_nn::model::{
    discriminate_all, generator_forward, silhouettes_to_tensor, waveforms_to_tensor, GEN_PREFIX,
};
use silhouette_nn::params::Bound;
use silhouette_nn::{Checkpoint, DiscriminatorConfig, Graph, Tensor, Var};

use crate::data::{sample_batch, validate_corpus, Batch};
use crate::error::{Error, Result};
use crate::losses::{discriminator_loss, generator_loss, GeneratorLoss};
use crate::plan::{LossWeights, TrainPlan};
use crate::state::{disc_params, TrainState};

pub const LOG_FILE: &str = "log.ndjson";

/// One line of `log.ndjson`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub adv: f64,
    pub fm: f64,
    pub mel: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Returned by a step observer to continue or end the stage early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

pub type StepObserver<'a> = dyn FnMut(&TrainState, &StepRecord) -> Result<Control> + 'a;

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Directory for `ckpt_<step>.ckpt` files and the loss log.
    pub out_dir: Option<PathBuf>,
    pub on_step: Option<&'a mut StepObserver<'a>>,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt_{step}.ckpt"))
}

/// Highest-step `ckpt_<step>.ckpt` in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<(u64, PathBuf)>> {
    let mut best: Option<(u64, PathBuf)> = None;
    if !dir.exists() {
        return Ok(None);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("ckpt_"))
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(step) = step {
            if best.as_ref().is_none_or(|(b, _)| step > *b) {
                best = Some((step, path));
            }
        }
    }
    Ok(best)
}

pub fn read_log(dir: &Path) -> Result<Vec<StepRecord>> {
    let path = dir.join(LOG_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Config(format!("bad log line: {e}")))?);
    }
    Ok(out)
}

/// Stacks a batch into `x: [B, 1, F·256]` targets and `y: [B, 2, F]` conditioning.
pub fn batch_tensors(batch: &Batch) -> Result<(Tensor, Tensor)> {
    let targets: Vec<&[f64]> = batch.examples.iter().map(|e| e.target()).collect();
    let tracks: Vec<_> = batch.examples.iter().map(|e| &e.conditioning).collect();
    Ok((waveforms_to_tensor(&targets)?, silhouettes_to_tensor(&tracks)?))
}

/// Builds the generator objective for `fake` against `real` with the
/// discriminators bound in `disc`.
pub fn generator_objective(
    g: &mut Graph,
    cfg: &DiscriminatorConfig,
    disc: &Bound,
    fake: Var,
    real: Var,
    analyzer: &Arc<MelAnalyzer>,
    weights: LossWeights,
) -> Result<GeneratorLoss> {
    let real_out = discriminate_all(cfg, g, disc, real);
    let fake_out = discriminate_all(cfg, g, disc, fake);
    let mel_real = g.log_mel(real, analyzer.clone());
    let mel_fake = g.log_mel(fake, analyzer.clone());
    generator_loss(g, &fake_out, &real_out, mel_real, mel_fake, weights)
}

pub fn discriminator_objective(
    g: &mut Graph,
    cfg: &DiscriminatorConfig,
    disc: &Bound,
    real: Var,
    fake: Var,
) -> Result<Var> {
    let real_out = discriminate_all(cfg, g, disc, real);
    let fake_out = discriminate_all(cfg, g, disc, fake);
    discriminator_loss(g, &real_out, &fake_out)
}

pub fn mel_analyzer(rate_hz: u32) -> Result<Arc<MelAnalyzer>> {
    Ok(Arc::new(MelAnalyzer::new(MelConfig::for_rate(rate_hz))?))
}

fn non_finite(what: &str, step: u64) -> Error {
    Error::NonFinite {
        what: what.into(),
        step,
        snapshot: None,
    }
}

fn tag_step(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite { what, snapshot, .. } => Error::NonFinite { what, step, snapshot },
        other => other,
    }
}

/// Updates the discriminators on `real` vs a detached `fake`; generator
/// parameters are not touched. Returns the discriminator loss.
pub fn discriminator_update(
    state: &mut TrainState,
    real: &Tensor,
    fake: &Tensor,
    lr: f64,
) -> Result<f64> {
    let step = state.step + 1;
    let mut g = Graph::new();
    let disc = disc_params(&state.params).bind(&mut g, true);
    let real = g.constant(real.clone());
    let fake = g.constant(fake.clone());
    let loss = discriminator_objective(&mut g, &state.config.discriminator, &disc, real, fake)
        .map_err(|e| tag_step(e, step))?;
    let mut grads = g.backward(loss);
    let grads = disc.gradients(&g, &mut grads);
    if !grads.all_finite() {
        return Err(non_finite("discriminator gradient", step));
    }
    state.opt_d.update(&mut state.params, &grads, lr)?;
    Ok(g.value(loss).item())
}

/// Generator half of a step: `g` already holds the generator forward pass
/// (`gen` bound with gradients, output `fake`). Discriminators enter as
/// constants, so only generator parameters change.
#[allow(clippy::too_many_arguments)]
pub fn generator_update(
    state: &mut TrainState,
    g: &mut Graph,
    gen: &Bound,
    fake: Var,
    real: &Tensor,
    analyzer: &Arc<MelAnalyzer>,
    weights: LossWeights,
    lr: f64,
) -> Result<crate::losses::GeneratorLossValues> {
    let step = state.step + 1;
    let disc = disc_params(&state.params).bind(g, false);
    let real = g.constant(real.clone());
    let loss = generator_objective(g, &state.config.discriminator, &disc, fake, real, analyzer, weights)
        .map_err(|e| tag_step(e, step))?;
    let values = loss.values(g);
    let mut grads = g.backward(loss.total);
    let grads = gen.gradients(g, &mut grads);
    if !grads.all_finite() {
        return Err(non_finite("generator gradient", step));
    }
    state.opt_g.update(&mut state.params, &grads, lr)?;
    Ok(values)
}

/// Runs the generator on `y` with gradients enabled.
pub fn generator_pass(state: &TrainState, y: Tensor) -> (Graph, Bound, Var) {
    let mut g = Graph::new();
    let gen = state.params.subset(GEN_PREFIX).bind(&mut g, true);
    let yv = g.constant(y);
    let fake = generator_forward(&state.config.generator, &mut g, &gen, yv);
    (g, gen, fake)
}

/// One discriminator update followed by one generator update.
pub fn train_step(
    state: &mut TrainState,
    plan: &TrainPlan,
    batch: &Batch,
    analyzer: &Arc<MelAnalyzer>,
) -> Result<StepRecord> {
    let started = Instant::now();
    let step = state.step + 1;
    let lr = plan.optimizer.learning_rate * plan.lr_schedule.factor(state.step);
    let (x, y) = batch_tensors(batch)?;
    let (mut g, gen, fake) = generator_pass(state, y);
    if !g.value(fake).all_finite() {
        return Err(non_finite("generator output", step));
    }
    let fake_value = g.value(fake).clone();
    let loss_d = discriminator_update(state, &x, &fake_value, lr)?;
    let values = generator_update(state, &mut g, &gen, fake, &x, analyzer, plan.loss_weights, lr)?;
    state.step = step;
    let record = StepRecord {
        step,
        loss_g: values.total,
        loss_d,
        adv: values.adv,
        fm: values.fm,
        mel: values.mel,
        lr,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    if !(record.loss_g.is_finite() && record.loss_d.is_finite()) {
        return Err(non_finite("loss", step));
    }
    state.stats.push(&record);
    Ok(record)
}

/// Drops log records past `step` so a resumed run does not duplicate them.
fn trim_log(dir: &Path, step: u64) -> Result<()> {
    let records: Vec<StepRecord> = read_log(dir)?.into_iter().filter(|r| r.step <= step).collect();
    let mut f = File::create(dir.join(LOG_FILE))?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(&r).expect("records serialize"))?;
    }
    Ok(())
}

/// Trains until `plan.total_steps`, checkpointing into `opts.out_dir`.
/// A non-finite loss aborts with a `diag_<step>.ckpt` snapshot.
pub fn run_stage(
    mut state: TrainState,
    plan: &TrainPlan,
    corpus: &[Waveform],
    mut opts: RunOptions<'_>,
) -> Result<TrainState> {
    plan.validate()?;
    if state.step >= plan.total_steps {
        return Ok(state);
    }
    let rate = validate_corpus(corpus)?;
    let analyzer = mel_analyzer(rate)?;
    state.opt_g.config = plan.optimizer;
    state.opt_d.config = plan.optimizer;
    let mut log = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            trim_log(dir, state.step)?;
            Some(OpenOptions::new().append(true).open(dir.join(LOG_FILE))?)
        }
        None => None,
    };
    let mut last_saved = None;
    while state.step < plan.total_steps {
        let batch = sample_batch(corpus, plan, state.scheme, &mut state.rng)?;
        let record = match train_step(&mut state, plan, &batch, &analyzer) {
            Ok(r) => r,
            Err(Error::NonFinite { what, step, .. }) => {
                let snapshot = match &opts.out_dir {
                    Some(dir) => {
                        let p = dir.join(format!("diag_{step}.ckpt"));
                        state.to_checkpoint(Some(plan))?.save(&p)?;
                        Some(p)
                    }
                    None => None,
                };
                return Err(Error::NonFinite { what, step, snapshot });
            }
            Err(e) => return Err(e),
        };
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&record).expect("records serialize"))?;
        }
        let stop = match opts.on_step.as_mut() {
            Some(cb) => cb(&state, &record)? == Control::Stop,
            None => false,
        };
        if let Some(dir) = &opts.out_dir {
            let periodic = plan.checkpoint_every > 0 && state.step % plan.checkpoint_every == 0;
            if periodic || stop || state.step == plan.total_steps {
                save_state(&state, plan, dir)?;
                last_saved = Some(state.step);
            }
        }
        if stop {
            break;
        }
    }
    if let (Some(dir), true) = (&opts.out_dir, last_saved != Some(state.step)) {
        save_state(&state, plan, dir)?;
    }
    Ok(state)
}

fn save_state(state: &TrainState, plan: &TrainPlan, dir: &Path) -> Result<()> {
    state
        .to_checkpoint(Some(plan))?
        .save(checkpoint_path(dir, state.step))
        .map_err(|e| Error::Config(format!("checkpoint write failed: {e}")))
}

/// Loads the most recent checkpoint in `dir` for resuming.
pub fn resume_from(dir: &Path) -> Result<Option<(TrainState, Option<TrainPlan>)>> {
    match latest_checkpoint(dir)? {
        Some((_, path)) => {
            let ckpt = Checkpoint::load(path)?;
            Ok(Some(TrainState::from_checkpoint(&ckpt)?))
        }
        None => Ok(None),
    }
}
