use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use silhouette_core::QuantizationScheme;
use silhouette_nn::model::{init_params, GEN_PREFIX};
use silhouette_nn::{AdamW, Checkpoint, CheckpointKind, Model, ModelConfig, ParamStore};

use crate::error::{Error, Result};
use crate::plan::TrainPlan;
use crate::trainer::StepRecord;

/// RNG stream used for data sampling; parameter init uses stream 0.
const DATA_STREAM: u64 = 1;

/// Running loss statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub count: u64,
    pub mean_loss_g: f64,
    pub mean_loss_d: f64,
    pub last: Option<StepRecord>,
}

impl LossStats {
    pub fn push(&mut self, r: &StepRecord) {
        self.count += 1;
        let n = self.count as f64;
        self.mean_loss_g += (r.loss_g - self.mean_loss_g) / n;
        self.mean_loss_d += (r.loss_d - self.mean_loss_d) / n;
        self.last = Some(r.clone());
    }

    pub fn all_finite(&self) -> bool {
        self.mean_loss_g.is_finite() && self.mean_loss_d.is_finite()
    }
}

/// Everything a training run mutates.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub config: ModelConfig,
    pub scheme: Option<QuantizationScheme>,
    pub params: ParamStore,
    pub opt_g: AdamW,
    pub opt_d: AdamW,
    pub rng: ChaCha8Rng,
    pub stats: LossStats,
}

pub(crate) fn disc_params(params: &ParamStore) -> ParamStore {
    let mut p = params.subset("mpd.");
    p.extend(params.subset("msd."));
    p
}

fn data_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DATA_STREAM);
    rng
}

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Config("corrupt RNG state in checkpoint".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainMeta {
    plan: Option<TrainPlan>,
    rng: RngState,
    opt_g_step: u64,
    opt_d_step: u64,
    stats: LossStats,
}

impl TrainState {
    /// Fresh parameters and optimizer state seeded from the plan.
    pub fn new(config: ModelConfig, scheme: Option<QuantizationScheme>, plan: &TrainPlan) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, plan.rng_seed);
        Ok(Self::with_params(config, scheme, params, plan))
    }

    fn with_params(
        config: ModelConfig,
        scheme: Option<QuantizationScheme>,
        params: ParamStore,
        plan: &TrainPlan,
    ) -> Self {
        let opt_g = AdamW::new(plan.optimizer, &params.subset(GEN_PREFIX));
        let opt_d = AdamW::new(plan.optimizer, &disc_params(&params));
        Self {
            step: 0,
            config,
            scheme,
            params,
            opt_g,
            opt_d,
            rng: data_rng(plan.rng_seed),
            stats: LossStats::default(),
        }
    }

    /// Starts a new stage from trained parameters: step counter, optimizer
    /// moments and data RNG are reset for the new plan.
    pub fn from_pretrained(ckpt: &Checkpoint, scheme: Option<QuantizationScheme>, plan: &TrainPlan) -> Result<Self> {
        let (config, params) = gan_parts(ckpt)?;
        Model::new(config.clone(), params.clone())?;
        Ok(Self::with_params(config, scheme, params, plan))
    }

    pub fn model(&self) -> Result<Model> {
        Ok(Model::new(self.config.clone(), self.params.clone())?)
    }

    pub fn to_checkpoint(&self, plan: Option<&TrainPlan>) -> Result<Checkpoint> {
        let mut c = Checkpoint::gan(self.config.clone(), self.params.clone());
        c.step = self.step;
        c.quantization = self.scheme;
        for (name, store) in [
            ("opt_g.m", &self.opt_g.m),
            ("opt_g.v", &self.opt_g.v),
            ("opt_d.m", &self.opt_d.m),
            ("opt_d.v", &self.opt_d.v),
        ] {
            c.groups.insert(name.into(), store.clone());
        }
        let meta = TrainMeta {
            plan: plan.cloned(),
            rng: RngState::capture(&self.rng),
            opt_g_step: self.opt_g.step,
            opt_d_step: self.opt_d.step,
            stats: self.stats.clone(),
        };
        c.meta = serde_json::to_value(meta).map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }

    /// Restores a state saved by [`TrainState::to_checkpoint`] exactly, along
    /// with the plan it was saved under.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, Option<TrainPlan>)> {
        let (config, params) = gan_parts(ckpt)?;
        Model::new(config.clone(), params.clone())?;
        let meta: TrainMeta = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| Error::Config(format!("not a training checkpoint: {e}")))?;
        let group = |name: &str| {
            ckpt.group(name)
                .cloned()
                .ok_or_else(|| Error::Config(format!("checkpoint lacks optimizer group {name}")))
        };
        let adam = meta.plan.as_ref().map(|p| p.optimizer).unwrap_or_default();
        let opt_g = AdamW {
            config: adam,
            step: meta.opt_g_step,
            m: group("opt_g.m")?,
            v: group("opt_g.v")?,
        };
        let opt_d = AdamW {
            config: adam,
            step: meta.opt_d_step,
            m: group("opt_d.m")?,
            v: group("opt_d.v")?,
        };
        let state = Self {
            step: ckpt.step,
            config,
            scheme: ckpt.quantization,
            params,
            opt_g,
            opt_d,
            rng: meta.rng.restore()?,
            stats: meta.stats,
        };
        Ok((state, meta.plan))
    }
}

fn gan_parts(ckpt: &Checkpoint) -> Result<(ModelConfig, ParamStore)> {
    if ckpt.kind != CheckpointKind::Gan {
        return Err(Error::Config("checkpoint does not hold a trainable model".into()));
    }
    let config = ckpt
        .config
        .clone()
        .ok_or_else(|| Error::Config("checkpoint has no model config".into()))?;
    let params = ckpt
        .params()
        .cloned()
        .ok_or_else(|| Error::Config("checkpoint has no parameters".into()))?;
    Ok((config, params))
}
