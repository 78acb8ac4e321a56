#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use silhouette_core::{extract_silhouette, MelAnalyzer, QuantizationScheme, Waveform};
use silhouette_nn::model::{generator_forward, generator_layout, init_params, silhouettes_to_tensor, waveforms_to_tensor, GEN_PREFIX};
use silhouette_nn::params::{seeded_rng, Init};
use silhouette_nn::{Graph, ModelConfig, ParamStore, Tensor};
use silhouette_train::fixtures::laughter_like;
use silhouette_train::plan::LossWeights;
use silhouette_train::trainer::{discriminator_objective, generator_objective, mel_analyzer};

pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn rel_err(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// A loss evaluation: value, optional gradients and the branch pattern of
/// its non-smooth points.
pub struct Eval {
    pub value: f64,
    pub grads: Option<ParamStore>,
    pub pattern: u64,
}

/// Short real/conditioning pair for gradient checks: 5 frames, 1280 samples.
pub struct Problem {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub real: Tensor,
    pub y: Tensor,
    pub analyzer: Arc<MelAnalyzer>,
}

pub fn problem(seed: u64) -> Problem {
    let config = ModelConfig::tiny();
    let clip = laughter_like(0.5, 24_000, 0.8, seed).segment(2400, 2048).unwrap();
    let y = extract_silhouette(&clip, 1024, 256)
        .unwrap()
        .quantize(QuantizationScheme::mu_law(256))
        .unwrap();
    let real = &clip.samples()[..y.len() * 256];
    // Fan-in scaled weights keep activations well away from the leaky-ReLU
    // kink relative to the finite-difference step; the 0.01 training init
    // leaves them so small that a 1e-4 nudge flips many signs.
    let mut params = ParamStore::new();
    let mut rng = seeded_rng(seed);
    for mut l in generator_layout(&config.generator) {
        l.init = Init::FanIn;
        params.add_conv(&mut rng, &l.name, l.weight_shape, l.bias_len, l.fan_in, l.init);
    }
    params.extend(init_params(&config, seed).subset("mpd."));
    params.extend(init_params(&config, seed).subset("msd."));
    Problem {
        params,
        config,
        real: waveforms_to_tensor(&[real]).unwrap(),
        y: silhouettes_to_tensor(&[&y]).unwrap(),
        analyzer: mel_analyzer(24_000).unwrap(),
    }
}

fn disc_subset(p: &ParamStore) -> ParamStore {
    let mut d = p.subset("mpd.");
    d.extend(p.subset("msd."));
    d
}

/// Generator loss and, when `grad`, the gradient of every generator parameter.
pub fn generator_loss_at(p: &Problem, gen: &ParamStore, grad: bool) -> Eval {
    generator_loss_weighted(p, gen, grad, LossWeights::default())
}

pub fn generator_loss_weighted(p: &Problem, gen: &ParamStore, grad: bool, w: LossWeights) -> Eval {
    let mut g = Graph::new();
    let gb = gen.bind(&mut g, grad);
    let db = disc_subset(&p.params).bind(&mut g, false);
    let y = g.constant(p.y.clone());
    let fake = generator_forward(&p.config.generator, &mut g, &gb, y);
    let real = g.constant(p.real.clone());
    let l = generator_objective(&mut g, &p.config.discriminator, &db, fake, real, &p.analyzer, w)
        .unwrap();
    let v = g.value(l.total).item();
    let grads = grad.then(|| {
        let mut gr = g.backward(l.total);
        gb.gradients(&g, &mut gr)
    });
    Eval { value: v, grads, pattern: g.branch_pattern() }
}

pub fn fake_of(p: &Problem) -> Tensor {
    let mut g = Graph::new();
    let gb = p.params.subset(GEN_PREFIX).bind(&mut g, false);
    let y = g.constant(p.y.clone());
    let fake = generator_forward(&p.config.generator, &mut g, &gb, y);
    g.value(fake).clone()
}

pub fn discriminator_loss_at(p: &Problem, fake: &Tensor, disc: &ParamStore, grad: bool) -> Eval {
    let mut g = Graph::new();
    let db = disc.bind(&mut g, grad);
    let real = g.constant(p.real.clone());
    let f = g.constant(fake.clone());
    let l = discriminator_objective(&mut g, &p.config.discriminator, &db, real, f).unwrap();
    let v = g.value(l).item();
    let grads = grad.then(|| {
        let mut gr = g.backward(l);
        db.gradients(&g, &mut gr)
    });
    Eval { value: v, grads, pattern: g.branch_pattern() }
}

/// Central differences with step `h` at `n` scalar parameters drawn
/// uniformly from the flattened parameter vector. Draws whose ±h evaluations
/// leave the smooth piece of the base point (a leaky-ReLU sign, L1 sign or
/// log-mel floor flips) are redrawn, since finite differences are
/// meaningless across a kink; the number redrawn is returned alongside.
pub fn check(
    params: &ParamStore,
    n: usize,
    h: f64,
    seed: u64,
    loss: impl Fn(&ParamStore, bool) -> Eval,
) -> (Vec<GradSample>, usize) {
    let base = loss(params, true);
    let grads = base.grads.unwrap();
    let sizes: Vec<(String, usize)> = params.iter().map(|(k, t)| (k.clone(), t.len())).collect();
    let total: usize = sizes.iter().map(|s| s.1).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut redrawn = 0;
    while out.len() < n {
        let mut flat = rng.random_range(0..total);
        let mut pick = None;
        for (k, len) in &sizes {
            if flat < *len {
                pick = Some((k.clone(), flat));
                break;
            }
            flat -= len;
        }
        let (name, index) = pick.expect("index within the parameter vector");
        let at = |delta: f64| {
            let mut q = params.clone();
            q.get_mut(&name).unwrap().data_mut()[index] += delta;
            loss(&q, false)
        };
        let (plus, minus) = (at(h), at(-h));
        if plus.pattern != base.pattern || minus.pattern != base.pattern {
            redrawn += 1;
            assert!(redrawn < 50 * n, "almost every draw crosses a kink");
            continue;
        }
        out.push(GradSample {
            analytic: grads.get(&name).unwrap().data()[index],
            numeric: (plus.value - minus.value) / (2.0 * h),
            name,
            index,
        });
    }
    (out, redrawn)
}

pub fn clip(seed: u64) -> Waveform {
    laughter_like(2.0, 24_000, 0.8, seed)
}
