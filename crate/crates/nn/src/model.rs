//! The silhouette-conditioned generator and the period / scale discriminators.
//!
//! Parameter names follow the layer structure, e.g.
//! `gen.resblocks.3.convs1.1.weight` or `mpd.0.convs.2.bias`.

use rand_chacha::ChaCha8Rng;
use silhouette_core::{SilhouetteTrack, Waveform};

use crate::config::{DiscriminatorConfig, GeneratorConfig, ModelConfig};
use crate::conv::ConvSpec;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{seeded_rng, Bound, Init, ParamStore};
use crate::tensor::Tensor;

pub const GEN_PREFIX: &str = "gen.";
pub const DISC_PREFIXES: [&str; 2] = ["mpd.", "msd."];

const CONV_PRE_KERNEL: usize = 7;
const CONV_POST_KERNEL: usize = 7;
const DISC_POST_KERNEL: usize = 3;
const WEIGHT_STD: f64 = 0.01;
const POOL_KERNEL: usize = 4;
const POOL_STRIDE: usize = 2;
const POOL_PADDING: usize = 2;

/// One parameterised convolution in a layout listing.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub name: String,
    pub weight_shape: [usize; 3],
    pub bias_len: usize,
    pub fan_in: usize,
    pub init: Init,
}

fn layer(name: String, weight_shape: [usize; 3], bias_len: usize, fan_in: usize, init: Init) -> LayerSpec {
    LayerSpec {
        name,
        weight_shape,
        bias_len,
        fan_in,
        init,
    }
}

pub fn generator_layout(cfg: &GeneratorConfig) -> Vec<LayerSpec> {
    let c0 = cfg.initial_channels;
    let mut out = vec![layer(
        "gen.conv_pre".into(),
        [c0, cfg.in_channels, CONV_PRE_KERNEL],
        c0,
        cfg.in_channels * CONV_PRE_KERNEL,
        Init::FanIn,
    )];
    let nk = cfg.mrf_kernel_sizes.len();
    for (i, &k) in cfg.upsample_kernel_sizes.iter().enumerate() {
        let (c_in, c_out) = (c0 >> i, cfg.stage_channels(i));
        out.push(layer(
            format!("gen.ups.{i}"),
            [c_in, c_out, k],
            c_out,
            c_out * k,
            Init::Normal(WEIGHT_STD),
        ));
        for (j, (&mk, dils)) in cfg.mrf_kernel_sizes.iter().zip(&cfg.mrf_dilations).enumerate() {
            for bank in ["convs1", "convs2"] {
                for d in 0..dils.len() {
                    out.push(layer(
                        format!("gen.resblocks.{}.{bank}.{d}", i * nk + j),
                        [c_out, c_out, mk],
                        c_out,
                        c_out * mk,
                        Init::Normal(WEIGHT_STD),
                    ));
                }
            }
        }
    }
    let c_last = cfg.stage_channels(cfg.upsample_rates.len() - 1);
    out.push(layer(
        "gen.conv_post".into(),
        [1, c_last, CONV_POST_KERNEL],
        1,
        c_last * CONV_POST_KERNEL,
        Init::FanIn,
    ));
    out
}

pub fn discriminator_layout(cfg: &DiscriminatorConfig) -> Vec<LayerSpec> {
    let mut out = Vec::new();
    for pi in 0..cfg.mpd_periods.len() {
        let mut c_in = 1;
        for (l, &c) in cfg.mpd_channels.iter().enumerate() {
            out.push(layer(
                format!("mpd.{pi}.convs.{l}"),
                [c, c_in, cfg.mpd_kernel],
                c,
                c_in * cfg.mpd_kernel,
                Init::FanIn,
            ));
            c_in = c;
        }
        out.push(layer(
            format!("mpd.{pi}.post"),
            [1, c_in, DISC_POST_KERNEL],
            1,
            c_in * DISC_POST_KERNEL,
            Init::FanIn,
        ));
    }
    for s in 0..cfg.msd_scales {
        let mut c_in = 1;
        for (l, m) in cfg.msd_layers.iter().enumerate() {
            let cin_g = c_in / m.groups;
            out.push(layer(
                format!("msd.{s}.convs.{l}"),
                [m.out_channels, cin_g, m.kernel],
                m.out_channels,
                cin_g * m.kernel,
                Init::FanIn,
            ));
            c_in = m.out_channels;
        }
        out.push(layer(
            format!("msd.{s}.post"),
            [1, c_in, DISC_POST_KERNEL],
            1,
            c_in * DISC_POST_KERNEL,
            Init::FanIn,
        ));
    }
    out
}

fn init_layout(layout: &[LayerSpec], rng: &mut ChaCha8Rng) -> ParamStore {
    let mut p = ParamStore::new();
    for l in layout {
        p.add_conv(rng, &l.name, l.weight_shape, l.bias_len, l.fan_in, l.init);
    }
    p
}

fn layout_count(layout: &[LayerSpec]) -> usize {
    layout
        .iter()
        .map(|l| l.weight_shape.iter().product::<usize>() + l.bias_len)
        .sum()
}

/// Scalar parameter count of a generator without materialising it.
pub fn generator_param_count(cfg: &GeneratorConfig) -> usize {
    layout_count(&generator_layout(cfg))
}

pub fn discriminator_param_count(cfg: &DiscriminatorConfig) -> usize {
    layout_count(&discriminator_layout(cfg))
}

/// Initialises generator and discriminator parameters from one seed.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut rng = seeded_rng(seed);
    let mut p = init_layout(&generator_layout(&cfg.generator), &mut rng);
    p.extend(init_layout(&discriminator_layout(&cfg.discriminator), &mut rng));
    p
}

/// Checks that `params` holds exactly the tensors `layout` describes.
fn check_layout(params: &ParamStore, layout: &[LayerSpec], prefix_filter: &[&str]) -> Result<()> {
    let mut expected = 0;
    for l in layout {
        for (suffix, shape) in [
            ("weight", l.weight_shape.to_vec()),
            ("bias", vec![l.bias_len]),
        ] {
            let name = format!("{}.{suffix}", l.name);
            match params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::ParamMismatch(format!(
                        "{name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::ParamMismatch(format!("missing {name}"))),
            }
            expected += 1;
        }
    }
    let present = params
        .names()
        .filter(|n| prefix_filter.iter().any(|p| n.starts_with(p)))
        .count();
    if present != expected {
        return Err(Error::ParamMismatch(format!(
            "{present} tensors present, {expected} expected"
        )));
    }
    Ok(())
}

pub fn check_generator_params(cfg: &GeneratorConfig, params: &ParamStore) -> Result<()> {
    check_layout(params, &generator_layout(cfg), &[GEN_PREFIX])
}

pub fn check_discriminator_params(cfg: &DiscriminatorConfig, params: &ParamStore) -> Result<()> {
    check_layout(params, &discriminator_layout(cfg), &DISC_PREFIXES)
}

fn conv(g: &mut Graph, p: &Bound, name: &str, x: Var, spec: ConvSpec) -> Var {
    g.conv1d(x, p.weight(name), Some(p.bias(name)), spec)
}

/// Generator forward: `[B, in_channels, F]` → `[B, 1, F * hop]`, `tanh`-bounded.
pub fn generator_forward(cfg: &GeneratorConfig, g: &mut Graph, p: &Bound, input: Var) -> Var {
    let slope = cfg.leaky_slope;
    let mut x = conv(g, p, "gen.conv_pre", input, ConvSpec::same(CONV_PRE_KERNEL, 1));
    let nk = cfg.mrf_kernel_sizes.len();
    for (i, (&u, &k)) in cfg
        .upsample_rates
        .iter()
        .zip(&cfg.upsample_kernel_sizes)
        .enumerate()
    {
        x = g.leaky_relu(x, slope);
        let name = format!("gen.ups.{i}");
        x = g.conv_transpose1d(
            x,
            p.weight(&name),
            Some(p.bias(&name)),
            ConvSpec {
                stride: u,
                padding: (k - u) / 2,
                ..ConvSpec::default()
            },
        );
        let mut sum: Option<Var> = None;
        for (j, (&mk, dils)) in cfg.mrf_kernel_sizes.iter().zip(&cfg.mrf_dilations).enumerate() {
            let r = resblock(g, p, &format!("gen.resblocks.{}", i * nk + j), x, mk, dils, slope);
            sum = Some(match sum {
                Some(s) => g.add(s, r),
                None => r,
            });
        }
        x = g.scale(sum.expect("at least one MRF kernel"), 1.0 / nk as f64);
    }
    x = g.leaky_relu(x, slope);
    x = conv(g, p, "gen.conv_post", x, ConvSpec::same(CONV_POST_KERNEL, 1));
    g.tanh(x)
}

fn resblock(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    mut x: Var,
    kernel: usize,
    dilations: &[usize],
    slope: f64,
) -> Var {
    for (d, &dil) in dilations.iter().enumerate() {
        let mut t = g.leaky_relu(x, slope);
        t = conv(g, p, &format!("{name}.convs1.{d}"), t, ConvSpec::same(kernel, dil));
        t = g.leaky_relu(t, slope);
        t = conv(g, p, &format!("{name}.convs2.{d}"), t, ConvSpec::same(kernel, 1));
        x = g.add(t, x);
    }
    x
}

/// Scores and intermediate feature maps of one sub-discriminator.
#[derive(Debug, Clone)]
pub struct DiscOutput {
    pub score: Var,
    pub features: Vec<Var>,
}

/// Period discriminator `index` over `x: [B, 1, T]`.
pub fn mpd_forward(cfg: &DiscriminatorConfig, g: &mut Graph, p: &Bound, x: Var, index: usize) -> DiscOutput {
    let period = cfg.mpd_periods[index];
    let mut h = g.fold_period(x, period, cfg.mpd_pad_mode);
    let mut features = Vec::with_capacity(cfg.mpd_feature_count());
    let last = cfg.mpd_channels.len() - 1;
    for l in 0..cfg.mpd_channels.len() {
        let spec = ConvSpec {
            stride: if l == last { 1 } else { cfg.mpd_stride },
            padding: (cfg.mpd_kernel - 1) / 2,
            ..ConvSpec::default()
        };
        h = conv(g, p, &format!("mpd.{index}.convs.{l}"), h, spec);
        h = g.leaky_relu(h, cfg.leaky_slope);
        features.push(h);
    }
    let score = conv(g, p, &format!("mpd.{index}.post"), h, ConvSpec::same(DISC_POST_KERNEL, 1));
    features.push(score);
    DiscOutput { score, features }
}

/// Scale discriminator `scale` over an input already pooled `scale` times.
pub fn msd_forward_pooled(
    cfg: &DiscriminatorConfig,
    g: &mut Graph,
    p: &Bound,
    pooled: Var,
    scale: usize,
) -> DiscOutput {
    let mut h = pooled;
    let mut features = Vec::with_capacity(cfg.msd_feature_count());
    for (l, m) in cfg.msd_layers.iter().enumerate() {
        let spec = ConvSpec {
            stride: m.stride,
            padding: (m.kernel - 1) / 2,
            dilation: 1,
            groups: m.groups,
        };
        h = conv(g, p, &format!("msd.{scale}.convs.{l}"), h, spec);
        h = g.leaky_relu(h, cfg.leaky_slope);
        features.push(h);
    }
    let score = conv(g, p, &format!("msd.{scale}.post"), h, ConvSpec::same(DISC_POST_KERNEL, 1));
    features.push(score);
    DiscOutput { score, features }
}

pub fn downsample(g: &mut Graph, x: Var) -> Var {
    g.avg_pool1d(x, POOL_KERNEL, POOL_STRIDE, POOL_PADDING)
}

pub fn msd_forward(cfg: &DiscriminatorConfig, g: &mut Graph, p: &Bound, x: Var, scale: usize) -> DiscOutput {
    let mut h = x;
    for _ in 0..scale {
        h = downsample(g, h);
    }
    msd_forward_pooled(cfg, g, p, h, scale)
}

/// All sub-discriminators: periods first, then scales.
pub fn discriminate_all(cfg: &DiscriminatorConfig, g: &mut Graph, p: &Bound, x: Var) -> Vec<DiscOutput> {
    let mut out: Vec<DiscOutput> = (0..cfg.mpd_periods.len())
        .map(|i| mpd_forward(cfg, g, p, x, i))
        .collect();
    let mut pooled = x;
    for s in 0..cfg.msd_scales {
        if s > 0 {
            pooled = downsample(g, pooled);
        }
        out.push(msd_forward_pooled(cfg, g, p, pooled, s));
    }
    out
}

/// Length after `scale` average-pool halvings.
pub fn pooled_len(len: usize, scale: usize) -> usize {
    (0..scale).fold(len, |t, _| (t + 2 * POOL_PADDING - POOL_KERNEL) / POOL_STRIDE + 1)
}

/// Shortest input a scale discriminator accepts: its strides must leave at
/// least one real sample in the last feature map.
pub fn msd_min_len(cfg: &DiscriminatorConfig, scale: usize) -> usize {
    let stride: usize = cfg.msd_layers.iter().map(|m| m.stride).product();
    (0..).find(|&t| pooled_len(t, scale) >= stride).unwrap_or(usize::MAX)
}

/// Batches silhouettes (equal frame counts) into `[B, 2, F]`, min then max.
pub fn silhouettes_to_tensor(tracks: &[&SilhouetteTrack]) -> Result<Tensor> {
    let first = tracks
        .first()
        .ok_or_else(|| Error::Input("no silhouettes".into()))?;
    let frames = first.len();
    let mut data = Vec::with_capacity(tracks.len() * 2 * frames);
    for t in tracks {
        if t.len() != frames {
            return Err(Error::Input("silhouettes in a batch must share a frame count".into()));
        }
        data.extend(t.channel_major());
    }
    Ok(Tensor::new(vec![tracks.len(), 2, frames], data))
}

pub fn waveforms_to_tensor(waves: &[&[f64]]) -> Result<Tensor> {
    let len = waves.first().map(|w| w.len()).unwrap_or(0);
    if len == 0 || waves.iter().any(|w| w.len() != len) {
        return Err(Error::Input("waveforms in a batch must be non-empty and equally long".into()));
    }
    Ok(Tensor::new(
        vec![waves.len(), 1, len],
        waves.iter().flat_map(|w| w.iter().copied()).collect(),
    ))
}

/// Result of a stand-alone discriminator pass.
#[derive(Debug, Clone)]
pub struct Discrimination {
    pub scores: Tensor,
    pub features: Vec<Tensor>,
}

/// A generator + discriminator parameter set with its architecture.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        check_generator_params(&config.generator, &params)?;
        check_discriminator_params(&config.discriminator, &params)?;
        if !params.all_finite() {
            return Err(Error::ParamMismatch("parameters contain non-finite values".into()));
        }
        Ok(Self { config, params })
    }

    /// Generator-only model, for inference checkpoints.
    pub fn generator_only(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        check_generator_params(&config.generator, &params)?;
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        Self::new(config, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    /// Synthesises `frames × 256` samples from a silhouette.
    pub fn generate(&self, y: &SilhouetteTrack) -> Result<Waveform> {
        let hop = self.config.generator.hop_len();
        if self.config.generator.in_channels != 2 {
            return Err(Error::Input(format!(
                "generator expects {} input channels; silhouettes provide 2",
                self.config.generator.in_channels
            )));
        }
        let input = silhouettes_to_tensor(&[y])?;
        let mut g = Graph::new();
        let p = self.params.subset(GEN_PREFIX).bind(&mut g, false);
        let x = g.constant(input);
        let out = generator_forward(&self.config.generator, &mut g, &p, x);
        let samples = g.value(out).data().to_vec();
        debug_assert_eq!(samples.len(), y.len() * hop);
        Ok(Waveform::new(samples, y.sample_rate_hz())?)
    }

    pub fn discriminate_mpd(&self, x: &Waveform, period: usize) -> Result<Discrimination> {
        let cfg = &self.config.discriminator;
        let index = cfg
            .mpd_periods
            .iter()
            .position(|&p| p == period)
            .ok_or_else(|| Error::Input(format!("period {period} is not configured")))?;
        if x.len() < period {
            return Err(Error::Input(format!(
                "waveform of {} samples is shorter than period {period}",
                x.len()
            )));
        }
        self.discriminate(x, |g, p, v| mpd_forward(cfg, g, p, v, index))
    }

    pub fn discriminate_msd(&self, x: &Waveform, scale: usize) -> Result<Discrimination> {
        let cfg = &self.config.discriminator;
        if scale >= cfg.msd_scales {
            return Err(Error::Input(format!(
                "scale {scale} is not configured ({} scales)",
                cfg.msd_scales
            )));
        }
        let min = msd_min_len(cfg, scale);
        if x.len() < min {
            return Err(Error::Input(format!(
                "waveform of {} samples is too short for scale {scale} (needs {min})",
                x.len()
            )));
        }
        self.discriminate(x, |g, p, v| msd_forward(cfg, g, p, v, scale))
    }

    fn discriminate(
        &self,
        x: &Waveform,
        f: impl FnOnce(&mut Graph, &Bound, Var) -> DiscOutput,
    ) -> Result<Discrimination> {
        let mut g = Graph::new();
        let mut p = self.params.subset("mpd.");
        p.extend(self.params.subset("msd."));
        let bound = p.bind(&mut g, false);
        let v = g.constant(waveforms_to_tensor(&[x.samples()])?);
        let out = f(&mut g, &bound, v);
        Ok(Discrimination {
            scores: g.value(out.score).clone(),
            features: out.features.iter().map(|&f| g.value(f).clone()).collect(),
        })
    }
}
