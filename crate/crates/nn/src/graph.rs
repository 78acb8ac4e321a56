//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as it is evaluated. Nodes created from
//! leaves that do not require gradients are never visited by [`Graph::backward`].

use std::sync::Arc;

use silhouette_core::features::{MelAnalyzer, MelTrace};

use crate::conv::{self, ConvSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How a sequence is extended to a multiple of the folding period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Zero,
    Reflect,
}

enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Tanh {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    AvgPool {
        x: Var,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    FoldPeriod {
        x: Var,
        period: usize,
        mode: PadMode,
    },
    MeanSquaredFrom {
        x: Var,
        target: f64,
    },
    MeanAbsDiff {
        a: Var,
        b: Var,
    },
    LogMel {
        x: Var,
        analyzer: Arc<MelAnalyzer>,
        traces: Vec<MelTrace>,
    },
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by the variables of the graph they came from.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Var {
        let out = conv::conv1d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Conv1d { x, w, b, spec }, &inputs)
    }

    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Var {
        let out = conv::conv_transpose1d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::ConvTranspose1d { x, w, b, spec }, &inputs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { v * slope });
        self.push(out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x, factor }, &[x])
    }

    /// Average pooling over time with zero padding counted in the divisor.
    pub fn avg_pool1d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Var {
        let xv = self.value(x);
        let (b, c, t) = (xv.dim(0), xv.dim(1), xv.dim(2));
        assert!(t + 2 * padding >= kernel, "input too short for pooling");
        let t_out = (t + 2 * padding - kernel) / stride + 1;
        let mut out = Tensor::zeros(&[b, c, t_out]);
        let inv = 1.0 / kernel as f64;
        for row in 0..b * c {
            let src = &xv.data()[row * t..(row + 1) * t];
            let dst = &mut out.data_mut()[row * t_out..(row + 1) * t_out];
            for (o, slot) in dst.iter_mut().enumerate() {
                let start = (o * stride) as isize - padding as isize;
                let lo = start.max(0) as usize;
                let hi = ((start + kernel as isize).max(0) as usize).min(t);
                if lo < hi {
                    *slot = src[lo..hi].iter().sum::<f64>() * inv;
                }
            }
        }
        self.push(
            out,
            Op::AvgPool {
                x,
                kernel,
                stride,
                padding,
            },
            &[x],
        )
    }

    /// `[B, C, T]` → `[B * period, C, ceil(T / period)]`, padding the tail to a
    /// multiple of `period`. Row `b * period + j` holds samples `j, j + period, ...`.
    pub fn fold_period(&mut self, x: Var, period: usize, mode: PadMode) -> Var {
        let xv = self.value(x);
        let (b, c, t) = (xv.dim(0), xv.dim(1), xv.dim(2));
        assert!(period >= 1 && t >= 1);
        let rows = t.div_ceil(period);
        let padded_len = rows * period;
        assert!(
            mode == PadMode::Zero || padded_len - t < t,
            "reflection padding needs more samples than padding"
        );
        let mut out = Tensor::zeros(&[b * period, c, rows]);
        for bi in 0..b {
            for ci in 0..c {
                let src = &xv.data()[(bi * c + ci) * t..][..t];
                for pos in 0..padded_len {
                    let v = if pos < t {
                        src[pos]
                    } else {
                        match mode {
                            PadMode::Zero => 0.0,
                            PadMode::Reflect => src[2 * t - 2 - pos],
                        }
                    };
                    let (i, j) = (pos / period, pos % period);
                    out.data_mut()[((bi * period + j) * c + ci) * rows + i] = v;
                }
            }
        }
        self.push(out, Op::FoldPeriod { x, period, mode }, &[x])
    }

    /// Scalar `mean((x - target)^2)`.
    pub fn mean_squared_from(&mut self, x: Var, target: f64) -> Var {
        let xv = self.value(x);
        let m = xv.data().iter().map(|v| (v - target).powi(2)).sum::<f64>() / xv.len() as f64;
        self.push(Tensor::scalar(m), Op::MeanSquaredFrom { x, target }, &[x])
    }

    /// Scalar `mean(|a - b|)`.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mean_abs_diff shape mismatch");
        let m = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / av.len() as f64;
        self.push(Tensor::scalar(m), Op::MeanAbsDiff { a, b }, &[a, b])
    }

    /// `[B, 1, T]` waveforms → `[B, frames, mel_bins]` log-mel features.
    pub fn log_mel(&mut self, x: Var, analyzer: Arc<MelAnalyzer>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.dim(1), 1, "log_mel expects mono input");
        let (b, t) = (xv.dim(0), xv.dim(2));
        let mut values = Vec::new();
        let mut traces = Vec::with_capacity(b);
        let mut frames = 0;
        for bi in 0..b {
            let (m, trace) = analyzer
                .analyze_traced(&xv.data()[bi * t..(bi + 1) * t])
                .expect("waveform shorter than the mel window");
            frames = m.n_frames();
            values.extend_from_slice(m.values());
            traces.push(trace);
        }
        let mel_bins = analyzer.config().mel_bins;
        let out = Tensor::new(vec![b, frames, mel_bins], values);
        self.push(
            out,
            Op::LogMel {
                x,
                analyzer,
                traces,
            },
            &[x],
        )
    }

    /// Scalar `Σ weight · term` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let s = terms.iter().map(|&(v, w)| w * self.value(v).item()).sum();
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            &inputs,
        )
    }

    /// Fingerprint of the branch taken at every non-smooth point: leaky-ReLU
    /// input signs, `a - b` signs under an absolute difference and log-mel
    /// values sitting on the floor. Two evaluations with equal patterns lie on
    /// the same smooth piece of the function.
    pub fn branch_pattern(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { x, .. } => {
                    for v in self.value(*x).data() {
                        (*v >= 0.0).hash(&mut h);
                    }
                }
                Op::MeanAbsDiff { a, b } => {
                    for (x, y) in self.value(*a).data().iter().zip(self.value(*b).data()) {
                        (x >= y).hash(&mut h);
                    }
                }
                Op::LogMel { analyzer, .. } => {
                    let floor = analyzer.config().log_floor.ln();
                    for v in node.value.data() {
                        (*v <= floor).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Propagates d(loss)/d(node) back to every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let needs = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(gout);
                    continue;
                }
                Op::Conv1d { x, w, b, spec } => {
                    let (gx, gw) = conv::conv1d_backward(
                        self.value(*x),
                        self.value(*w),
                        &gout,
                        spec,
                        needs(x),
                        needs(w),
                    );
                    if let Some(b) = b.filter(|b| needs(b)) {
                        accumulate(&mut grads[b.0], conv::bias_grad(&gout));
                    }
                    if let Some(g) = gx {
                        accumulate(&mut grads[x.0], g);
                    }
                    if let Some(g) = gw {
                        accumulate(&mut grads[w.0], g);
                    }
                }
                Op::ConvTranspose1d { x, w, b, spec } => {
                    let (gx, gw) = conv::conv_transpose1d_backward(
                        self.value(*x),
                        self.value(*w),
                        &gout,
                        spec,
                        needs(x),
                        needs(w),
                    );
                    if let Some(b) = b.filter(|b| needs(b)) {
                        accumulate(&mut grads[b.0], conv::bias_grad(&gout));
                    }
                    if let Some(g) = gx {
                        accumulate(&mut grads[x.0], g);
                    }
                    if let Some(g) = gw {
                        accumulate(&mut grads[w.0], g);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(*x);
                    let data = xv
                        .data()
                        .iter()
                        .zip(gout.data())
                        .map(|(&v, &g)| if v > 0.0 { g } else { g * slope })
                        .collect();
                    accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), data));
                }
                Op::Tanh { x } => {
                    let data = node
                        .value
                        .data()
                        .iter()
                        .zip(gout.data())
                        .map(|(&y, &g)| g * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads[x.0], Tensor::new(node.value.shape().to_vec(), data));
                }
                Op::Add { a, b } => {
                    if needs(a) {
                        accumulate(&mut grads[a.0], gout.clone());
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], gout);
                    }
                }
                Op::Scale { x, factor } => {
                    accumulate(&mut grads[x.0], gout.map(|g| g * factor));
                }
                Op::AvgPool {
                    x,
                    kernel,
                    stride,
                    padding,
                } => {
                    let xv = self.value(*x);
                    let (b, c, t) = (xv.dim(0), xv.dim(1), xv.dim(2));
                    let t_out = gout.dim(2);
                    let inv = 1.0 / *kernel as f64;
                    let mut gx = Tensor::zeros(xv.shape());
                    for row in 0..b * c {
                        let go = &gout.data()[row * t_out..(row + 1) * t_out];
                        let dst = &mut gx.data_mut()[row * t..(row + 1) * t];
                        for (o, &g) in go.iter().enumerate() {
                            let start = (o * stride) as isize - *padding as isize;
                            let lo = start.max(0) as usize;
                            let hi = ((start + *kernel as isize).max(0) as usize).min(t);
                            for d in dst.iter_mut().take(hi).skip(lo) {
                                *d += g * inv;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::FoldPeriod { x, period, mode } => {
                    let xv = self.value(*x);
                    let (b, c, t) = (xv.dim(0), xv.dim(1), xv.dim(2));
                    let rows = gout.dim(2);
                    let mut gx = Tensor::zeros(xv.shape());
                    for bi in 0..b {
                        for ci in 0..c {
                            let dst = &mut gx.data_mut()[(bi * c + ci) * t..][..t];
                            for pos in 0..rows * period {
                                let (i, j) = (pos / period, pos % period);
                                let g = gout.data()[((bi * period + j) * c + ci) * rows + i];
                                if pos < t {
                                    dst[pos] += g;
                                } else if *mode == PadMode::Reflect {
                                    dst[2 * t - 2 - pos] += g;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::MeanSquaredFrom { x, target } => {
                    let xv = self.value(*x);
                    let k = 2.0 * gout.item() / xv.len() as f64;
                    accumulate(&mut grads[x.0], xv.map(|v| k * (v - target)));
                }
                Op::MeanAbsDiff { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let k = gout.item() / av.len() as f64;
                    let sign: Vec<f64> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(x, y)| {
                            let d = x - y;
                            if d > 0.0 {
                                k
                            } else if d < 0.0 {
                                -k
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let shape = av.shape().to_vec();
                    if needs(b) {
                        accumulate(
                            &mut grads[b.0],
                            Tensor::new(shape.clone(), sign.iter().map(|s| -s).collect()),
                        );
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], Tensor::new(shape, sign));
                    }
                }
                Op::LogMel {
                    x,
                    analyzer,
                    traces,
                } => {
                    let xv = self.value(*x);
                    let per_item = gout.len() / traces.len();
                    let mut data = Vec::with_capacity(xv.len());
                    for (bi, trace) in traces.iter().enumerate() {
                        let g = &gout.data()[bi * per_item..(bi + 1) * per_item];
                        data.extend(analyzer.backward(trace, g));
                    }
                    accumulate(&mut grads[x.0], Tensor::new(xv.shape().to_vec(), data));
                }
                Op::WeightedSum { terms } => {
                    let g = gout.item();
                    for &(v, w) in terms {
                        if needs(&v) {
                            accumulate(&mut grads[v.0], Tensor::scalar(g * w));
                        }
                    }
                }
            }
        }
        Gradients { grads }
    }
}
