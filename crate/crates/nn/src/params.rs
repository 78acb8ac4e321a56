use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::graph::{Graph, Gradients, Var};
use crate::tensor::Tensor;

/// How a convolution weight is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with the given standard deviation; bias zero.
    Normal(f64),
    /// Uniform in `±1/sqrt(fan_in)` for weight and bias.
    FanIn,
}

/// Named parameter tensors in a deterministic (sorted) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Merges `other` in, replacing tensors with the same name.
    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    /// SHA-256 over names, shapes and raw values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Places every tensor on `graph` as a leaf.
    pub fn bind(&self, graph: &mut Graph, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), graph.leaf(t.clone(), requires_grad)))
                .collect(),
        }
    }

    /// Adds a convolution weight `[shape]` and bias `[bias_len]` under `name`.
    pub fn add_conv(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: &str,
        shape: [usize; 3],
        bias_len: usize,
        fan_in: usize,
        init: Init,
    ) {
        let n: usize = shape.iter().product();
        let (w, b) = match init {
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                let w: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
                (w, vec![0.0; bias_len])
            }
            Init::FanIn => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                let b: Vec<f64> = (0..bias_len).map(|_| rng.random_range(-bound..bound)).collect();
                (w, b)
            }
        };
        self.insert(format!("{name}.weight"), Tensor::new(shape.to_vec(), w));
        self.insert(format!("{name}.bias"), Tensor::new(vec![bias_len], b));
    }
}

/// Graph variables for a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn weight(&self, layer: &str) -> Var {
        self.var(&format!("{layer}.weight"))
    }

    pub fn bias(&self, layer: &str) -> Var {
        self.var(&format!("{layer}.bias"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Collects the gradient of each bound parameter (zeros where none flowed).
    pub fn gradients(&self, graph: &Graph, grads: &mut Gradients) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, &v) in &self.vars {
            let g = grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()));
            out.insert(name.clone(), g);
        }
        out
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
