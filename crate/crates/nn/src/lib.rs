//! Reverse-mode autodiff over `f64` tensors and the silhouette-conditioned
//! generator / discriminator networks built on it.

pub mod checkpoint;
pub mod config;
pub mod conv;
mod error;
pub mod graph;
pub mod model;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointInfo, CheckpointKind, REPLAY_FINGERPRINT};
pub use config::{DiscriminatorConfig, GeneratorConfig, ModelConfig, MsdLayer, Profile, FRAME_HOP};
pub use error::{Error, Result};
pub use graph::{Graph, Gradients, PadMode, Var};
pub use model::{Discrimination, Model};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamStore, seeded_rng};
pub use synth::{synthesizer_from_checkpoint, ReplaySynth, Synthesizer};
pub use tensor::Tensor;
