//! Signal-side building blocks for silhouette-conditioned waveform synthesis:
//! mono audio I/O, min/max waveform silhouettes with linear and μ-law
//! quantization, and log-mel spectrograms.

pub mod audio;
pub mod error;
pub mod features;
pub mod silhouette;

pub use audio::{load_wav, save_wav, scale_amplitude, Waveform};
pub use error::{Error, Result};
pub use features::{mel_spectrogram, serialize_mel, MelAnalyzer, MelConfig, MelSpectrogram};
pub use silhouette::{
    extract_silhouette, frame_count, parse_silhouette, quantize, serialize_silhouette,
    silhouette_mse, Frame, QuantizationKind, QuantizationScheme, SilhouetteDocument,
    SilhouetteTrack, DEFAULT_HOP, DEFAULT_WINDOW,
};
