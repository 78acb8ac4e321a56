use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read audio {path}: {source}")]
    AudioRead {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("cannot write audio {path}: {source}")]
    AudioWrite {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("amplitude factor must lie in (0, 1], got {0}")]
    InvalidScale(f64),
    #[error("waveform of {len} samples is shorter than one window of {window}")]
    TooShort { len: usize, window: usize },
    #[error("invalid framing: {0}")]
    InvalidFraming(String),
    #[error("frame {frame}: min {min} exceeds max {max}")]
    FrameOrder { frame: usize, min: f64, max: f64 },
    #[error("frame {frame}: value {value} outside [-1, 1]")]
    OutOfRange { frame: usize, value: f64 },
    #[error("silhouette is already quantized ({0})")]
    AlreadyQuantized(String),
    #[error("silhouette is quantized ({0}); comparison requires unquantized tracks")]
    QuantizedInput(String),
    #[error("invalid quantization scheme: {0}")]
    InvalidScheme(String),
    #[error("silhouettes differ in geometry: {0}")]
    GeometryMismatch(String),
    #[error("frame counts {a} and {b} differ by more than {slack}")]
    FrameCountMismatch { a: usize, b: usize, slack: usize },
    #[error("malformed silhouette document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
