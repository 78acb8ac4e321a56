//! Mono waveform type and PCM WAV input/output.
//!
//! Input accepts 16, 24 and 32-bit integer PCM with any channel count; channels
//! are averaged to mono and integer samples are divided by the format's full-scale
//! value (`2^(bits-1)`). Output is always 16-bit mono.

use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Sample rate the toolkit's defaults are tuned for.
pub const DEFAULT_SAMPLE_RATE: u32 = 24_000;

/// A mono sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    /// Builds a waveform from raw samples. Values may exceed `[-1, 1]`
    /// (they are clipped on save) but must be finite.
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidWaveform(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Copies `len` samples starting at `offset`, zero-filling past the end.
    pub fn segment(&self, offset: usize, len: usize) -> Result<Waveform> {
        let mut out = vec![0.0; len];
        let end = self.samples.len().min(offset.saturating_add(len));
        if offset < end {
            out[..end - offset].copy_from_slice(&self.samples[offset..end]);
        }
        Waveform::new(out, self.sample_rate_hz)
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    /// Reports a sample-rate mismatch. No resampling is performed.
    pub fn check_rate(&self, expected_hz: u32) -> Result<()> {
        if self.sample_rate_hz != expected_hz {
            return Err(Error::InvalidWaveform(format!(
                "sample rate {} Hz does not match expected {} Hz (resampling is not supported)",
                self.sample_rate_hz, expected_hz
            )));
        }
        Ok(())
    }
}

/// Multiplies every sample by `lambda`, which must lie in `(0, 1]`.
pub fn scale_amplitude(w: &Waveform, lambda: f64) -> Result<Waveform> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidScale(lambda));
    }
    Ok(Waveform {
        samples: w.samples.iter().map(|s| s * lambda).collect(),
        sample_rate_hz: w.sample_rate_hz,
    })
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|source| Error::AudioRead {
        path: path.to_path_buf(),
        source,
    })?;
    read_pcm(reader).map_err(|e| match e {
        Error::AudioRead { source, .. } => Error::AudioRead {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Decodes an in-memory WAV file.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let reader = WavReader::new(Cursor::new(bytes)).map_err(|source| Error::AudioRead {
        path: "<memory>".into(),
        source,
    })?;
    read_pcm(reader)
}

fn read_pcm<R: Read>(mut reader: WavReader<R>) -> Result<Waveform> {
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int {
        return Err(Error::UnsupportedEncoding(
            "floating-point WAV; integer PCM expected".into(),
        ));
    }
    if !matches!(spec.bits_per_sample, 16 | 24 | 32) {
        return Err(Error::UnsupportedEncoding(format!(
            "{}-bit PCM; 16, 24 or 32-bit expected",
            spec.bits_per_sample
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let full_scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
    let raw: Vec<i32> = reader
        .samples::<i32>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|source| Error::AudioRead {
            path: "<memory>".into(),
            source,
        })?;
    let frames = raw.len() / channels;
    if frames == 0 {
        return Err(Error::EmptyAudio);
    }
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&s| s as f64 / full_scale).sum();
            (sum / channels as f64).clamp(-1.0, 1.0)
        })
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path)?;
    write_pcm16(w, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::AudioWrite { source, .. } => Error::AudioWrite {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Encodes as a 16-bit mono WAV file in memory.
pub fn encode_wav(w: &Waveform) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    write_pcm16(w, &mut cursor)?;
    Ok(cursor.into_inner())
}

/// Maps a sample to 16-bit PCM: clip to [-1, 1], scale by 32768, round, saturate.
pub fn to_pcm16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn write_pcm16<W: Write + Seek>(w: &Waveform, sink: W) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wrap = |source| Error::AudioWrite {
        path: "<memory>".into(),
        source,
    };
    let mut writer = WavWriter::new(sink, spec).map_err(wrap)?;
    for &s in &w.samples {
        writer.write_sample(to_pcm16(s)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}
