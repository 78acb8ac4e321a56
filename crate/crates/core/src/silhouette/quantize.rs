use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Frame, SilhouetteTrack};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizationKind {
    Linear,
    MuLaw,
}

/// Codec descriptor: uniform bins over `[-1, 1]`, either directly (linear) or
/// after μ-law compression with `μ = num_bins - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantizationScheme {
    pub kind: QuantizationKind,
    pub num_bins: u32,
}

impl QuantizationScheme {
    pub fn linear(num_bins: u32) -> Self {
        Self {
            kind: QuantizationKind::Linear,
            num_bins,
        }
    }

    pub fn mu_law(num_bins: u32) -> Self {
        Self {
            kind: QuantizationKind::MuLaw,
            num_bins,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bins < 2 {
            return Err(Error::InvalidScheme(format!(
                "{} bins; at least 2 required",
                self.num_bins
            )));
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        (self.num_bins - 1) as f64
    }

    /// Maps a value into the domain where bins are uniform.
    pub fn compress(&self, x: f64) -> f64 {
        match self.kind {
            QuantizationKind::Linear => x,
            QuantizationKind::MuLaw => mu_law_compress(x, self.mu()),
        }
    }

    pub fn expand(&self, y: f64) -> f64 {
        match self.kind {
            QuantizationKind::Linear => y,
            QuantizationKind::MuLaw => mu_law_expand(y, self.mu()),
        }
    }

    /// Index of the bin holding `x`; `x = 1.0` falls in the last bin.
    pub fn bin_index(&self, x: f64) -> u32 {
        let n = self.num_bins as f64;
        let idx = ((self.compress(x) + 1.0) / 2.0 * n).floor();
        idx.clamp(0.0, n - 1.0) as u32
    }

    /// Bin center in the compressed domain.
    pub fn compressed_center(&self, index: u32) -> f64 {
        (index as f64 + 0.5) * 2.0 / self.num_bins as f64 - 1.0
    }

    /// Bin center mapped back to the signal domain.
    pub fn center(&self, index: u32) -> f64 {
        self.expand(self.compressed_center(index))
    }

    /// Replaces `x` by the center of its bin.
    pub fn quantize_value(&self, x: f64) -> f64 {
        self.center(self.bin_index(x))
    }

    /// Signal-domain edges `[lo, hi)` of a bin.
    pub fn bin_edges(&self, index: u32) -> (f64, f64) {
        let w = 2.0 / self.num_bins as f64;
        let lo = index as f64 * w - 1.0;
        (self.expand(lo), self.expand(lo + w))
    }

    /// Short name in the style `LN256` / `MU016`.
    pub fn short_name(&self) -> String {
        let prefix = match self.kind {
            QuantizationKind::Linear => "LN",
            QuantizationKind::MuLaw => "MU",
        };
        format!("{prefix}{:03}", self.num_bins)
    }
}

impl fmt::Display for QuantizationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            QuantizationKind::Linear => "linear",
            QuantizationKind::MuLaw => "mu-law",
        };
        write!(f, "{kind}/{}", self.num_bins)
    }
}

impl FromStr for QuantizationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "ln" => Ok(Self::Linear),
            "mu" | "mu_law" | "mu-law" | "mulaw" => Ok(Self::MuLaw),
            other => Err(Error::InvalidScheme(format!("unknown kind {other:?}"))),
        }
    }
}

impl FromStr for QuantizationScheme {
    type Err = Error;

    /// Accepts `LN256`, `MU016` or `<kind>/<bins>`.
    fn from_str(s: &str) -> Result<Self> {
        let scheme = if let Some((kind, bins)) = s.split_once('/') {
            Self {
                kind: kind.parse()?,
                num_bins: bins
                    .parse()
                    .map_err(|_| Error::InvalidScheme(format!("bad bin count in {s:?}")))?,
            }
        } else if s.len() > 2 {
            let (prefix, bins) = s.split_at(2);
            Self {
                kind: prefix.parse()?,
                num_bins: bins
                    .parse()
                    .map_err(|_| Error::InvalidScheme(format!("bad bin count in {s:?}")))?,
            }
        } else {
            return Err(Error::InvalidScheme(format!("unrecognised scheme {s:?}")));
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

/// `sign(x) * ln(1 + μ|x|) / ln(1 + μ)`.
pub fn mu_law_compress(x: f64, mu: f64) -> f64 {
    x.signum() * (mu * x.abs()).ln_1p() / mu.ln_1p()
}

/// Inverse of [`mu_law_compress`].
pub fn mu_law_expand(y: f64, mu: f64) -> f64 {
    y.signum() * ((y.abs() * mu.ln_1p()).exp_m1()) / mu
}

impl SilhouetteTrack {
    /// Quantizes min and max independently with the same codec; values become
    /// bin centers and the track is tagged with `scheme`.
    pub fn quantize(&self, scheme: QuantizationScheme) -> Result<SilhouetteTrack> {
        scheme.validate()?;
        if let Some(q) = self.quantization {
            return Err(Error::AlreadyQuantized(q.to_string()));
        }
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                for v in [f.min, f.max] {
                    if !(-1.0..=1.0).contains(&v) {
                        return Err(Error::OutOfRange { frame: i, value: v });
                    }
                }
                Ok(Frame::new(
                    scheme.quantize_value(f.min),
                    scheme.quantize_value(f.max),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        SilhouetteTrack::new(
            frames,
            self.window_len,
            self.hop_len,
            self.sample_rate_hz,
            Some(scheme),
        )
    }
}

pub fn quantize(track: &SilhouetteTrack, scheme: QuantizationScheme) -> Result<SilhouetteTrack> {
    track.quantize(scheme)
}
