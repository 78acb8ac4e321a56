use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::PadMode;

/// Samples generated per silhouette frame.
pub const FRAME_HOP: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub initial_channels: usize,
    pub upsample_rates: Vec<usize>,
    pub upsample_kernel_sizes: Vec<usize>,
    pub mrf_kernel_sizes: Vec<usize>,
    pub mrf_dilations: Vec<Vec<usize>>,
    pub leaky_slope: f64,
}

impl GeneratorConfig {
    pub fn hop_len(&self) -> usize {
        self.upsample_rates.iter().product()
    }

    /// Channel width after upsampling stage `i` (0-based).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.initial_channels >> (i + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.initial_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.upsample_rates.is_empty()
            || self.upsample_rates.len() != self.upsample_kernel_sizes.len()
        {
            return bad("upsample rates and kernel sizes must be non-empty and equally long".into());
        }
        if self.hop_len() != FRAME_HOP {
            return bad(format!(
                "upsample rates multiply to {}, expected {FRAME_HOP}",
                self.hop_len()
            ));
        }
        for (&u, &k) in self.upsample_rates.iter().zip(&self.upsample_kernel_sizes) {
            if u == 0 || k < u || (k - u) % 2 != 0 {
                return bad(format!(
                    "upsample kernel {k} must be >= rate {u} with even difference"
                ));
            }
        }
        if self.initial_channels >> self.upsample_rates.len() == 0 {
            return bad("too many upsampling stages for the initial channel count".into());
        }
        if self.mrf_kernel_sizes.is_empty()
            || self.mrf_kernel_sizes.len() != self.mrf_dilations.len()
        {
            return bad("each MRF kernel needs one dilation group".into());
        }
        if self.mrf_kernel_sizes.iter().any(|k| k % 2 == 0) {
            return bad("MRF kernel sizes must be odd".into());
        }
        if self
            .mrf_dilations
            .iter()
            .any(|d| d.is_empty() || d.contains(&0))
        {
            return bad("dilation groups must be non-empty and positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsdLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub mpd_periods: Vec<usize>,
    /// Widths of the period-lattice convolutions; all but the last use
    /// `mpd_stride`, the last uses stride 1.
    pub mpd_channels: Vec<usize>,
    pub mpd_kernel: usize,
    pub mpd_stride: usize,
    pub mpd_pad_mode: PadMode,
    pub msd_scales: usize,
    pub msd_layers: Vec<MsdLayer>,
    pub leaky_slope: f64,
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        let mut periods = self.mpd_periods.clone();
        periods.sort_unstable();
        periods.dedup();
        if periods.len() != self.mpd_periods.len() || periods.contains(&0) {
            return bad("MPD periods must be distinct and positive");
        }
        if self.mpd_channels.is_empty() || self.mpd_channels.contains(&0) {
            return bad("MPD channel list must be non-empty and positive");
        }
        if self.mpd_kernel % 2 == 0 || self.mpd_stride == 0 {
            return bad("MPD kernel must be odd and stride positive");
        }
        if self.mpd_periods.is_empty() && self.msd_scales == 0 {
            return bad("at least one discriminator is required");
        }
        if self.msd_scales > 0 && self.msd_layers.is_empty() {
            return bad("MSD needs at least one layer");
        }
        let mut c_in = 1;
        for l in &self.msd_layers {
            if l.kernel % 2 == 0 || l.stride == 0 || l.groups == 0 {
                return bad("MSD kernels must be odd with positive stride and groups");
            }
            if c_in % l.groups != 0 || l.out_channels % l.groups != 0 {
                return bad("MSD group count must divide input and output channels");
            }
            c_in = l.out_channels;
        }
        Ok(())
    }

    /// Number of sub-discriminators: one per period plus one per scale.
    pub fn count(&self) -> usize {
        self.mpd_periods.len() + self.msd_scales
    }

    /// Feature maps returned by each period discriminator (convs + output layer).
    pub fn mpd_feature_count(&self) -> usize {
        self.mpd_channels.len() + 1
    }

    pub fn msd_feature_count(&self) -> usize {
        self.msd_layers.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

const V1_PROFILE: &str = include_str!("../profiles/v1.toml");
const TINY_PROFILE: &str = include_str!("../profiles/tiny.toml");

/// Named architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    V1,
    Tiny,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" | "V1" => Ok(Self::V1),
            "tiny" => Ok(Self::Tiny),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

impl ModelConfig {
    pub fn profile(p: Profile) -> Self {
        let text = match p {
            Profile::V1 => V1_PROFILE,
            Profile::Tiny => TINY_PROFILE,
        };
        Self::from_toml(text).expect("bundled profiles are valid")
    }

    pub fn v1() -> Self {
        Self::profile(Profile::V1)
    }

    pub fn tiny() -> Self {
        Self::profile(Profile::Tiny)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()
    }

    /// Short digest of the architecture, used to check checkpoint compatibility.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("configs serialize");
        let digest = Sha256::digest(&canonical);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
