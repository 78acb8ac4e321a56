//! Waveform silhouettes: per-frame (min, max) pairs pooled over overlapping
//! windows, optionally quantized into a small set of levels.

mod format;
mod quantize;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub use format::{parse_silhouette, serialize_silhouette, SilhouetteDocument, FORMAT_VERSION};
pub use quantize::{mu_law_compress, mu_law_expand, quantize, QuantizationKind, QuantizationScheme};

pub const DEFAULT_WINDOW: usize = 1024;
pub const DEFAULT_HOP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub min: f64,
    pub max: f64,
}

impl Frame {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }
}

/// Frames with the framing geometry that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteTrack {
    frames: Vec<Frame>,
    window_len: usize,
    hop_len: usize,
    sample_rate_hz: u32,
    quantization: Option<QuantizationScheme>,
}

impl SilhouetteTrack {
    /// Validates every invariant: non-empty, positive geometry, `min <= max`,
    /// values within `[-1, 1]`.
    pub fn new(
        frames: Vec<Frame>,
        window_len: usize,
        hop_len: usize,
        sample_rate_hz: u32,
        quantization: Option<QuantizationScheme>,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidFraming("silhouette has no frames".into()));
        }
        if window_len == 0 || hop_len == 0 || sample_rate_hz == 0 {
            return Err(Error::InvalidFraming(format!(
                "window {window_len}, hop {hop_len} and rate {sample_rate_hz} must be positive"
            )));
        }
        if let Some(q) = &quantization {
            q.validate()?;
        }
        for (i, f) in frames.iter().enumerate() {
            for v in [f.min, f.max] {
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::OutOfRange { frame: i, value: v });
                }
            }
            if f.min > f.max {
                return Err(Error::FrameOrder {
                    frame: i,
                    min: f.min,
                    max: f.max,
                });
            }
        }
        Ok(Self {
            frames,
            window_len,
            hop_len,
            sample_rate_hz,
            quantization,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop_len(&self) -> usize {
        self.hop_len
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn quantization(&self) -> Option<QuantizationScheme> {
        self.quantization
    }

    /// Same frames with the quantization tag cleared.
    pub fn without_tag(&self) -> Self {
        Self {
            quantization: None,
            ..self.clone()
        }
    }

    /// Keeps the first `n` frames.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(
            self.frames[..n.min(self.frames.len())].to_vec(),
            self.window_len,
            self.hop_len,
            self.sample_rate_hz,
            self.quantization,
        )
    }

    /// Interleaved `[min0, max0, min1, max1, ...]`.
    pub fn interleaved(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| [f.min, f.max]).collect()
    }

    /// Channel-major `[min0, min1, ..., max0, max1, ...]`, the layout a
    /// two-channel network input expects.
    pub fn channel_major(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.frames.iter().map(|f| f.min).collect();
        out.extend(self.frames.iter().map(|f| f.max));
        out
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.window_len == other.window_len
            && self.hop_len == other.hop_len
            && self.sample_rate_hz == other.sample_rate_hz
    }
}

/// Frames produced from `num_samples` samples without padding.
pub fn frame_count(num_samples: usize, window_len: usize, hop_len: usize) -> usize {
    if num_samples < window_len || hop_len == 0 {
        0
    } else {
        (num_samples - window_len) / hop_len + 1
    }
}

/// Largest frame-count difference tolerated when comparing tracks.
///
/// A waveform of `F * hop` samples yields `F - ceil(window / hop) + 1` frames,
/// so comparing a generated waveform's silhouette with its conditioning input
/// always loses that many frames at the tail.
pub fn max_frame_slack(window_len: usize, hop_len: usize) -> usize {
    2.max(window_len.div_ceil(hop_len.max(1)).saturating_sub(1))
}

/// Min/max pooling over windows starting at multiples of `hop_len`. Samples
/// past the last full window are dropped.
pub fn extract_silhouette(w: &Waveform, window_len: usize, hop_len: usize) -> Result<SilhouetteTrack> {
    if window_len == 0 || hop_len == 0 {
        return Err(Error::InvalidFraming(format!(
            "window {window_len} and hop {hop_len} must be positive"
        )));
    }
    let x = w.samples();
    let n_frames = frame_count(x.len(), window_len, hop_len);
    if n_frames == 0 {
        return Err(Error::TooShort {
            len: x.len(),
            window: window_len,
        });
    }
    let mut frames = Vec::with_capacity(n_frames);
    // Monotonic deques of sample indices; fronts hold the current window extrema.
    let mut lows: VecDeque<usize> = VecDeque::new();
    let mut highs: VecDeque<usize> = VecDeque::new();
    let mut pushed = 0usize;
    for i in 0..n_frames {
        let start = i * hop_len;
        let end = start + window_len;
        if pushed < start {
            lows.clear();
            highs.clear();
            pushed = start;
        }
        while pushed < end {
            let v = x[pushed];
            while lows.back().is_some_and(|&j| x[j] >= v) {
                lows.pop_back();
            }
            lows.push_back(pushed);
            while highs.back().is_some_and(|&j| x[j] <= v) {
                highs.pop_back();
            }
            highs.push_back(pushed);
            pushed += 1;
        }
        while lows.front().is_some_and(|&j| j < start) {
            lows.pop_front();
        }
        while highs.front().is_some_and(|&j| j < start) {
            highs.pop_front();
        }
        frames.push(Frame::new(x[lows[0]], x[highs[0]]));
    }
    SilhouetteTrack::new(frames, window_len, hop_len, w.sample_rate_hz(), None)
}

/// Mean over frames and both channels of the squared difference. Tracks whose
/// frame counts differ by at most [`max_frame_slack`] are truncated to the
/// shorter one.
pub fn silhouette_mse(a: &SilhouetteTrack, b: &SilhouetteTrack) -> Result<f64> {
    for t in [a, b] {
        if let Some(q) = t.quantization {
            return Err(Error::QuantizedInput(q.to_string()));
        }
    }
    if !a.same_geometry(b) {
        return Err(Error::GeometryMismatch(format!(
            "window/hop/rate {}/{}/{} vs {}/{}/{}",
            a.window_len, a.hop_len, a.sample_rate_hz, b.window_len, b.hop_len, b.sample_rate_hz
        )));
    }
    let n = aligned_len(a.len(), b.len(), max_frame_slack(a.window_len, a.hop_len))?;
    let sum: f64 = a.frames[..n]
        .iter()
        .zip(&b.frames[..n])
        .map(|(p, q)| (p.min - q.min).powi(2) + (p.max - q.max).powi(2))
        .sum();
    Ok(sum / (2 * n) as f64)
}

/// Common frame count of two tracks under the truncation rule.
pub fn aligned_len(a: usize, b: usize, slack: usize) -> Result<usize> {
    if a.abs_diff(b) > slack {
        return Err(Error::FrameCountMismatch { a, b, slack });
    }
    Ok(a.min(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[f64], window: usize, hop: usize) -> Vec<Frame> {
        let mut out = Vec::new();
        let mut start = 0;
        while start + window <= x.len() {
            let w = &x[start..start + window];
            let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            out.push(Frame::new(lo, hi));
            start += hop;
        }
        out
    }

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 24_000).unwrap()
    }

    #[test]
    fn zeros_give_zero_frames() {
        let t = extract_silhouette(&wave(vec![0.0; 5000]), 512, 100).unwrap();
        assert!(t.frames().iter().all(|f| f.min == 0.0 && f.max == 0.0));
    }

    #[test]
    fn one_second_gives_ninety_frames() {
        let t = extract_silhouette(&wave(vec![0.0; 24_000]), 1024, 256).unwrap();
        assert_eq!(t.len(), 90);
        assert_eq!(frame_count(24_000, 1024, 256), 90);
        assert_eq!(frame_count(144_000, 1024, 256), 559);
    }

    #[test]
    fn sine_frames_span_full_amplitude() {
        let x: Vec<f64> = (0..24_000)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 100.0 * n as f64 / 24_000.0).sin())
            .collect();
        let t = extract_silhouette(&wave(x.clone()), 1024, 256).unwrap();
        assert_eq!(t.frames(), naive(&x, 1024, 256).as_slice());
        for f in t.frames() {
            assert!((f.min + 0.5).abs() < 1e-3 && (f.max - 0.5).abs() < 1e-3, "{f:?}");
        }
    }

    #[test]
    fn hop_larger_than_window_matches_naive() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let t = extract_silhouette(&wave(x.clone()), 7, 20).unwrap();
        assert_eq!(t.frames(), naive(&x, 7, 20).as_slice());
    }

    #[test]
    fn short_input_is_rejected() {
        assert!(matches!(
            extract_silhouette(&wave(vec![0.0; 1023]), 1024, 256),
            Err(Error::TooShort { .. })
        ));
        assert!(extract_silhouette(&wave(vec![0.0; 10]), 4, 0).is_err());
    }

    #[test]
    fn out_of_range_waveform_cannot_form_a_track() {
        assert!(matches!(
            extract_silhouette(&wave(vec![1.5; 8]), 4, 2),
            Err(Error::OutOfRange { .. })
        ));
    }

    fn track(frames: Vec<(f64, f64)>) -> SilhouetteTrack {
        SilhouetteTrack::new(
            frames.into_iter().map(|(a, b)| Frame::new(a, b)).collect(),
            1024,
            256,
            24_000,
            None,
        )
        .unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = track(vec![(0.0, 0.0); 12]);
        let b = track(vec![(0.1, 0.1); 12]);
        assert_eq!(silhouette_mse(&a, &a).unwrap(), 0.0);
        assert!((silhouette_mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn mse_truncates_within_slack() {
        let a = track(vec![(0.0, 0.0); 12]);
        let short = track(vec![(0.0, 0.0); 9]);
        assert_eq!(max_frame_slack(1024, 256), 3);
        assert_eq!(silhouette_mse(&a, &short).unwrap(), 0.0);
        let too_short = track(vec![(0.0, 0.0); 8]);
        assert!(matches!(
            silhouette_mse(&a, &too_short),
            Err(Error::FrameCountMismatch { .. })
        ));
    }

    #[test]
    fn mse_rejects_quantized_and_mismatched_geometry() {
        let a = track(vec![(-0.2, 0.3); 4]);
        let q = a.quantize(QuantizationScheme::linear(16)).unwrap();
        assert!(matches!(silhouette_mse(&a, &q), Err(Error::QuantizedInput(_))));
        let other = SilhouetteTrack::new(a.frames().to_vec(), 512, 256, 24_000, None).unwrap();
        assert!(matches!(
            silhouette_mse(&a, &other),
            Err(Error::GeometryMismatch(_))
        ));
    }

    #[test]
    fn slack_never_below_two() {
        assert_eq!(max_frame_slack(256, 256), 2);
        assert_eq!(max_frame_slack(1000, 256), 3);
        assert_eq!(max_frame_slack(2048, 256), 7);
    }

    #[test]
    fn track_invariants_enforced() {
        assert!(SilhouetteTrack::new(vec![], 4, 2, 24_000, None).is_err());
        assert!(matches!(
            SilhouetteTrack::new(vec![Frame::new(0.5, 0.2)], 4, 2, 24_000, None),
            Err(Error::FrameOrder { frame: 0, .. })
        ));
        assert!(SilhouetteTrack::new(vec![Frame::new(0.0, 0.2)], 0, 2, 24_000, None).is_err());
    }

    proptest::proptest! {
        #[test]
        fn extraction_matches_naive_scan(
            x in proptest::collection::vec(-1.0f64..=1.0, 16..600),
            window in 1usize..16,
            hop in 1usize..20,
        ) {
            let t = extract_silhouette(&wave(x.clone()), window, hop).unwrap();
            let expected = naive(&x, window, hop);
            proptest::prop_assert_eq!(t.frames(), expected.as_slice());
            proptest::prop_assert_eq!(t.len(), frame_count(x.len(), window, hop));
        }

        #[test]
        fn mse_is_symmetric_and_nonnegative(
            a in proptest::collection::vec((-1.0f64..=0.0, 0.0f64..=1.0), 1..50),
            shift in -0.3f64..0.3,
        ) {
            let ta = track(a.clone());
            let tb = track(a.iter().map(|&(lo, hi)| ((lo + shift).clamp(-1.0, 0.0), (hi + shift).clamp(0.0, 1.0))).collect());
            let ab = silhouette_mse(&ta, &tb).unwrap();
            let ba = silhouette_mse(&tb, &ta).unwrap();
            proptest::prop_assert!(ab >= 0.0);
            proptest::prop_assert_eq!(ab, ba);
            proptest::prop_assert_eq!(ab == 0.0, ta == tb);
        }
    }
}
