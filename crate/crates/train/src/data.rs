use rand::Rng;
use rand_chacha::ChaCha8Rng;
use silhouette_core::{
    extract_silhouette, scale_amplitude, QuantizationScheme, SilhouetteTrack, Waveform,
    DEFAULT_HOP, DEFAULT_WINDOW,
};
use silhouette_nn::FRAME_HOP;

use crate::error::{Error, Result};
use crate::plan::TrainPlan;

/// Where one batch element came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub utterance: usize,
    pub offset: usize,
    pub lambda: f64,
}

/// One training example: the scaled raw segment and the silhouette the
/// generator is conditioned on (quantized, then dequantized).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub pick: Pick,
    pub segment: Waveform,
    pub conditioning: SilhouetteTrack,
}

impl Example {
    /// The part of the segment the generator reproduces: `frames × 256` samples.
    pub fn target(&self) -> &[f64] {
        &self.segment.samples()[..self.conditioning.len() * FRAME_HOP]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub examples: Vec<Example>,
}

impl Batch {
    pub fn picks(&self) -> Vec<Pick> {
        self.examples.iter().map(|e| e.pick).collect()
    }
}

/// Checks every utterance is usable and shares one sample rate.
pub fn validate_corpus(corpus: &[Waveform]) -> Result<u32> {
    let first = corpus.first().ok_or(Error::EmptyCorpus)?;
    let rate = first.sample_rate_hz();
    for (i, w) in corpus.iter().enumerate() {
        if w.len() < DEFAULT_WINDOW {
            return Err(Error::Config(format!(
                "utterance {i} has {} samples, shorter than one {DEFAULT_WINDOW}-sample window",
                w.len()
            )));
        }
        if w.sample_rate_hz() != rate {
            return Err(Error::Config(format!(
                "utterance {i} is {} Hz, expected {rate} Hz",
                w.sample_rate_hz()
            )));
        }
    }
    Ok(rate)
}

/// Extracts, quantizes and dequantizes the conditioning silhouette of `w`.
pub fn conditioning_silhouette(w: &Waveform, scheme: Option<QuantizationScheme>) -> Result<SilhouetteTrack> {
    let y = extract_silhouette(w, DEFAULT_WINDOW, DEFAULT_HOP)?;
    Ok(match scheme {
        Some(s) => y.quantize(s)?,
        None => y,
    })
}

/// Draws `plan.batch_size` random crops, each scaled by λ ~ U[low, high].
/// Utterances shorter than the segment are zero-padded on the right.
pub fn sample_batch(
    corpus: &[Waveform],
    plan: &TrainPlan,
    scheme: Option<QuantizationScheme>,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    let rate = validate_corpus(corpus)?;
    let seg_len = plan.segment_len(rate);
    if seg_len < DEFAULT_WINDOW {
        return Err(Error::Plan(format!(
            "segments of {seg_len} samples are shorter than one window"
        )));
    }
    let [lo, hi] = plan.aug_lambda_range;
    let mut examples = Vec::with_capacity(plan.batch_size);
    for _ in 0..plan.batch_size {
        let utterance = rng.random_range(0..corpus.len());
        let w = &corpus[utterance];
        let offset = if w.len() > seg_len {
            rng.random_range(0..=w.len() - seg_len)
        } else {
            0
        };
        let lambda = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let segment = scale_amplitude(&w.segment(offset, seg_len)?, lambda)?;
        let conditioning = conditioning_silhouette(&segment, scheme)?;
        examples.push(Example {
            pick: Pick {
                utterance,
                offset,
                lambda,
            },
            segment,
            conditioning,
        });
    }
    Ok(Batch { examples })
}
