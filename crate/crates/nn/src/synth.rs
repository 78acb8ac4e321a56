use silhouette_core::{SilhouetteTrack, Waveform};

use crate::checkpoint::{Checkpoint, CheckpointKind, REPLAY_FINGERPRINT};
use crate::config::FRAME_HOP;
use crate::error::{Error, Result};
use crate::model::Model;

/// Anything that turns a silhouette into `frames × 256` samples.
pub trait Synthesizer: Send + Sync {
    fn synthesize(&self, y: &SilhouetteTrack) -> Result<Waveform>;
    fn fingerprint(&self) -> String;
}

impl Synthesizer for Model {
    fn synthesize(&self, y: &SilhouetteTrack) -> Result<Waveform> {
        self.generate(y)
    }

    fn fingerprint(&self) -> String {
        Model::fingerprint(self)
    }
}

/// Debug synthesizer with no parameters: each frame becomes 256 samples
/// alternating between the frame's max and min.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReplaySynth;

impl Synthesizer for ReplaySynth {
    fn synthesize(&self, y: &SilhouetteTrack) -> Result<Waveform> {
        let samples = y
            .frames()
            .iter()
            .flat_map(|f| (0..FRAME_HOP).map(move |j| if j % 2 == 0 { f.max } else { f.min }))
            .collect();
        Ok(Waveform::new(samples, y.sample_rate_hz())?)
    }

    fn fingerprint(&self) -> String {
        REPLAY_FINGERPRINT.to_string()
    }
}

/// Builds the synthesizer a checkpoint describes.
pub fn synthesizer_from_checkpoint(c: &Checkpoint) -> Result<Box<dyn Synthesizer>> {
    match c.kind {
        CheckpointKind::ReplayDebug => Ok(Box::new(ReplaySynth)),
        CheckpointKind::Gan => {
            let config = c
                .config
                .clone()
                .ok_or_else(|| Error::Checkpoint("missing model config".into()))?;
            let params = c
                .params()
                .ok_or_else(|| Error::Checkpoint("missing parameters".into()))?
                .subset(crate::model::GEN_PREFIX);
            Ok(Box::new(Model::generator_only(config, params)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use silhouette_core::Frame;

    #[test]
    fn replay_alternates() {
        let y = SilhouetteTrack::new(
            vec![Frame::new(-0.5, 0.25), Frame::new(0.0, 0.0)],
            1024,
            256,
            24_000,
            None,
        )
        .unwrap();
        let w = ReplaySynth.synthesize(&y).unwrap();
        assert_eq!(w.len(), 512);
        assert_eq!(&w.samples()[..3], &[0.25, -0.5, 0.25]);
        assert!(w.samples()[256..].iter().all(|&s| s == 0.0));
    }
}
