//! Textual silhouette document (JSON).
//!
//! ```json
//! {"version":1,"sample_rate_hz":24000,"window_len":1024,"hop_len":256,
//!  "quantization":{"kind":"mu_law","num_bins":256},"frames":[[-0.5,0.5],...]}
//! ```
//!
//! Reals are written in shortest round-trip form, so parsing a serialized track
//! reproduces every value bit for bit.

use serde::{Deserialize, Serialize};

use super::{Frame, QuantizationScheme, SilhouetteTrack};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SilhouetteDocument {
    pub version: u32,
    pub sample_rate_hz: u32,
    pub window_len: usize,
    pub hop_len: usize,
    pub quantization: Option<QuantizationScheme>,
    pub frames: Vec<[f64; 2]>,
}

impl From<&SilhouetteTrack> for SilhouetteDocument {
    fn from(t: &SilhouetteTrack) -> Self {
        Self {
            version: FORMAT_VERSION,
            sample_rate_hz: t.sample_rate_hz,
            window_len: t.window_len,
            hop_len: t.hop_len,
            quantization: t.quantization,
            frames: t.frames.iter().map(|f| [f.min, f.max]).collect(),
        }
    }
}

impl TryFrom<SilhouetteDocument> for SilhouetteTrack {
    type Error = Error;

    fn try_from(doc: SilhouetteDocument) -> Result<Self> {
        if doc.version != FORMAT_VERSION {
            return Err(Error::Malformed(format!(
                "unsupported version {} (expected {FORMAT_VERSION})",
                doc.version
            )));
        }
        if doc.frames.is_empty() {
            return Err(Error::Malformed("frames list is empty".into()));
        }
        SilhouetteTrack::new(
            doc.frames.iter().map(|&[lo, hi]| Frame::new(lo, hi)).collect(),
            doc.window_len,
            doc.hop_len,
            doc.sample_rate_hz,
            doc.quantization,
        )
    }
}

pub fn serialize_silhouette(track: &SilhouetteTrack) -> Vec<u8> {
    let mut out = serde_json::to_vec(&SilhouetteDocument::from(track))
        .expect("silhouette documents always serialize");
    out.push(b'\n');
    out
}

pub fn parse_silhouette(bytes: &[u8]) -> Result<SilhouetteTrack> {
    let doc: SilhouetteDocument =
        serde_json::from_slice(bytes).map_err(|e| Error::Malformed(e.to_string()))?;
    doc.try_into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(frames: &str) -> String {
        format!(
            r#"{{"version":1,"sample_rate_hz":24000,"window_len":1024,"hop_len":256,"quantization":null,"frames":{frames}}}"#
        )
    }

    #[test]
    fn parses_minimal_document() {
        let t = parse_silhouette(doc("[[-0.25,0.5]]").as_bytes()).unwrap();
        assert_eq!(t.frames(), &[Frame::new(-0.25, 0.5)]);
        assert_eq!(t.quantization(), None);
    }

    #[test]
    fn rejects_inverted_frame() {
        assert!(matches!(
            parse_silhouette(doc("[[0.0,0.1],[0.5,0.2]]").as_bytes()),
            Err(Error::FrameOrder { frame: 1, .. })
        ));
    }

    #[test]
    fn rejects_empty_and_malformed() {
        assert!(matches!(
            parse_silhouette(doc("[]").as_bytes()),
            Err(Error::Malformed(_))
        ));
        assert!(matches!(parse_silhouette(b"{"), Err(Error::Malformed(_))));
        assert!(matches!(
            parse_silhouette(doc("[[0.1]]").as_bytes()),
            Err(Error::Malformed(_))
        ));
        let v2 = doc("[[0.0,0.1]]").replace("\"version\":1", "\"version\":2");
        assert!(matches!(parse_silhouette(v2.as_bytes()), Err(Error::Malformed(_))));
    }

    #[test]
    fn quantization_tag_survives() {
        let t = SilhouetteTrack::new(vec![Frame::new(-0.1, 0.3)], 1024, 256, 24_000, None)
            .unwrap()
            .quantize(QuantizationScheme::mu_law(16))
            .unwrap();
        let text = String::from_utf8(serialize_silhouette(&t)).unwrap();
        assert!(text.contains(r#""quantization":{"kind":"mu_law","num_bins":16}"#), "{text}");
        assert_eq!(parse_silhouette(text.as_bytes()).unwrap(), t);
    }

    proptest::proptest! {
        #[test]
        fn round_trip_is_exact(
            pairs in proptest::collection::vec((-1.0f64..=1.0, -1.0f64..=1.0), 1..100),
            window in 1usize..4096,
            hop in 1usize..1024,
            rate in 1u32..200_000,
        ) {
            let frames = pairs.into_iter().map(|(a, b)| Frame::new(a.min(b), a.max(b))).collect();
            let t = SilhouetteTrack::new(frames, window, hop, rate, None).unwrap();
            let back = parse_silhouette(&serialize_silhouette(&t)).unwrap();
            proptest::prop_assert_eq!(back, t);
        }
    }
}
