//! Log-magnitude mel spectrograms framed like silhouettes (window 1024, hop 256
//! at 24 kHz), plus the gradient of the log-mel map with respect to the input
//! samples for use inside a training loss.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub fft_len: usize,
    pub hop_len: usize,
    pub mel_bins: usize,
    pub sample_rate_hz: u32,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            fft_len: 1024,
            hop_len: 256,
            mel_bins: 80,
            sample_rate_hz: 24_000,
            fmin_hz: 0.0,
            fmax_hz: 12_000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn for_rate(sample_rate_hz: u32) -> Self {
        Self {
            sample_rate_hz,
            fmax_hz: sample_rate_hz as f64 / 2.0,
            ..Self::default()
        }
    }
}

/// Row-major `frames × mel_bins` log-magnitude matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    n_frames: usize,
    mel_bins: usize,
    fft_len: usize,
    hop_len: usize,
    sample_rate_hz: u32,
}

impl MelSpectrogram {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn mel_bins(&self) -> usize {
        self.mel_bins
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    pub fn hop_len(&self) -> usize {
        self.hop_len
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.values[i * self.mel_bins..(i + 1) * self.mel_bins]
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular band: weights for FFT bins `start..start + weights.len()`.
#[derive(Debug, Clone)]
struct Band {
    start: usize,
    weights: Vec<f64>,
}

/// Reusable analyzer holding the window, filterbank and FFT plans.
pub struct MelAnalyzer {
    config: MelConfig,
    window: Vec<f64>,
    bands: Vec<Band>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelAnalyzer").field("config", &self.config).finish()
    }
}

/// Intermediate values kept from a forward pass so the gradient can be taken.
#[derive(Debug, Clone)]
pub struct MelTrace {
    n_samples: usize,
    spectra: Vec<Complex<f64>>,
    mel: Vec<f64>,
}

impl MelAnalyzer {
    pub fn new(config: MelConfig) -> Result<Self> {
        let MelConfig {
            fft_len,
            hop_len,
            mel_bins,
            sample_rate_hz,
            fmin_hz,
            fmax_hz,
            log_floor,
        } = config;
        if fft_len < 2 || fft_len % 2 != 0 || hop_len == 0 || hop_len > fft_len {
            return Err(Error::InvalidFraming(format!(
                "fft {fft_len} must be even and >= hop {hop_len} > 0"
            )));
        }
        if (fft_len - hop_len) % 2 != 0 {
            return Err(Error::InvalidFraming(format!(
                "fft {fft_len} - hop {hop_len} must be even for symmetric padding"
            )));
        }
        if mel_bins == 0 || !(log_floor > 0.0) || !(fmin_hz >= 0.0 && fmax_hz > fmin_hz) {
            return Err(Error::InvalidFraming("invalid mel band layout".into()));
        }
        let window = (0..fft_len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / fft_len as f64).cos())
            .collect();
        let bands = triangular_bands(fft_len, sample_rate_hz, mel_bins, fmin_hz, fmax_hz);
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            window,
            bands,
            fft: planner.plan_fft_forward(fft_len),
            ifft: planner.plan_fft_inverse(fft_len),
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Dense `mel_bins × (fft_len / 2 + 1)` filterbank.
    pub fn filterbank(&self) -> Vec<Vec<f64>> {
        let n_bins = self.config.fft_len / 2 + 1;
        self.bands
            .iter()
            .map(|b| {
                let mut row = vec![0.0; n_bins];
                row[b.start..b.start + b.weights.len()].copy_from_slice(&b.weights);
                row
            })
            .collect()
    }

    /// `ceil(num_samples / hop)`.
    pub fn frame_count(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.config.hop_len)
    }

    fn pads(&self, num_samples: usize) -> (usize, usize) {
        let base = (self.config.fft_len - self.config.hop_len) / 2;
        let extra = self.frame_count(num_samples) * self.config.hop_len - num_samples;
        (base, base + extra)
    }

    /// Reflection-padded signal the frames are cut from.
    pub fn padded(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let (left, right) = self.pads(x.len());
        let n = x.len();
        let mut out = Vec::with_capacity(left + n + right);
        out.extend((1..=left).rev().map(|i| x[i]));
        out.extend_from_slice(x);
        out.extend((0..right).map(|j| x[n - 2 - j]));
        Ok(out)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n < self.config.fft_len {
            return Err(Error::TooShort {
                len: n,
                window: self.config.fft_len,
            });
        }
        Ok(())
    }

    fn spectra(&self, x: &[f64]) -> Result<(usize, Vec<Complex<f64>>)> {
        let padded = self.padded(x)?;
        let n_fft = self.config.fft_len;
        let n_bins = n_fft / 2 + 1;
        let n_frames = self.frame_count(x.len());
        let mut spectra = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for f in 0..n_frames {
            let start = f * self.config.hop_len;
            for (n, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(padded[start + n] * self.window[n], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            spectra.extend_from_slice(&buf[..n_bins]);
        }
        Ok((n_frames, spectra))
    }

    /// One-sided power spectra `|X_k|^2`, `frames × (fft_len / 2 + 1)`.
    pub fn power_spectra(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n_bins = self.config.fft_len / 2 + 1;
        let (_, spectra) = self.spectra(x)?;
        Ok(spectra
            .chunks(n_bins)
            .map(|row| row.iter().map(|c| c.norm_sqr()).collect())
            .collect())
    }

    pub fn analyze(&self, x: &[f64]) -> Result<MelSpectrogram> {
        self.analyze_traced(x).map(|(m, _)| m)
    }

    pub fn analyze_traced(&self, x: &[f64]) -> Result<(MelSpectrogram, MelTrace)> {
        let (n_frames, spectra) = self.spectra(x)?;
        let n_bins = self.config.fft_len / 2 + 1;
        let mel_bins = self.config.mel_bins;
        let mut mel = Vec::with_capacity(n_frames * mel_bins);
        let mut mag = vec![0.0; n_bins];
        for row in spectra.chunks(n_bins) {
            for (m, c) in mag.iter_mut().zip(row) {
                *m = c.norm();
            }
            for band in &self.bands {
                let s: f64 = band
                    .weights
                    .iter()
                    .zip(&mag[band.start..])
                    .map(|(w, m)| w * m)
                    .sum();
                mel.push(s);
            }
        }
        let floor = self.config.log_floor;
        let values = mel.iter().map(|&m| m.max(floor).ln()).collect();
        Ok((
            MelSpectrogram {
                values,
                n_frames,
                mel_bins,
                fft_len: self.config.fft_len,
                hop_len: self.config.hop_len,
                sample_rate_hz: self.config.sample_rate_hz,
            },
            MelTrace {
                n_samples: x.len(),
                spectra,
                mel,
            },
        ))
    }

    /// Gradient of `Σ grad[f, m] · logmel[f, m]` with respect to the input samples.
    pub fn backward(&self, trace: &MelTrace, grad: &[f64]) -> Vec<f64> {
        let n_fft = self.config.fft_len;
        let n_bins = n_fft / 2 + 1;
        let hop = self.config.hop_len;
        let mel_bins = self.config.mel_bins;
        let floor = self.config.log_floor;
        let (left, right) = self.pads(trace.n_samples);
        let mut gpad = vec![0.0; left + trace.n_samples + right];
        let mut gmag = vec![0.0; n_bins];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.ifft.get_inplace_scratch_len()];
        let n_frames = trace.spectra.len() / n_bins;
        for f in 0..n_frames {
            gmag.iter_mut().for_each(|g| *g = 0.0);
            for (m, band) in self.bands.iter().enumerate() {
                let idx = f * mel_bins + m;
                let mv = trace.mel[idx];
                // log(max(mel, floor)) is flat below the floor.
                if mv <= floor {
                    continue;
                }
                let gm = grad[idx] / mv;
                for (g, w) in gmag[band.start..].iter_mut().zip(&band.weights) {
                    *g += gm * w;
                }
            }
            let row = &trace.spectra[f * n_bins..(f + 1) * n_bins];
            for (k, slot) in buf.iter_mut().enumerate() {
                *slot = if k < n_bins {
                    let c = row[k];
                    let mag = c.norm();
                    if mag > 0.0 {
                        c * (gmag[k] / mag)
                    } else {
                        Complex::new(0.0, 0.0)
                    }
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            // X_k = Σ w_n x_n e^{-iθ}; dL/dx_n = w_n Re Σ_k conj-free (g_re + i g_im) e^{+iθ}.
            self.ifft.process_with_scratch(&mut buf, &mut scratch);
            let start = f * hop;
            for n in 0..n_fft {
                gpad[start + n] += self.window[n] * buf[n].re;
            }
        }
        let n = trace.n_samples;
        let mut gx = gpad[left..left + n].to_vec();
        for i in 1..=left {
            gx[i] += gpad[left - i];
        }
        for j in 0..right {
            gx[n - 2 - j] += gpad[left + n + j];
        }
        gx
    }
}

fn triangular_bands(
    fft_len: usize,
    sample_rate_hz: u32,
    mel_bins: usize,
    fmin: f64,
    fmax: f64,
) -> Vec<Band> {
    let n_bins = fft_len / 2 + 1;
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (mel_bins + 1) as f64))
        .collect();
    let bin_hz = sample_rate_hz as f64 / fft_len as f64;
    (0..mel_bins)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let weights: Vec<(usize, f64)> = (0..n_bins)
                .filter_map(|k| {
                    let hz = k as f64 * bin_hz;
                    let w = ((hz - lo) / (center - lo)).min((hi - hz) / (hi - center));
                    (w > 0.0).then_some((k, w))
                })
                .collect();
            match weights.first() {
                Some(&(start, _)) => Band {
                    start,
                    weights: weights.iter().map(|&(_, w)| w).collect(),
                },
                None => Band {
                    start: 0,
                    weights: Vec::new(),
                },
            }
        })
        .collect()
}

/// JSON inspection dump laid out like a silhouette document, one row of
/// `mel_bins` log magnitudes per frame.
pub fn serialize_mel(m: &MelSpectrogram) -> Vec<u8> {
    let doc = serde_json::json!({
        "version": 1,
        "sample_rate_hz": m.sample_rate_hz,
        "fft_len": m.fft_len,
        "hop_len": m.hop_len,
        "mel_bins": m.mel_bins,
        "frames": (0..m.n_frames).map(|i| m.frame(i)).collect::<Vec<_>>(),
    });
    let mut out = serde_json::to_vec(&doc).expect("mel documents serialize");
    out.push(b'\n');
    out
}

/// Log-mel spectrogram with the default 24 kHz layout.
pub fn mel_spectrogram(
    w: &Waveform,
    fft_len: usize,
    hop_len: usize,
    mel_bins: usize,
) -> Result<MelSpectrogram> {
    let config = MelConfig {
        fft_len,
        hop_len,
        mel_bins,
        ..MelConfig::for_rate(w.sample_rate_hz())
    };
    MelAnalyzer::new(config)?.analyze(w.samples())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn mel_document_round_trips_values() {
        let w = Waveform::new((0..3000).map(|i| (i as f64 * 0.01).sin() * 0.5).collect(), 24_000).unwrap();
        let m = mel_spectrogram(&w, 1024, 256, 80).unwrap();
        let doc: serde_json::Value = serde_json::from_slice(&serialize_mel(&m)).unwrap();
        assert_eq!(doc["mel_bins"], 80);
        let frames = doc["frames"].as_array().unwrap();
        assert_eq!(frames.len(), m.n_frames());
        assert_eq!(frames[3][7].as_f64().unwrap(), m.frame(3)[7]);
    }

    fn analyzer() -> MelAnalyzer {
        MelAnalyzer::new(MelConfig::default()).unwrap()
    }

    fn tone(hz: f64, amp: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| amp * (2.0 * PI * hz * n as f64 / 24_000.0).sin())
            .collect()
    }

    #[test]
    fn zeros_hit_the_floor() {
        let w = Waveform::zeros(4096, 24_000).unwrap();
        let m = mel_spectrogram(&w, 1024, 256, 80).unwrap();
        assert_eq!(m.n_frames(), 16);
        assert!(m.values().iter().all(|&v| v == 1e-5f64.ln()));
    }

    #[test]
    fn frame_count_is_ceiling() {
        let a = analyzer();
        for n in [1024usize, 1025, 24_000, 24_063, 48_000] {
            let m = a.analyze(&vec![0.1; n]).unwrap();
            assert_eq!(m.n_frames(), n.div_ceil(256));
        }
        assert!(a.analyze(&[0.0; 1000]).is_err());
    }

    #[test]
    fn tone_peaks_in_its_band() {
        let a = analyzer();
        // Oracle: the band whose triangle weighs 1 kHz most, from the band definition.
        let m_lo = hz_to_mel(0.0);
        let m_hi = hz_to_mel(12_000.0);
        let edges: Vec<f64> = (0..82).map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / 81.0)).collect();
        let weight = |m: usize, hz: f64| {
            ((hz - edges[m]) / (edges[m + 1] - edges[m]))
                .min((edges[m + 2] - hz) / (edges[m + 2] - edges[m + 1]))
                .max(0.0)
        };
        let expected = (0..80)
            .max_by(|&p, &q| weight(p, 1000.0).total_cmp(&weight(q, 1000.0)))
            .unwrap();
        let m = a.analyze(&tone(1000.0, 0.5, 24_000)).unwrap();
        for f in 4..m.n_frames() - 4 {
            let row = m.frame(f);
            let peak = (0..80).max_by(|&p, &q| row[p].total_cmp(&row[q])).unwrap();
            assert_eq!(peak, expected, "frame {f}");
        }
    }

    #[test]
    fn parseval_per_frame() {
        let a = analyzer();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..5000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let padded = a.padded(&x).unwrap();
        let power = a.power_spectra(&x).unwrap();
        let n = 1024.0;
        for (f, row) in power.iter().enumerate() {
            let energy: f64 = (0..1024)
                .map(|i| (padded[f * 256 + i] * a.window()[i]).powi(2))
                .sum();
            let last = row.len() - 1;
            let spec: f64 = (row[0] + row[last] + 2.0 * row[1..last].iter().sum::<f64>()) / n;
            assert!((spec - energy).abs() <= 1e-6 * energy, "frame {f}: {spec} vs {energy}");
        }
    }

    #[test]
    fn reflection_padding_layout() {
        let cfg = MelConfig {
            fft_len: 8,
            hop_len: 4,
            mel_bins: 2,
            ..MelConfig::default()
        };
        let a = MelAnalyzer::new(cfg).unwrap();
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        // 10 samples -> 3 frames -> 2 extra samples on the right.
        assert_eq!(
            a.padded(&x).unwrap(),
            vec![2.0, 1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 8.0, 7.0, 6.0, 5.0]
        );
    }

    #[test]
    fn deterministic_output() {
        let a = analyzer();
        let x = tone(440.0, 0.3, 6000);
        assert_eq!(a.analyze(&x).unwrap(), a.analyze(&x).unwrap());
    }

    #[test]
    fn positive_scaling_shifts_log_mel() {
        let a = analyzer();
        let x = tone(330.0, 0.8, 8000);
        let lambda: f64 = 0.37;
        let scaled: Vec<f64> = x.iter().map(|v| v * lambda).collect();
        let base = a.analyze(&x).unwrap();
        let sc = a.analyze(&scaled).unwrap();
        let floor = 1e-5f64.ln();
        for (b, s) in base.values().iter().zip(sc.values()) {
            if *s > floor + 1e-9 {
                assert!((s - (b + lambda.ln())).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = MelConfig {
            fft_len: 64,
            hop_len: 16,
            mel_bins: 8,
            ..MelConfig::default()
        };
        let a = MelAnalyzer::new(cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..150).map(|_| rng.random_range(-0.5..0.5)).collect();
        let (m, trace) = a.analyze_traced(&x).unwrap();
        let weights: Vec<f64> = (0..m.values().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |x: &[f64]| -> f64 {
            a.analyze(x).unwrap().values().iter().zip(&weights).map(|(v, w)| v * w).sum()
        };
        let grad = a.backward(&trace, &weights);
        let h = 1e-6;
        for i in (0..x.len()).step_by(7) {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(err < 1e-5, "sample {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }
}
