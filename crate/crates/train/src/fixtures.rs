//! Deterministic synthetic audio for desk-scale runs and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use silhouette_core::Waveform;

/// Laughter-like clip: a train of voiced "ha" bursts (~5 per second) with
/// jittered pitch, harmonic decay, breath noise and a soft attack/decay
/// envelope. The loudest burst peaks near `peak`.
pub fn laughter_like(seconds: f64, rate_hz: u32, peak: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * rate_hz as f64).round() as usize;
    let sr = rate_hz as f64;
    let mut x = vec![0.0; n];
    let mut t0 = 0.05 * sr;
    while (t0 as usize) < n {
        let dur = rng.random_range(0.10..0.16) * sr;
        let f0 = rng.random_range(240.0..340.0);
        let gain = rng.random_range(0.55..1.0);
        let mut phase = 0.0f64;
        for i in 0..dur as usize {
            let idx = t0 as usize + i;
            if idx >= n {
                break;
            }
            let u = i as f64 / dur;
            let env = (u / 0.15).min(1.0) * (1.0 - u).powf(1.5);
            let f = f0 * (1.0 - 0.15 * u);
            phase += std::f64::consts::TAU * f / sr;
            let voiced: f64 = (1..=6).map(|h| (phase * h as f64).sin() / h as f64).sum();
            let breath = rng.random_range(-1.0..1.0) * 0.25;
            x[idx] += gain * env * (0.6 * voiced + breath);
        }
        t0 += dur + rng.random_range(0.04..0.10) * sr;
    }
    normalize(&mut x, peak);
    Waveform::new(x, rate_hz).expect("synthetic audio is valid")
}

/// Speech-like clip: syllables of varying pitch and vowel colour separated
/// by short pauses, used as a stand-in pretraining corpus.
pub fn speech_like(seconds: f64, rate_hz: u32, peak: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * rate_hz as f64).round() as usize;
    let sr = rate_hz as f64;
    let mut x = vec![0.0; n];
    let mut t0 = 0.0;
    while (t0 as usize) < n {
        let dur = rng.random_range(0.12..0.35) * sr;
        let f0 = rng.random_range(90.0..220.0);
        let glide = rng.random_range(-0.3..0.3);
        let formant = rng.random_range(2.0..7.0);
        let gain = rng.random_range(0.2..1.0);
        let mut phase = 0.0f64;
        for i in 0..dur as usize {
            let idx = t0 as usize + i;
            if idx >= n {
                break;
            }
            let u = i as f64 / dur;
            let env = (std::f64::consts::PI * u).sin().powi(2);
            phase += std::f64::consts::TAU * f0 * (1.0 + glide * u) / sr;
            let voiced: f64 = (1..=10)
                .map(|h| {
                    let h = h as f64;
                    (phase * h).sin() / (1.0 + (h - formant).powi(2))
                })
                .sum();
            x[idx] += gain * env * (voiced + rng.random_range(-0.05..0.05));
        }
        t0 += dur + rng.random_range(0.02..0.2) * sr;
    }
    normalize(&mut x, peak);
    Waveform::new(x, rate_hz).expect("synthetic audio is valid")
}

fn normalize(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}
