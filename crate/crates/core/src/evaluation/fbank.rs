//! Fixed log-mel filterbank baseline with the same framing as the learnable front-end.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::frontend::gabor::{hz_to_mel, mel_to_hz};
use crate::frontend::{frame_count, Spectrogram, DEFAULT_HOP, DEFAULT_POOL_WINDOW};

pub const FFT_SIZE: usize = 512;
pub const LOG_FLOOR: f64 = 1e-10;
const LOW_HZ: f64 = 60.0;
const HIGH_MARGIN_HZ: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub sample_rate: u32,
    /// `[n_mels x (FFT_SIZE/2 + 1)]` triangular weights.
    weights: Vec<Vec<f64>>,
    /// Band edges in Hz, `n_mels + 2` points.
    pub edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, sample_rate: u32) -> Result<Self> {
        if n_mels == 0 {
            return Err(Error::invalid("n_mels", "must be positive"));
        }
        let sr = sample_rate as f64;
        let (lo, hi) = (hz_to_mel(LOW_HZ), hz_to_mel(sr / 2.0 - HIGH_MARGIN_HZ));
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bins = FFT_SIZE / 2 + 1;
        let weights = (0..n_mels)
            .map(|m| {
                (0..bins)
                    .map(|k| {
                        triangle(
                            k as f64 * sr / FFT_SIZE as f64,
                            edges_hz[m],
                            edges_hz[m + 1],
                            edges_hz[m + 2],
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            n_mels,
            sample_rate,
            weights,
            edges_hz,
        })
    }

    /// Log mel energies `[frames x n_mels]` with 25 ms Hann frames every 10 ms.
    pub fn log_energies(&self, x: &AudioBuffer) -> Result<Spectrogram> {
        if x.sample_rate() != self.sample_rate {
            return Err(Error::SampleRateMismatch(x.sample_rate(), self.sample_rate));
        }
        let window = DEFAULT_POOL_WINDOW;
        let hop = DEFAULT_HOP;
        if x.len() < window {
            return Err(Error::TooShort { len: x.len(), window });
        }
        let frames = frame_count(x.len(), window, hop);
        let hann: Vec<f64> = (0..window)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (window - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        let mut values = Vec::with_capacity(frames * self.n_mels);
        let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
        let samples = x.samples();
        for t in 0..frames {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for i in 0..window {
                buf[i].re = samples[t * hop + i] * hann[i];
            }
            fft.process(&mut buf);
            let power: Vec<f64> = buf[..FFT_SIZE / 2 + 1]
                .iter()
                .map(|c| c.norm_sqr() / window as f64)
                .collect();
            for w in &self.weights {
                let e: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
                values.push(e.max(LOG_FLOOR).ln());
            }
        }
        Ok(Spectrogram::new(frames, self.n_mels, values, hop))
    }
}

fn triangle(f: f64, lo: f64, center: f64, hi: f64) -> f64 {
    if f <= lo || f >= hi {
        0.0
    } else if f <= center {
        (f - lo) / (center - lo)
    } else {
        (hi - f) / (hi - center)
    }
}

/// 40-channel log-mel features for a 16 kHz buffer.
pub fn fbank_baseline(x: &AudioBuffer) -> Result<Spectrogram> {
    MelFilterbank::new(40, x.sample_rate())?.log_energies(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(hz: f64, len: usize) -> AudioBuffer {
        AudioBuffer::new(
            (0..len)
                .map(|i| 0.5 * (2.0 * PI * hz * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
        .unwrap()
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let f = fbank_baseline(&AudioBuffer::new(vec![0.0; 4000], 16000).unwrap()).unwrap();
        assert!(f.values.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn tone_peaks_in_its_mel_band() {
        let bank = MelFilterbank::new(40, 16000).unwrap();
        // the band whose triangle weights 1 kHz the most, from the edges alone
        let expected = (0..40)
            .max_by(|&a, &b| {
                let wa = triangle(1000.0, bank.edges_hz[a], bank.edges_hz[a + 1], bank.edges_hz[a + 2]);
                let wb = triangle(1000.0, bank.edges_hz[b], bank.edges_hz[b + 1], bank.edges_hz[b + 2]);
                wa.total_cmp(&wb)
            })
            .unwrap();
        let f = bank.log_energies(&tone(1000.0, 8000)).unwrap();
        for t in 0..f.frames {
            let row = f.frame(t);
            let arg = (0..40).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, expected);
        }
    }

    #[test]
    fn shape_matches_learnable_frontend() {
        let x = tone(440.0, 16000);
        let f = fbank_baseline(&x).unwrap();
        let fe = crate::frontend::LearnableFrontend::new(40, 16000, crate::frontend::PcenForm::Paper).unwrap();
        let (g, _) = fe.forward(&x).unwrap();
        assert_eq!(f.shape(), g.shape());
        assert_eq!(f.shape(), (98, 40));
    }
}
