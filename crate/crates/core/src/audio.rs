//! Audio loading, resampling and SNR-controlled noise mixing.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sample rate the front-end operates at.
pub const PIPELINE_RATE: u32 = 16_000;

/// Mono waveform at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample_rate", "must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Scales so the peak magnitude is at most one. Silent buffers are returned unchanged.
    pub fn normalized(&self) -> Self {
        let peak = self.peak();
        if peak <= 1.0 || peak == 0.0 {
            return self.clone();
        }
        Self {
            samples: self.samples.iter().map(|s| s / peak).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

pub fn mean_power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

/// Reads a PCM (8/16/24/32-bit integer) or 32-bit float WAV file as mono in `[-1, 1]`.
///
/// Multichannel frames are averaged.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::Unsupported => Error::UnsupportedEncoding("non-PCM WAV".into()),
        hound::Error::FormatError(m) => Error::UnsupportedEncoding(m.to_string()),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 2f64.powi(bits as i32 - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{fmt:?} with {bits} bits per sample"
            )))
        }
    };
    if interleaved.len() < channels {
        return Err(Error::EmptyAudio);
    }
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioBuffer::new(mono, spec.sample_rate)
}

/// Writes a mono 16-bit PCM WAV; samples are clipped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &buf.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Linear-interpolation resampling. Output length is `round(len * target / source)`.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::invalid("target_rate", "must be positive"));
    }
    if target_rate == buf.sample_rate {
        return Ok(buf.clone());
    }
    let src = &buf.samples;
    let ratio = buf.sample_rate as f64 / target_rate as f64;
    let out_len = ((src.len() as f64) * target_rate as f64 / buf.sample_rate as f64).round() as usize;
    let out_len = out_len.max(1);
    let last = src.len() - 1;
    let out = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let i0 = (pos.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = pos - i0 as f64;
            // a + f (b - a) keeps constant signals exact
            src[i0] + frac * (src[i1] - src[i0])
        })
        .collect();
    AudioBuffer::new(out, target_rate)
}

/// Additive noise at a target SNR. An infinite `snr_db` means no noise.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub noise: AudioBuffer,
    pub snr_db: f64,
}

/// Gain applied to noise of power `p_noise` so that the mix has the requested SNR.
pub fn mixing_gain(p_clean: f64, p_noise: f64, snr_db: f64) -> f64 {
    (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt()
}

pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (mean_power(signal) / mean_power(noise)).log10()
}

/// Cuts `len` samples from `noise` starting at a seeded uniform offset, tiling when
/// the noise is shorter than the request.
pub fn crop_noise(noise: &[f64], len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if noise.len() >= len {
        let start = rng.gen_range(0..=noise.len() - len);
        noise[start..start + len].to_vec()
    } else {
        let start = rng.gen_range(0..noise.len());
        (0..len).map(|i| noise[(start + i) % noise.len()]).collect()
    }
}

/// Returns `clean + g * noise` with `g` chosen from full-utterance powers.
///
/// The mix is not re-normalized afterwards.
pub fn mix_noise(clean: &AudioBuffer, spec: &NoiseSpec, seed: u64) -> Result<AudioBuffer> {
    if spec.snr_db == f64::INFINITY {
        return Ok(clean.clone());
    }
    let (scaled, _) = scaled_noise(clean, spec, seed)?;
    let mixed = clean.samples.iter().zip(&scaled).map(|(c, n)| c + n).collect();
    AudioBuffer::new(mixed, clean.sample_rate)
}

/// The noise component `g * noise` that [`mix_noise`] adds, together with `g`.
pub fn scaled_noise(clean: &AudioBuffer, spec: &NoiseSpec, seed: u64) -> Result<(Vec<f64>, f64)> {
    if clean.sample_rate != spec.noise.sample_rate {
        return Err(Error::SampleRateMismatch(clean.sample_rate, spec.noise.sample_rate));
    }
    if spec.snr_db.is_nan() {
        return Err(Error::invalid("snr_db", "NaN"));
    }
    let p_clean = clean.power();
    if p_clean == 0.0 {
        return Err(Error::ZeroPower("clean"));
    }
    let noise = crop_noise(&spec.noise.samples, clean.len(), seed);
    let p_noise = mean_power(&noise);
    if p_noise == 0.0 {
        return Err(Error::ZeroPower("noise"));
    }
    let g = mixing_gain(p_clean, p_noise, spec.snr_db);
    Ok((noise.into_iter().map(|n| g * n).collect(), g))
}

/// One manifest line: audio path and its class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
}

/// Parses `path<TAB>label` lines. Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (p, label) = line.split_once('\t').ok_or_else(|| Error::Format {
            what: "manifest",
            reason: format!("line {}: expected `path<TAB>label`", lineno + 1),
        })?;
        let p = PathBuf::from(p);
        out.push(ManifestEntry {
            path: if p.is_absolute() { p } else { base.join(p) },
            label: label.trim_end().to_string(),
        });
    }
    if out.is_empty() {
        return Err(Error::Format {
            what: "manifest",
            reason: "no entries".into(),
        });
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (p, label) in entries {
        text.push_str(p);
        text.push('\t');
        text.push_str(label);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(samples: Vec<f64>, rate: u32) -> AudioBuffer {
        AudioBuffer::new(samples, rate).unwrap()
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(matches!(AudioBuffer::new(vec![], 16000), Err(Error::EmptyAudio)));
        assert!(matches!(
            AudioBuffer::new(vec![0.0, f64::NAN], 16000),
            Err(Error::NonFiniteSample(1))
        ));
    }

    #[test]
    fn normalization_caps_peak() {
        let b = buf(vec![0.5, -2.0, 1.0], 8000).normalized();
        assert_eq!(b.peak(), 1.0);
        assert_eq!(b.samples()[0], 0.25);
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let b = buf(vec![0.1, -0.7, 0.33], 16000);
        assert_eq!(resample(&b, 16000).unwrap(), b);
    }

    #[test]
    fn resample_length_ratio() {
        let b = buf(vec![0.0; 8000], 8000);
        assert_eq!(resample(&b, 16000).unwrap().len(), 16000);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let b = buf(vec![0.3; 1234], 11025);
        for rate in [8000, 16000, 44100] {
            assert!(resample(&b, rate).unwrap().samples().iter().all(|&s| s == 0.3));
        }
    }

    #[test]
    fn resample_rejects_zero_rate() {
        assert!(resample(&buf(vec![0.0], 8000), 0).is_err());
    }

    #[test]
    fn gain_hand_evaluated() {
        // sqrt(0.01 / (0.04 * 1)) = 0.5
        assert!((mixing_gain(0.01, 0.04, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn infinite_snr_returns_clean() {
        let clean = buf(vec![0.1, 0.2, -0.1], 16000);
        let spec = NoiseSpec {
            noise: buf(vec![1.0, -1.0], 16000),
            snr_db: f64::INFINITY,
        };
        assert_eq!(mix_noise(&clean, &spec, 3).unwrap(), clean);
    }

    #[test]
    fn zero_power_is_an_error() {
        let clean = buf(vec![0.0; 10], 16000);
        let noise = buf(vec![1.0; 10], 16000);
        let spec = NoiseSpec { noise, snr_db: 0.0 };
        assert!(matches!(mix_noise(&clean, &spec, 0), Err(Error::ZeroPower("clean"))));
        let spec = NoiseSpec {
            noise: buf(vec![0.0; 10], 16000),
            snr_db: 0.0,
        };
        assert!(matches!(
            mix_noise(&buf(vec![1.0; 10], 16000), &spec, 0),
            Err(Error::ZeroPower("noise"))
        ));
    }

    #[test]
    fn crop_tiles_short_noise() {
        let n = crop_noise(&[1.0, 2.0, 3.0], 7, 9);
        assert_eq!(n.len(), 7);
        for w in n.windows(4) {
            assert_eq!(w[0], w[3]);
        }
    }

    #[test]
    fn mixing_requires_matching_rates() {
        let spec = NoiseSpec {
            noise: buf(vec![1.0; 4], 8000),
            snr_db: 0.0,
        };
        assert!(matches!(
            mix_noise(&buf(vec![1.0; 4], 16000), &spec, 0),
            Err(Error::SampleRateMismatch(16000, 8000))
        ));
    }
}
