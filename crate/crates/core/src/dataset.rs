//! Labelled audio collections: loading from manifests, and a deterministic synthetic
//! vowel-sequence corpus used as a desk-scale stand-in for spoken keywords.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, read_manifest, resample, write_manifest, write_wav, AudioBuffer, PIPELINE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<(AudioBuffer, usize)>,
    /// Class names; `items[i].1` indexes into this.
    pub labels: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Loads every manifest entry at 16 kHz. With `labels = None` the label set is the
    /// sorted set of names in the manifest; otherwise names must belong to `labels`.
    pub fn from_manifest(path: impl AsRef<Path>, labels: Option<&[String]>) -> Result<Self> {
        let entries = read_manifest(path)?;
        let labels: Vec<String> = match labels {
            Some(l) => l.to_vec(),
            None => entries
                .iter()
                .map(|e| e.label.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        let mut items = Vec::with_capacity(entries.len());
        for e in entries {
            let idx = labels.iter().position(|l| *l == e.label).ok_or_else(|| Error::Format {
                what: "manifest",
                reason: format!("label `{}` is not among the model's classes", e.label),
            })?;
            let audio = resample(&load_wav(&e.path)?, PIPELINE_RATE)?;
            items.push((audio, idx));
        }
        Ok(Self { items, labels })
    }
}

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub duration_s: f64,
    /// Relative jitter of formants across "speakers".
    pub formant_jitter: f64,
    /// Level of the white background noise relative to the vowel peak.
    pub background: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            train_per_class: 20,
            test_per_class: 10,
            duration_s: 0.5,
            formant_jitter: 0.08,
            background: 0.02,
            seed: 0,
        }
    }
}

/// (F1, F2) in Hz for ten American-English vowels.
const VOWELS: [(f64, f64); 10] = [
    (270.0, 2290.0),
    (390.0, 1990.0),
    (530.0, 1840.0),
    (660.0, 1720.0),
    (730.0, 1090.0),
    (570.0, 840.0),
    (440.0, 1020.0),
    (300.0, 870.0),
    (640.0, 1190.0),
    (490.0, 1350.0),
];

/// Vowel pair spoken by class `c`; first vowels are distinct for the first ten classes.
fn class_vowels(c: usize) -> (usize, usize) {
    (c % 10, (3 * c + 1 + c / 10) % 10)
}

fn formant_gain(f: f64, formant: f64) -> f64 {
    let bw = 60.0 + 0.08 * formant;
    (-0.5 * ((f - formant) / bw).powi(2)).exp()
}

/// One utterance of class `c`: two voiced segments with a short gap, speaker-dependent
/// pitch, formant scale and timing.
pub fn synth_utterance(c: usize, config: &SynthConfig, rng: &mut impl Rng) -> Result<AudioBuffer> {
    let sr = PIPELINE_RATE as f64;
    let n = (config.duration_s * sr).round() as usize;
    let f0 = rng.gen_range(100.0..220.0);
    let scale = 1.0 + config.formant_jitter * rng.gen_range(-1.0..1.0);
    let (v1, v2) = class_vowels(c);
    let onset = rng.gen_range(0.02..0.08) * config.duration_s;
    let split = rng.gen_range(0.45..0.55) * config.duration_s;
    let gap = 0.04 * config.duration_s;
    let end = config.duration_s - rng.gen_range(0.02..0.08) * config.duration_s;
    let segments = [(onset, split - gap / 2.0, v1), (split + gap / 2.0, end, v2)];
    let mut samples = vec![0.0; n];
    for (start, stop, v) in segments {
        let (f1, f2) = (VOWELS[v].0 * scale, VOWELS[v].1 * scale);
        let harmonics: Vec<(f64, f64, f64)> = (1..)
            .map(|h| h as f64 * f0)
            .take_while(|&f| f < 4000.0)
            .map(|f| {
                (
                    f,
                    formant_gain(f, f1) + 0.7 * formant_gain(f, f2),
                    rng.gen_range(0.0..2.0 * PI),
                )
            })
            .collect();
        let (i0, i1) = ((start * sr) as usize, ((stop * sr) as usize).min(n));
        let ramp = (0.01 * sr) as usize;
        for i in i0..i1 {
            let t = i as f64 / sr;
            let env = ((i - i0).min(i1 - 1 - i) as f64 / ramp as f64).min(1.0);
            let v: f64 = harmonics
                .iter()
                .map(|&(f, a, ph)| a * (2.0 * PI * f * t + ph).sin())
                .sum();
            samples[i] += env * v;
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    for s in &mut samples {
        *s = 0.5 * *s / peak + config.background * rng.gen_range(-1.0..1.0);
    }
    AudioBuffer::new(samples, PIPELINE_RATE)
}

/// Train and test splits, drawn from disjoint random streams.
pub fn synthesize(config: &SynthConfig) -> Result<(Dataset, Dataset)> {
    if config.classes == 0 || config.classes > 100 {
        return Err(Error::invalid("synth.classes", "must be in 1..=100"));
    }
    if !(config.duration_s >= 0.1) {
        return Err(Error::invalid("synth.duration_s", "must be at least 0.1 s"));
    }
    let labels: Vec<String> = (0..config.classes).map(|c| format!("w{c:02}")).collect();
    let split = |per_class: usize, stream: u64| -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream);
        let mut items = Vec::with_capacity(per_class * config.classes);
        for _ in 0..per_class {
            for c in 0..config.classes {
                items.push((synth_utterance(c, config, &mut rng)?, c));
            }
        }
        Ok(Dataset {
            items,
            labels: labels.clone(),
        })
    };
    Ok((split(config.train_per_class, 1)?, split(config.test_per_class, 2)?))
}

/// Pink-ish noise (white noise through a leaky integrator, mixed with white), for SNR tests.
pub fn synth_noise(duration_s: f64, seed: u64) -> Result<AudioBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let n = (duration_s * PIPELINE_RATE as f64).round() as usize;
    let mut lp = 0.0;
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            lp = 0.97 * lp + 0.03 * w;
            0.3 * w + 4.0 * lp
        })
        .collect();
    Ok(AudioBuffer::new(samples, PIPELINE_RATE)?.normalized())
}

/// Writes `train.tsv`, `test.tsv`, the WAVs they reference and `noise.wav` under `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, config: &SynthConfig) -> Result<()> {
    let dir = dir.as_ref();
    let (train, test) = synthesize(config)?;
    for (name, ds) in [("train", &train), ("test", &test)] {
        std::fs::create_dir_all(dir.join(name))?;
        let mut entries = Vec::with_capacity(ds.len());
        for (i, (audio, label)) in ds.items.iter().enumerate() {
            let rel = format!("{name}/{i:05}.wav");
            write_wav(dir.join(&rel), audio)?;
            entries.push((rel, ds.labels[*label].clone()));
        }
        write_manifest(dir.join(format!("{name}.tsv")), &entries)?;
    }
    write_wav(dir.join("noise.wav"), &synth_noise(5.0, config.seed)?)?;
    Ok(())
}
