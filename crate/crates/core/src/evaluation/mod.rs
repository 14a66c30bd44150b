//! Desk-scale experiments: ablation grids, SNR sweeps and raster export.

pub mod fbank;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{mix_noise, resample, AudioBuffer, NoiseSpec};
use crate::config::{FeatureKind, LossConfig, NeuronKind, OptimConfig, PipelineConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::frontend::Spectrogram;
use crate::io::{features_csv, raster_csv};
use crate::spikes::SpikeTrain;
use crate::training::{evaluate, EvalSummary, Example, Pipeline, TrainReport, Trainer};

/// Everything needed to train one model apart from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub pipeline: PipelineConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub threads: usize,
}

/// One row of the ablation table: which components are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub feature: FeatureKind,
    pub neuron: NeuronKind,
    pub use_if: bool,
    pub use_ili: bool,
    pub use_lsr: bool,
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.neuron != NeuronKind::IhcLif && (self.use_if || self.use_ili) {
            return Err(Error::invalid(
                "ablation.use_if",
                format!("lateral pathways require IHC-LIF, not {}", self.neuron),
            ));
        }
        Ok(())
    }

    pub fn of(exp: &Experiment) -> Self {
        Self {
            feature: exp.pipeline.feature,
            neuron: exp.pipeline.neuron,
            use_if: exp.pipeline.use_if,
            use_ili: exp.pipeline.use_ili,
            use_lsr: exp.loss.use_lsr,
        }
    }

    /// `base` with only the ablated components changed.
    pub fn apply(&self, base: &Experiment) -> Result<Experiment> {
        self.validate()?;
        let mut exp = base.clone();
        exp.pipeline.feature = self.feature;
        exp.pipeline.neuron = self.neuron;
        exp.pipeline.use_if = self.use_if;
        exp.pipeline.use_ili = self.use_ili;
        exp.loss.use_lsr = self.use_lsr;
        Ok(exp)
    }
}

/// The standard ablation rows, from fixed features up to the full model.
pub fn default_grid() -> Vec<AblationSpec> {
    use FeatureKind::*;
    use NeuronKind::*;
    let row = |feature, neuron, use_if, use_ili, use_lsr| AblationSpec {
        feature,
        neuron,
        use_if,
        use_ili,
        use_lsr,
    };
    vec![
        row(Fbank, Lif, false, false, false),
        row(Learnable, Lif, false, false, false),
        row(Learnable, TcLif, false, false, false),
        row(Learnable, IhcLif, true, false, false),
        row(Learnable, IhcLif, true, true, false),
        row(Learnable, IhcLif, true, true, true),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub spec: AblationSpec,
    pub seed: u64,
    /// `None` for the clean test set.
    pub snr_db: Option<f64>,
    pub accuracy: f64,
    pub firing_rate: f64,
}

pub const RESULTS_HEADER: &str = "feature,neuron,If,ILI,LSR,seed,snr_db,accuracy,firing_rate";

/// Results table; clean rows carry `inf` in the `snr_db` column.
pub fn results_csv(rows: &[EvalResult]) -> String {
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let snr = r.snr_db.map_or("inf".to_string(), |v| format!("{v}"));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.spec.feature,
            r.spec.neuron,
            r.spec.use_if,
            r.spec.use_ili,
            r.spec.use_lsr,
            r.seed,
            snr,
            r.accuracy,
            r.firing_rate
        );
    }
    s
}

/// Attaches cached fixed features (fbank pipelines) to every utterance.
pub fn prepare(pipeline: &Pipeline, data: &Dataset) -> Result<Vec<Example>> {
    data.items
        .iter()
        .map(|(a, l)| pipeline.example(a.clone(), *l))
        .collect()
}

pub fn train_model(exp: &Experiment, seed: u64, train: &Dataset) -> Result<(Pipeline, Vec<TrainReport>)> {
    let pipeline = Pipeline::init(&exp.pipeline, seed)?;
    if pipeline.classifier.n_classes() < train.labels.len() {
        return Err(Error::invalid(
            "pipeline.classifier.n_classes",
            format!("{} classes in the data", train.labels.len()),
        ));
    }
    let examples = prepare(&pipeline, train)?;
    let mut trainer = Trainer::new(pipeline, exp.optim.clone(), exp.loss.clone(), seed, exp.threads)?;
    let reports = trainer.fit(&examples)?;
    Ok((trainer.pipeline, reports))
}

/// Trains and evaluates every spec for every seed on the clean test set.
pub fn run_ablation_grid(
    specs: &[AblationSpec],
    base: &Experiment,
    train: &Dataset,
    test: &Dataset,
    seeds: &[u64],
) -> Result<Vec<EvalResult>> {
    specs.iter().try_for_each(AblationSpec::validate)?;
    let mut rows = Vec::with_capacity(specs.len() * seeds.len());
    for spec in specs {
        let exp = spec.apply(base)?;
        for &seed in seeds {
            let (model, _) = train_model(&exp, seed, train)?;
            let s = evaluate(&model, &prepare(&model, test)?, exp.threads)?;
            rows.push(EvalResult {
                spec: *spec,
                seed,
                snr_db: None,
                accuracy: s.accuracy,
                firing_rate: s.firing_rate,
            });
        }
    }
    Ok(rows)
}

/// Seed of the noise crop for test utterance `index`; identical across SNRs.
pub fn noise_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

/// `test` with utterance `i` mixed with `noise[i % noise.len()]` at `snr_db`.
pub fn noisy_copy(test: &Dataset, noise: &[AudioBuffer], snr_db: f64, seed: u64) -> Result<Dataset> {
    if noise.is_empty() && snr_db != f64::INFINITY {
        return Err(Error::invalid("noise", "at least one noise file is required"));
    }
    let items = test
        .items
        .iter()
        .enumerate()
        .map(|(i, (a, l))| {
            if snr_db == f64::INFINITY {
                return Ok((a.clone(), *l));
            }
            let n = &noise[i % noise.len()];
            let spec = NoiseSpec {
                noise: if n.sample_rate() == a.sample_rate() {
                    n.clone()
                } else {
                    resample(n, a.sample_rate())?
                },
                snr_db,
            };
            Ok((mix_noise(a, &spec, noise_seed(seed, i))?, *l))
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        items,
        labels: test.labels.clone(),
    })
}

/// Accuracy of a (clean-trained) model on noise-mixed copies of `test`, one per SNR.
/// `f64::INFINITY` yields the clean accuracy.
pub fn snr_sweep(
    model: &Pipeline,
    test: &Dataset,
    snrs: &[f64],
    noise: &[AudioBuffer],
    seed: u64,
    threads: usize,
) -> Result<Vec<(f64, EvalSummary)>> {
    if snrs.is_empty() {
        return Err(Error::invalid("snrs_db", "empty SNR list"));
    }
    snrs.iter()
        .map(|&snr| {
            let data = noisy_copy(test, noise, snr, seed)?;
            Ok((snr, evaluate(model, &prepare(model, &data)?, threads)?))
        })
        .collect()
}

/// Writes `<stem>.raster.csv` (events) and `<stem>.features.csv` (aligned frames).
pub fn export_raster(
    spikes: &SpikeTrain,
    features: &Spectrogram,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<(PathBuf, PathBuf)> {
    if spikes.steps() != features.frames {
        return Err(Error::Shape(format!(
            "raster has {} steps but features have {} frames",
            spikes.steps(),
            features.frames
        )));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let raster = dir.join(format!("{stem}.raster.csv"));
    let feats = dir.join(format!("{stem}.features.csv"));
    std::fs::write(&raster, raster_csv(spikes))?;
    std::fs::write(&feats, features_csv(features))?;
    Ok((raster, feats))
}
