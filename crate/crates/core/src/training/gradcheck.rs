//! Central finite differences against the hand-written reverse passes.
//!
//! Spiking paths are checked in [`SpikeMode::Relaxed`], where the forward spike is
//! the surrogate's antiderivative and the analytic gradient is therefore exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::LossWeights;
use super::pipeline::{Encoder, Example, Pipeline};
use crate::audio::AudioBuffer;
use crate::classifier::{cross_entropy, Classifier, ClassifierConfig};
use crate::config::{FeatureKind, NeuronKind, PipelineConfig};
use crate::error::{Error, Result};
use crate::frontend::{LearnableFrontend, PcenForm};
use crate::neurons::{IhcLifLayer, LateralMask, SpikeFn, SpikeMode, SurrogateSpec};
use crate::tensor::Parameters;

/// Gradients below this magnitude are compared absolutely rather than relatively.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorError {
    pub tensor: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub epsilon: f64,
    pub checked: usize,
    pub passed: bool,
    pub worst: Option<WorstEntry>,
    pub per_tensor: Vec<TensorError>,
}

/// Finite-difference stencil. Both are central; the five-point one cancels the
/// third-derivative error term and is used where a sub-1e-6 match is expected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Stencil {
    #[default]
    ThreePoint,
    FivePoint,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares `grad` (same layout as `params`) against central differences of `loss`
/// on every scalar of every tensor.
pub fn finite_diff_check<P, F>(params: &P, grad: &P, loss: F, epsilon: f64, tolerance: f64) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: Fn(&P) -> Result<f64>,
{
    finite_diff_check_with(params, grad, loss, epsilon, tolerance, Stencil::ThreePoint)
}

pub fn finite_diff_check_with<P, F>(
    params: &P,
    grad: &P,
    loss: F,
    epsilon: f64,
    tolerance: f64,
    stencil: Stencil,
) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: Fn(&P) -> Result<f64>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", "must be positive and finite"));
    }
    if !(tolerance > 0.0) {
        return Err(Error::invalid("tolerance", "must be positive"));
    }
    let analytic = grad.flat_values();
    let base = params.flat_values();
    if analytic.len() != base.len() {
        return Err(Error::Shape(format!(
            "gradient has {} values, parameters {}",
            analytic.len(),
            base.len()
        )));
    }
    let mut names = Vec::new();
    params.visit(&mut |name, _, data| names.push((name.to_string(), data.len())));

    let mut probe = params.clone();
    let mut values = base.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        tolerance,
        epsilon,
        checked: 0,
        passed: true,
        worst: None,
        per_tensor: Vec::with_capacity(names.len()),
    };
    let mut off = 0;
    for (name, len) in names {
        let mut tensor_max = 0.0f64;
        for i in 0..len {
            let k = off + i;
            let mut at = |h: f64| -> Result<f64> {
                values[k] = base[k] + h;
                probe.set_flat_values(&values);
                let v = loss(&probe);
                values[k] = base[k];
                v
            };
            let numeric = match stencil {
                Stencil::ThreePoint => (at(epsilon)? - at(-epsilon)?) / (2.0 * epsilon),
                Stencil::FivePoint => {
                    let (p1, m1) = (at(epsilon)?, at(-epsilon)?);
                    let (p2, m2) = (at(2.0 * epsilon)?, at(-2.0 * epsilon)?);
                    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * epsilon)
                }
            };
            let err = relative_error(analytic[k], numeric);
            if !err.is_finite() {
                return Err(Error::invalid(
                    "gradcheck",
                    format!("non-finite difference at {name}[{i}]"),
                ));
            }
            tensor_max = tensor_max.max(err);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some(WorstEntry {
                    tensor: name.clone(),
                    index: i,
                    analytic: analytic[k],
                    numeric,
                });
            }
            report.checked += 1;
        }
        report.per_tensor.push(TensorError {
            tensor: name,
            max_rel_error: tensor_max,
        });
        off += len;
    }
    report.passed = report.max_rel_error <= tolerance;
    Ok(report)
}

fn tone_and_noise(len: usize, sample_rate: u32, rng: &mut impl Rng) -> Result<AudioBuffer> {
    let f0 = rng.gen_range(300.0..3000.0);
    let samples = (0..len)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            0.5 * (2.0 * std::f64::consts::PI * f0 * t).sin() + 0.1 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    AudioBuffer::new(samples, sample_rate)
}

/// Front-end only, followed by a fixed random linear readout: no spikes anywhere.
pub fn check_frontend(
    n_filters: usize,
    frames: usize,
    seed: u64,
    epsilon: f64,
    tolerance: f64,
    stencil: Stencil,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fe = LearnableFrontend::new(n_filters, 16_000, PcenForm::Paper)?;
    let len = fe.pool_window + (frames.max(1) - 1) * fe.hop;
    let audio = tone_and_noise(len, 16_000, &mut rng)?;
    let readout: Vec<f64> = (0..frames * n_filters).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let objective = |p: &LearnableFrontend| -> Result<f64> {
        let (out, _) = p.forward(&audio)?;
        Ok(out.values.iter().zip(&readout).map(|(a, b)| a * b).sum())
    };
    let (out, cache) = fe.forward(&audio)?;
    let grad_out = crate::frontend::Spectrogram::new(out.frames, out.channels, readout.clone(), out.hop);
    let grad = fe.backward(&audio, &cache, &grad_out);
    finite_diff_check_with(&fe, &grad, objective, epsilon, tolerance, stencil)
}

fn random_lateral(layer: &mut IhcLifLayer, rng: &mut impl Rng) {
    let n = layer.n_out();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                layer.w_f.set(i, j, rng.gen_range(-0.4..0.4));
                layer.w_li.set(i, j, rng.gen_range(0.05..0.4));
            }
        }
    }
}

/// One IHC-LIF layer unrolled over `steps`, loss = sum of relaxed spikes.
pub fn check_encoder(n: usize, steps: usize, seed: u64, epsilon: f64, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = IhcLifLayer::init(n, n, 1.2, 0.3, LateralMask::ALL, &mut rng);
    random_lateral(&mut layer, &mut rng);
    let input: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..n).map(|_| rng.gen_range(0.0..1.5)).collect())
        .collect();
    let spike = SpikeFn {
        mode: SpikeMode::Relaxed,
        surrogate: SurrogateSpec::sigmoid(4.0),
    };
    let objective = |p: &IhcLifLayer| -> Result<f64> { Ok(p.forward_seq(&input, &spike).spikes().flatten().sum()) };
    let cache = layer.forward_seq(&input, &spike);
    let ones = vec![vec![1.0; n]; steps];
    let (grad, _) = layer.backward_seq(&input, &cache, &ones, &spike);
    finite_diff_check(&layer, &grad, objective, epsilon, tolerance)
}

/// Spiking classifier on a random binary raster, loss = cross-entropy.
pub fn check_classifier(
    layer_sizes: &[usize],
    steps: usize,
    seed: u64,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_in = 4;
    let config = ClassifierConfig {
        layer_sizes: layer_sizes.to_vec(),
        n_classes: 3,
        ..ClassifierConfig::default()
    };
    let clf = Classifier::init(&config, n_in, &mut rng)?;
    let input: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..n_in).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect())
        .collect();
    let label = rng.gen_range(0..config.n_classes);
    let spike = SpikeFn {
        mode: SpikeMode::Relaxed,
        surrogate: SurrogateSpec::sigmoid(4.0),
    };
    let objective = |p: &Classifier| -> Result<f64> { Ok(cross_entropy(&p.forward(&input, &spike).0, label).0) };
    let (logits, cache) = clf.forward(&input, &spike);
    let (_, d_logits) = cross_entropy(&logits, label);
    let (grad, _) = clf.backward(&cache, &d_logits, &spike);
    finite_diff_check(&clf, &grad, objective, epsilon, tolerance)
}

/// The smallest end-to-end model: 4 Gabor filters, PCEN, 3 IHC-LIF neurons with
/// nonzero lateral weights, one hidden layer of 3 and a 2-class readout.
pub fn tiny_pipeline_config() -> PipelineConfig {
    let mut c = PipelineConfig {
        feature: FeatureKind::Learnable,
        n_filters: 4,
        neuron: NeuronKind::IhcLif,
        use_if: true,
        use_ili: true,
        surrogate: SurrogateSpec::sigmoid(4.0),
        ..PipelineConfig::default()
    };
    c.encoder.neurons = Some(3);
    c.encoder.input_gain = 3.0;
    c.encoder.input_noise = 0.5;
    c.encoder.bias = 1.0;
    c.classifier.layer_sizes = vec![3];
    c.classifier.n_classes = 2;
    c
}

/// Full pipeline over `frames` frames, loss = CE + lambda * spike-rate penalty.
pub fn check_pipeline(
    config: &PipelineConfig,
    frames: usize,
    seed: u64,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut pipeline = Pipeline::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    if let Encoder::TwoCompartment(l) = &mut pipeline.encoder {
        let mut lateral = l.clone();
        random_lateral(&mut lateral, &mut rng);
        l.w_f = if l.mask.feedback { lateral.w_f } else { l.w_f.clone() };
        l.w_li = if l.mask.inhibition {
            lateral.w_li
        } else {
            l.w_li.clone()
        };
    }
    let len = crate::frontend::DEFAULT_POOL_WINDOW + (frames.max(1) - 1) * crate::frontend::DEFAULT_HOP;
    let audio = tone_and_noise(len, config.sample_rate, &mut rng)?;
    let label = rng.gen_range(0..config.classifier.n_classes);
    let ex: Example = pipeline.example(audio, label)?;
    // Target 0 keeps the rate penalty on its linear branch.
    let weights = LossWeights {
        cls: 1.0,
        lambda: 1.0,
        target_sr: 0.0,
    };
    let outcome = pipeline.loss_and_grad(&ex, &weights, SpikeMode::Relaxed)?;
    let objective = |p: &Pipeline| -> Result<f64> { Ok(p.loss_and_grad(&ex, &weights, SpikeMode::Relaxed)?.loss) };
    finite_diff_check(&pipeline, &outcome.grads, objective, epsilon, tolerance)
}
