//! The end-to-end model: features (learnable or fixed fbank) -> spiking encoder ->
//! spiking classifier, with a full reverse pass through all three.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{sr_loss, LossWeights};
use crate::audio::AudioBuffer;
use crate::classifier::{argmax, cross_entropy, Classifier};
use crate::config::{FeatureKind, NeuronKind, PipelineConfig};
use crate::error::{Error, Result};
use crate::evaluation::fbank::MelFilterbank;
use crate::frontend::{FrontendCache, LearnableFrontend, PcenParams, Spectrogram};
use crate::neurons::{project_constraints, IhcLifLayer, LateralMask, LifLayer, SpikeFn, SpikeMode};
use crate::spikes::SpikeTrain;
use crate::tensor::{Matrix, Parameters};

/// RNG streams, so every ablation cell draws its classifier init and data order identically.
pub const STREAM_CLASSIFIER: u64 = 1;
pub const STREAM_ENCODER: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Lif(LifLayer),
    /// TC-LIF (no active lateral pathways) or IHC-LIF.
    TwoCompartment(IhcLifLayer),
}

impl Encoder {
    pub fn n_out(&self) -> usize {
        match self {
            Encoder::Lif(l) => l.n_out(),
            Encoder::TwoCompartment(l) => l.n_out(),
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            Encoder::Lif(l) => Encoder::Lif(l.zeros_like()),
            Encoder::TwoCompartment(l) => Encoder::TwoCompartment(l.zeros_like()),
        }
    }
}

/// One utterance ready for the model. `features` caches the fixed fbank input.
#[derive(Debug, Clone)]
pub struct Example {
    pub audio: AudioBuffer,
    pub label: usize,
    pub features: Option<Spectrogram>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub frontend: Option<LearnableFrontend>,
    pub fbank: Option<MelFilterbank>,
    pub encoder: Encoder,
    pub classifier: Classifier,
}

/// Result of one forward/backward pass on a single example.
#[derive(Debug, Clone)]
pub struct ExampleOutcome {
    pub loss: f64,
    pub l_cls: f64,
    pub l_sr: f64,
    pub rate: f64,
    pub correct: bool,
    pub grads: Pipeline,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub label: usize,
    pub logits: Vec<f64>,
    pub spikes: SpikeTrain,
    pub rate: f64,
    pub features: Spectrogram,
}

struct Forward {
    features: Spectrogram,
    frontend_cache: Option<FrontendCache>,
    enc_input: Vec<Vec<f64>>,
    enc_cache: EncoderCache,
    spikes: Vec<Vec<f64>>,
    logits: Vec<f64>,
    cls_cache: crate::classifier::ClassifierCache,
}

enum EncoderCache {
    Lif(crate::neurons::LifSeqCache),
    Tc(crate::neurons::TcSeqCache),
}

impl Pipeline {
    pub fn init(config: &PipelineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.n_filters;
        let (frontend, fbank) = match config.feature {
            FeatureKind::Learnable => {
                let mut fe = LearnableFrontend::new(n, config.sample_rate, config.pcen.form)?;
                let p = &config.pcen;
                fe.pcen = PcenParams::new(n, p.alpha, p.initial_delta(), p.r, p.s, p.eps, p.form)?;
                fe.pcen.train_eps = p.train_eps;
                (Some(fe), None)
            }
            FeatureKind::Fbank => (None, Some(MelFilterbank::new(n, config.sample_rate)?)),
        };
        let enc = &config.encoder;
        let m = config.encoder_width();
        let mut enc_rng = stream_rng(seed, STREAM_ENCODER);
        let encoder = match config.neuron {
            NeuronKind::Lif => {
                let two = IhcLifLayer::init(n, m, enc.input_gain, enc.input_noise, LateralMask::NONE, &mut enc_rng);
                Encoder::Lif(LifLayer::new(two.core.w, vec![enc.bias; m], vec![enc.beta; m], 1.0)?)
            }
            NeuronKind::TcLif | NeuronKind::IhcLif => {
                let mask = LateralMask {
                    feedback: config.use_if,
                    inhibition: config.use_ili,
                };
                let mut l = IhcLifLayer::init(n, m, enc.input_gain, enc.input_noise, mask, &mut enc_rng);
                l.core.b = vec![enc.bias; m];
                Encoder::TwoCompartment(l)
            }
        };
        let classifier = Classifier::init(&config.classifier, m, &mut stream_rng(seed, STREAM_CLASSIFIER))?;
        Ok(Self {
            config: config.clone(),
            frontend,
            fbank,
            encoder,
            classifier,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            frontend: self.frontend.as_ref().map(LearnableFrontend::zeros_like),
            fbank: None,
            encoder: self.encoder.zeros_like(),
            classifier: self.classifier.zeros_like(),
        }
    }

    pub fn channels(&self) -> usize {
        self.config.n_filters
    }

    pub fn spike_fn(&self, mode: SpikeMode) -> SpikeFn {
        SpikeFn {
            mode,
            surrogate: self.config.surrogate,
        }
    }

    /// Fixed fbank features (per-utterance standardized log-mel); `None` for the learnable front-end.
    pub fn fixed_features(&self, audio: &AudioBuffer) -> Result<Option<Spectrogram>> {
        match &self.fbank {
            Some(bank) => {
                let mut f = bank.log_energies(audio)?;
                standardize(&mut f);
                Ok(Some(f))
            }
            None => Ok(None),
        }
    }

    pub fn example(&self, audio: AudioBuffer, label: usize) -> Result<Example> {
        let features = self.fixed_features(&audio)?;
        Ok(Example { audio, label, features })
    }

    /// Features fed to the encoder.
    pub fn features(&self, audio: &AudioBuffer) -> Result<Spectrogram> {
        match &self.frontend {
            Some(fe) => Ok(fe.forward(audio)?.0),
            None => Ok(self.fixed_features(audio)?.expect("fbank pipeline")),
        }
    }

    fn forward(&self, ex: &Example, spike: &SpikeFn) -> Result<Forward> {
        let (features, frontend_cache) = match (&self.frontend, &ex.features) {
            (Some(fe), _) => {
                let (f, c) = fe.forward(&ex.audio)?;
                (f, Some(c))
            }
            (None, Some(f)) => (f.clone(), None),
            (None, None) => (self.fixed_features(&ex.audio)?.expect("fbank pipeline"), None),
        };
        if features.channels != self.channels() {
            return Err(Error::Shape(format!(
                "features have {} channels, model expects {}",
                features.channels,
                self.channels()
            )));
        }
        let enc_input: Vec<Vec<f64>> = (0..features.frames).map(|t| features.frame(t).to_vec()).collect();
        let (enc_cache, spikes) = match &self.encoder {
            Encoder::Lif(l) => {
                let c = l.forward_seq(&enc_input, spike);
                let s: Vec<Vec<f64>> = c.spikes().cloned().collect();
                (EncoderCache::Lif(c), s)
            }
            Encoder::TwoCompartment(l) => {
                let c = l.forward_seq(&enc_input, spike);
                let s: Vec<Vec<f64>> = c.spikes().cloned().collect();
                (EncoderCache::Tc(c), s)
            }
        };
        let (logits, cls_cache) = self.classifier.forward(&spikes, spike);
        Ok(Forward {
            features,
            frontend_cache,
            enc_input,
            enc_cache,
            spikes,
            logits,
            cls_cache,
        })
    }

    pub fn predict(&self, audio: &AudioBuffer) -> Result<Prediction> {
        let ex = self.example(audio.clone(), 0)?;
        self.predict_example(&ex)
    }

    pub fn predict_example(&self, ex: &Example) -> Result<Prediction> {
        let fwd = self.forward(ex, &self.spike_fn(SpikeMode::Hard))?;
        let spikes = SpikeTrain::from_rows(&fwd.spikes)?;
        Ok(Prediction {
            label: argmax(&fwd.logits),
            rate: rate_of(&fwd.spikes),
            logits: fwd.logits,
            spikes,
            features: fwd.features,
        })
    }

    /// Loss `w.cls * CE + w.lambda * ReLU(R - SR)` and its gradient for one example.
    pub fn loss_and_grad(&self, ex: &Example, weights: &LossWeights, mode: SpikeMode) -> Result<ExampleOutcome> {
        let spike = self.spike_fn(mode);
        let fwd = self.forward(ex, &spike)?;
        let (l_cls, d_logits) = cross_entropy(&fwd.logits, ex.label);
        let rate = rate_of(&fwd.spikes);
        let l_sr = sr_loss(rate, weights.target_sr);
        let loss = weights.cls * l_cls + weights.lambda * l_sr;

        let d_logits: Vec<f64> = d_logits.iter().map(|g| g * weights.cls).collect();
        let (cls_grads, mut d_spikes) = self.classifier.backward(&fwd.cls_cache, &d_logits, &spike);
        if weights.lambda > 0.0 && rate > weights.target_sr {
            let total = (fwd.spikes.len() * self.encoder.n_out()) as f64;
            let g = weights.lambda / total;
            d_spikes.iter_mut().flatten().for_each(|d| *d += g);
        }
        let (enc_grads, d_features) = match (&self.encoder, &fwd.enc_cache) {
            (Encoder::Lif(l), EncoderCache::Lif(c)) => {
                let (g, d) = l.backward_seq(&fwd.enc_input, c, &d_spikes, &[], &spike);
                (Encoder::Lif(g), d)
            }
            (Encoder::TwoCompartment(l), EncoderCache::Tc(c)) => {
                let (g, d) = l.backward_seq(&fwd.enc_input, c, &d_spikes, &spike);
                (Encoder::TwoCompartment(g), d)
            }
            _ => unreachable!("encoder cache matches encoder"),
        };
        let frontend_grads = match (&self.frontend, &fwd.frontend_cache) {
            (Some(fe), Some(cache)) => {
                let d_feat = Spectrogram::new(
                    fwd.features.frames,
                    fwd.features.channels,
                    d_features.into_iter().flatten().collect(),
                    fwd.features.hop,
                );
                Some(fe.backward(&ex.audio, cache, &d_feat))
            }
            _ => None,
        };
        Ok(ExampleOutcome {
            loss,
            l_cls,
            l_sr,
            rate,
            correct: argmax(&fwd.logits) == ex.label,
            grads: Pipeline {
                config: self.config.clone(),
                frontend: frontend_grads,
                fbank: None,
                encoder: enc_grads,
                classifier: cls_grads,
            },
        })
    }

    /// Lateral-weight constraints; a no-op for other encoders.
    pub fn project(&mut self) {
        if let Encoder::TwoCompartment(l) = &mut self.encoder {
            let taken = std::mem::replace(l, IhcLifLayer::from_core(l.core.clone(), l.mask));
            *l = project_constraints(taken);
        }
    }

    pub fn lateral_weights(&self) -> Option<(&Matrix, &Matrix)> {
        match &self.encoder {
            Encoder::TwoCompartment(l) => Some((&l.w_f, &l.w_li)),
            Encoder::Lif(_) => None,
        }
    }
}

fn rate_of(spikes: &[Vec<f64>]) -> f64 {
    let n: usize = spikes.iter().map(Vec::len).sum();
    if n == 0 {
        return 0.0;
    }
    spikes.iter().flatten().sum::<f64>() / n as f64
}

/// Zero mean, unit variance over all entries.
pub fn standardize(f: &mut Spectrogram) {
    let n = f.values.len() as f64;
    let mean = f.values.iter().sum::<f64>() / n;
    let var = f.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    f.values.iter_mut().for_each(|v| *v = (*v - mean) / std);
}

impl Parameters for Pipeline {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        if let Some(fe) = &self.frontend {
            fe.visit(f);
        }
        match &self.encoder {
            Encoder::Lif(l) => l.visit(&mut |name, shape, data| f(&format!("encoder.{name}"), shape, data)),
            Encoder::TwoCompartment(l) => l.visit(&mut |name, shape, data| f(&format!("encoder.{name}"), shape, data)),
        }
        self.classifier.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        if let Some(fe) = &mut self.frontend {
            fe.visit_mut(f);
        }
        match &mut self.encoder {
            Encoder::Lif(l) => l.visit_mut(&mut |name, data| f(&format!("encoder.{name}"), data)),
            Encoder::TwoCompartment(l) => l.visit_mut(&mut |name, data| f(&format!("encoder.{name}"), data)),
        }
        self.classifier.visit_mut(f);
    }
}
