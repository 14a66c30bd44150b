//! Serializable configuration. Every field has a default so partial JSON files work;
//! unknown fields are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::error::{Error, Result};
use crate::frontend::PcenForm;
use crate::neurons::SurrogateSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Fbank,
    #[default]
    Learnable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NeuronKind {
    Lif,
    TcLif,
    #[default]
    IhcLif,
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureKind::Fbank => "fbank",
            FeatureKind::Learnable => "learnable",
        })
    }
}

impl std::fmt::Display for NeuronKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NeuronKind::Lif => "LIF",
            NeuronKind::TcLif => "TC-LIF",
            NeuronKind::IhcLif => "IHC-LIF",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcenConfig {
    pub form: PcenForm,
    pub alpha: f64,
    /// `None` picks a form-dependent initial value, see [`PcenConfig::initial_delta`].
    pub delta: Option<f64>,
    pub r: f64,
    pub s: f64,
    pub eps: f64,
    pub train_eps: bool,
}

impl PcenConfig {
    /// 2 for the standard form (the usual PCEN value). In the `Paper` form delta sits next
    /// to `M^alpha` in the denominator, and with delta = 2 the output of normally scaled
    /// audio is pinned near `-sqrt(2)`; 1e-3 keeps the adaptive gain in play.
    pub fn initial_delta(&self) -> f64 {
        self.delta.unwrap_or(match self.form {
            PcenForm::Paper => 1e-3,
            PcenForm::Standard => 2.0,
        })
    }
}

impl Default for PcenConfig {
    fn default() -> Self {
        Self {
            form: PcenForm::Paper,
            alpha: 0.96,
            delta: None,
            r: 0.5,
            s: 0.04,
            eps: 1e-6,
            train_eps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Diagonal of the initial input weights (one neuron per channel).
    pub input_gain: f64,
    /// Half-width of the uniform noise added to the initial input weights.
    pub input_noise: f64,
    /// Initial bias.
    pub bias: f64,
    /// Initial decay for LIF encoders.
    pub beta: f64,
    /// Encoder width; `None` means one neuron per filter channel.
    pub neurons: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_gain: 1.0,
            input_noise: 0.05,
            bias: 0.0,
            beta: 0.8,
            neurons: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub feature: FeatureKind,
    pub n_filters: usize,
    pub sample_rate: u32,
    pub pcen: PcenConfig,
    pub neuron: NeuronKind,
    /// Lateral feedback `I_f` (IHC-LIF only).
    pub use_if: bool,
    /// Lateral inhibition `I_LI` (IHC-LIF only).
    pub use_ili: bool,
    pub encoder: EncoderConfig,
    pub surrogate: SurrogateSpec,
    pub classifier: ClassifierConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            feature: FeatureKind::Learnable,
            n_filters: 40,
            sample_rate: 16_000,
            pcen: PcenConfig::default(),
            neuron: NeuronKind::IhcLif,
            use_if: true,
            use_ili: true,
            encoder: EncoderConfig::default(),
            surrogate: SurrogateSpec::default(),
            classifier: ClassifierConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn encoder_width(&self) -> usize {
        self.encoder.neurons.unwrap_or(self.n_filters)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_filters == 0 {
            return Err(Error::invalid("pipeline.n_filters", "must be positive"));
        }
        if self.encoder.neurons == Some(0) {
            return Err(Error::invalid("pipeline.encoder.neurons", "must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid("pipeline.sample_rate", "must be positive"));
        }
        if self.neuron != NeuronKind::IhcLif && (self.use_if || self.use_ili) {
            return Err(Error::invalid(
                "pipeline.use_if",
                format!("lateral pathways require IHC-LIF, not {}", self.neuron),
            ));
        }
        self.surrogate
            .validate()
            .map_err(|_| Error::invalid("pipeline.surrogate.scale", "must be positive"))?;
        self.classifier.validate().map_err(|e| match e {
            Error::InvalidArgument { field, reason } => Error::invalid(format!("pipeline.{field}"), reason),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda: f64,
    pub target_sr: f64,
    /// Whether the spike-rate penalty is applied at all.
    pub use_lsr: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            target_sr: 0.1,
            use_lsr: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("loss.lambda", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.target_sr) {
            return Err(Error::invalid("loss.target_sr", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn effective_lambda(&self) -> f64 {
        if self.use_lsr {
            self.lambda
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiply the learning rate by `lr_decay` every `lr_decay_every` epochs (0 disables).
    pub lr_decay_every: usize,
    pub lr_decay: f64,
    /// Learning-rate multiplier for the Gabor and PCEN parameters.
    pub frontend_lr_scale: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            batch_size: 16,
            epochs: 10,
            lr_decay_every: 0,
            lr_decay: 0.5,
            frontend_lr_scale: 1.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("optim.learning_rate", "must be finite and >= 0"));
        }
        if !(self.frontend_lr_scale >= 0.0 && self.frontend_lr_scale.is_finite()) {
            return Err(Error::invalid("optim.frontend_lr_scale", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("optim.batch_size", "must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("optim.clip_norm", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("optim.beta1", "Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.lr_decay_every == 0 {
            self.learning_rate
        } else {
            self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
        }
    }
}

/// Everything a CLI run needs. CLI flags override values loaded from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub noise: Vec<PathBuf>,
    pub snrs_db: Vec<f64>,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub pipeline: PipelineConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_manifest: None,
            test_manifest: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            noise: Vec::new(),
            snrs_db: vec![20.0, 10.0, 5.0, 0.0, -5.0],
            seed: 0,
            seeds: Vec::new(),
            threads: 1,
            pipeline: PipelineConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(json_field(&e), e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        if self.threads == 0 {
            return Err(Error::invalid("threads", "must be positive"));
        }
        for (field, path) in [
            ("train_manifest", &self.train_manifest),
            ("test_manifest", &self.test_manifest),
            ("checkpoint", &self.checkpoint),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::invalid(field, format!("{} does not exist", p.display())));
                }
            }
        }
        for (i, p) in self.noise.iter().enumerate() {
            if !p.exists() {
                return Err(Error::invalid(
                    format!("noise[{i}]"),
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        Ok(())
    }

    pub fn require<'a>(&self, field: &'static str, value: &'a Option<PathBuf>) -> Result<&'a PathBuf> {
        value.as_ref().ok_or_else(|| Error::invalid(field, "required"))
    }

    /// Seeds for multi-seed commands; falls back to the single run seed.
    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }
}

/// Best-effort field name from a serde error message (`unknown field `x``).
fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".into())
}
