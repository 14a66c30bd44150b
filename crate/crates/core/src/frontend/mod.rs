//! Learnable time-frequency analysis: Gabor filterbank, energy pooling and PCEN.

pub mod gabor;
pub mod pcen;
pub mod pool;

pub use gabor::{gabor_impulse_response, FilterResponses, GaborBank};
pub use pcen::{pcen_backward, pcen_forward, PcenForm, PcenParams, PcenState};
pub use pool::{energy_pool, frame_count};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::tensor::Parameters;

/// 25 ms at 16 kHz.
pub const DEFAULT_POOL_WINDOW: usize = 400;
/// 10 ms at 16 kHz.
pub const DEFAULT_HOP: usize = 160;

/// Real matrix `[frames x channels]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub hop: usize,
}

impl Spectrogram {
    pub fn new(frames: usize, channels: usize, values: Vec<f64>, hop: usize) -> Self {
        assert_eq!(values.len(), frames * channels, "spectrogram shape");
        Self {
            frames,
            channels,
            values,
            hop,
        }
    }

    pub fn zeros(frames: usize, channels: usize, hop: usize) -> Self {
        Self::new(frames, channels, vec![0.0; frames * channels], hop)
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.channels + c]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.channels)
    }
}

/// Gabor filterbank followed by energy pooling and PCEN, trained end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableFrontend {
    pub bank: GaborBank,
    pub pcen: PcenParams,
    pub pool_window: usize,
    pub hop: usize,
}

pub struct FrontendCache {
    responses: FilterResponses,
    energy: Spectrogram,
    pcen: pcen::PcenCache,
}

impl FrontendCache {
    pub fn energy(&self) -> &Spectrogram {
        &self.energy
    }
}

impl LearnableFrontend {
    pub fn new(n_filters: usize, sample_rate: u32, form: PcenForm) -> Result<Self> {
        Ok(Self {
            bank: GaborBank::init_mel(n_filters, sample_rate, gabor::DEFAULT_WINDOW)?,
            pcen: PcenParams::leaf_default(n_filters, form),
            pool_window: DEFAULT_POOL_WINDOW,
            hop: DEFAULT_HOP,
        })
    }

    pub fn channels(&self) -> usize {
        self.bank.n_filters()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            bank: self.bank.zeros_like(),
            pcen: self.pcen.zeros_like(),
            pool_window: self.pool_window,
            hop: self.hop,
        }
    }

    /// Pooled filterbank energies before compression.
    pub fn energy(&self, x: &AudioBuffer) -> Result<Spectrogram> {
        let responses = self.bank.apply(x)?;
        energy_pool(&responses, self.pool_window, self.hop)
    }

    pub fn forward(&self, x: &AudioBuffer) -> Result<(Spectrogram, FrontendCache)> {
        if x.sample_rate() != self.bank.sample_rate {
            return Err(Error::SampleRateMismatch(x.sample_rate(), self.bank.sample_rate));
        }
        let window = self.pool_window.max(self.bank.window_len);
        if x.len() < window {
            return Err(Error::TooShort { len: x.len(), window });
        }
        let responses = self.bank.apply(x)?;
        let energy = energy_pool(&responses, self.pool_window, self.hop)?;
        // M is seeded with the first frame so the recurrence starts without a transient.
        let m0 = PcenState {
            m: energy.frame(0).to_vec(),
        };
        let (out, pcen) = pcen::pcen_forward_cached(&energy, &self.pcen, &m0)?;
        Ok((
            out,
            FrontendCache {
                responses,
                energy,
                pcen,
            },
        ))
    }

    pub fn backward(&self, x: &AudioBuffer, cache: &FrontendCache, grad: &Spectrogram) -> Self {
        let (mut d_energy, d_m0, d_pcen) = pcen_backward(&cache.energy, &self.pcen, &cache.pcen, grad);
        for (c, g) in d_m0.iter().enumerate() {
            d_energy.values[c] += g;
        }
        let d_resp = pool::energy_pool_backward(&cache.responses, &d_energy, self.pool_window, self.hop);
        Self {
            bank: self.bank.backward(x, &d_resp),
            pcen: d_pcen,
            pool_window: self.pool_window,
            hop: self.hop,
        }
    }
}

impl Parameters for LearnableFrontend {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.bank.visit(f);
        self.pcen.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.bank.visit_mut(f);
        self.pcen.visit_mut(f);
    }
}
