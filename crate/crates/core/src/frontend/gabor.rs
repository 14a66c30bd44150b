//! Learnable complex Gabor filterbank applied as a "same"-padded 1-d convolution.
//!
//! Center frequencies are stored in cycles/sample behind a scaled sigmoid so they
//! stay inside `(0, 0.5)` (equivalently `(0, pi)` rad/sample); bandwidths are stored
//! as `ln(sigma)`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::tensor::{logit, sigmoid, Parameters};

pub const DEFAULT_FILTERS: usize = 40;
pub const DEFAULT_WINDOW: usize = 401;
const MEL_LOW_HZ: f64 = 60.0;
const MEL_HIGH_MARGIN_HZ: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GaborBank {
    /// Pre-sigmoid center frequency; `eta = 0.5 * sigmoid(eta_logit)` cycles/sample.
    pub eta_logit: Vec<f64>,
    /// `sigma = exp(log_sigma)` samples.
    pub log_sigma: Vec<f64>,
    pub window_len: usize,
    pub sample_rate: u32,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Gaussian time-domain std (samples) whose frequency response has the given
/// full width at half maximum (cycles/sample).
pub fn sigma_for_fwhm(fwhm_cycles: f64) -> f64 {
    (2.0 * LN_2).sqrt() / (PI * fwhm_cycles)
}

/// `exp(i 2 pi eta t) * exp(-t^2 / (2 sigma^2)) / (sqrt(2 pi) sigma)`, `eta` in cycles/sample.
pub fn gabor_impulse_response(eta: f64, sigma: f64, t: i64) -> Complex64 {
    let t = t as f64;
    let envelope = (-t * t / (2.0 * sigma * sigma)).exp() / ((2.0 * PI).sqrt() * sigma);
    Complex64::from_polar(envelope, 2.0 * PI * eta * t)
}

impl GaborBank {
    pub fn from_physical(eta: &[f64], sigma: &[f64], window_len: usize, sample_rate: u32) -> Result<Self> {
        if eta.len() != sigma.len() || eta.is_empty() {
            return Err(Error::Shape("eta and sigma must be equal-length and nonempty".into()));
        }
        if window_len % 2 == 0 {
            return Err(Error::invalid("window_len", "must be odd"));
        }
        if let Some(e) = eta.iter().find(|&&e| !(e > 0.0 && e < 0.5)) {
            return Err(Error::invalid("eta", format!("{e} outside (0, 0.5) cycles/sample")));
        }
        if sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        Ok(Self {
            eta_logit: eta.iter().map(|&e| logit(2.0 * e)).collect(),
            log_sigma: sigma.iter().map(|s| s.ln()).collect(),
            window_len,
            sample_rate,
        })
    }

    /// Mel-spaced centers between 60 Hz and `sample_rate/2 - 100` Hz, with each
    /// Gaussian's half-power width matched to its mel band.
    pub fn init_mel(n_filters: usize, sample_rate: u32, window_len: usize) -> Result<Self> {
        if n_filters == 0 {
            return Err(Error::invalid("n_filters", "must be at least 1"));
        }
        // A window of L taps resolves at most L/2 distinct frequencies.
        if n_filters > window_len / 2 {
            return Err(Error::invalid("n_filters", "more filters than the window can resolve"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let high = nyquist - MEL_HIGH_MARGIN_HZ;
        if high <= MEL_LOW_HZ {
            return Err(Error::invalid("sample_rate", "too low for the mel range"));
        }
        let (m_lo, m_hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(high));
        let (centers, step): (Vec<f64>, f64) = if n_filters == 1 {
            (vec![(m_lo + m_hi) / 2.0], (m_hi - m_lo) / 2.0)
        } else {
            let step = (m_hi - m_lo) / (n_filters - 1) as f64;
            ((0..n_filters).map(|i| m_lo + step * i as f64).collect(), step)
        };
        let sr = sample_rate as f64;
        let mut eta = Vec::with_capacity(n_filters);
        let mut sigma = Vec::with_capacity(n_filters);
        for &m in &centers {
            let fwhm_hz = (mel_to_hz(m + step) - mel_to_hz(m - step)) / 2.0;
            if fwhm_hz <= 0.0 || !fwhm_hz.is_finite() {
                return Err(Error::invalid("n_filters", "too many filters for the mel spacing"));
            }
            eta.push(mel_to_hz(m) / sr);
            sigma.push(sigma_for_fwhm(fwhm_hz / sr));
        }
        if eta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("n_filters", "too many filters for the mel spacing"));
        }
        Self::from_physical(&eta, &sigma, window_len, sample_rate)
    }

    pub fn n_filters(&self) -> usize {
        self.eta_logit.len()
    }

    pub fn half_window(&self) -> usize {
        self.window_len / 2
    }

    /// Center frequency in cycles/sample.
    pub fn eta(&self, n: usize) -> f64 {
        0.5 * sigmoid(self.eta_logit[n])
    }

    pub fn sigma(&self, n: usize) -> f64 {
        self.log_sigma[n].exp()
    }

    pub fn center_hz(&self, n: usize) -> f64 {
        self.eta(n) * self.sample_rate as f64
    }

    /// Filter taps for `t = -L/2 ..= L/2`.
    pub fn taps(&self, n: usize) -> Vec<Complex64> {
        let h = self.half_window() as i64;
        let (eta, sigma) = (self.eta(n), self.sigma(n));
        (-h..=h).map(|t| gabor_impulse_response(eta, sigma, t)).collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            eta_logit: vec![0.0; self.n_filters()],
            log_sigma: vec![0.0; self.n_filters()],
            window_len: self.window_len,
            sample_rate: self.sample_rate,
        }
    }

    /// Complex responses of every filter, each of the input's length.
    pub fn apply(&self, x: &AudioBuffer) -> Result<FilterResponses> {
        if x.len() < self.window_len {
            return Err(Error::TooShort {
                len: x.len(),
                window: self.window_len,
            });
        }
        let conv = SignalSpectrum::new(x.samples(), self.half_window());
        let columns = (0..self.n_filters()).map(|n| conv.convolve(&self.taps(n))).collect();
        Ok(FilterResponses {
            n_samples: x.len(),
            columns,
        })
    }

    /// Gradients w.r.t. `eta_logit` and `log_sigma` given `grad` (d loss / d Re + i d loss / d Im)
    /// of every response column.
    pub fn backward(&self, x: &AudioBuffer, grad: &FilterResponses) -> GaborBank {
        let conv = SignalSpectrum::new(x.samples(), self.half_window());
        let mut out = self.zeros_like();
        let h = self.half_window() as i64;
        for n in 0..self.n_filters() {
            // d loss / d phi(k) for k in [-h, h]
            let dphi = conv.correlate(&grad.columns[n], self.half_window());
            let (eta, sigma) = (self.eta(n), self.sigma(n));
            let (mut d_eta, mut d_sigma) = (0.0, 0.0);
            for (i, k) in (-h..=h).enumerate() {
                let phi = gabor_impulse_response(eta, sigma, k);
                let kf = k as f64;
                let dphi_deta = Complex64::new(0.0, 2.0 * PI * kf) * phi;
                let dphi_dsigma = phi * (kf * kf / (sigma * sigma * sigma) - 1.0 / sigma);
                d_eta += (dphi[i].conj() * dphi_deta).re;
                d_sigma += (dphi[i].conj() * dphi_dsigma).re;
            }
            let s = sigmoid(self.eta_logit[n]);
            out.eta_logit[n] = d_eta * 0.5 * s * (1.0 - s);
            out.log_sigma[n] = d_sigma * sigma;
        }
        out
    }
}

impl Parameters for GaborBank {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("gabor.eta_logit", &[self.n_filters()], &self.eta_logit);
        f("gabor.log_sigma", &[self.n_filters()], &self.log_sigma);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("gabor.eta_logit", &mut self.eta_logit);
        f("gabor.log_sigma", &mut self.log_sigma);
    }
}

/// Complex matrix `[samples x filters]` stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterResponses {
    pub n_samples: usize,
    pub columns: Vec<Vec<Complex64>>,
}

impl FilterResponses {
    pub fn zeros(n_samples: usize, n_filters: usize) -> Self {
        Self {
            n_samples,
            columns: vec![vec![Complex64::new(0.0, 0.0); n_samples]; n_filters],
        }
    }

    pub fn n_filters(&self) -> usize {
        self.columns.len()
    }
}

/// Direct "same" convolution, `y(tau) = sum_k x(tau - k) phi(k)`; used to check the FFT path.
pub fn convolve_direct(x: &[f64], taps: &[Complex64]) -> Vec<Complex64> {
    let h = (taps.len() / 2) as i64;
    let n = x.len() as i64;
    (0..n)
        .map(|tau| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, k) in (-h..=h).enumerate() {
                let j = tau - k;
                if (0..n).contains(&j) {
                    acc += taps[i] * x[j as usize];
                }
            }
            acc
        })
        .collect()
}

type FftPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

thread_local! {
    static PLANS: RefCell<HashMap<usize, FftPair>> = RefCell::new(HashMap::new());
}

fn plans(nfft: usize) -> FftPair {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry(nfft)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                (planner.plan_fft_forward(nfft), planner.plan_fft_inverse(nfft))
            })
            .clone()
    })
}

/// Smallest 5-smooth integer that is at least `n`.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Spectrum of a real signal, zero-padded so circular products equal linear
/// convolution over taps spanning `[-half, half]`.
struct SignalSpectrum {
    n: usize,
    nfft: usize,
    spectrum: Vec<Complex64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl SignalSpectrum {
    fn new(x: &[f64], half: usize) -> Self {
        let nfft = smooth_size(x.len() + 2 * half + 1);
        let (fwd, inv) = plans(nfft);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); nfft];
        for (s, &v) in spectrum.iter_mut().zip(x) {
            s.re = v;
        }
        fwd.process(&mut spectrum);
        Self {
            n: x.len(),
            nfft,
            spectrum,
            fwd,
            inv,
        }
    }

    fn convolve(&self, taps: &[Complex64]) -> Vec<Complex64> {
        let h = taps.len() / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nfft];
        for (i, &tap) in taps.iter().enumerate() {
            buf[(i + self.nfft - h) % self.nfft] = tap;
        }
        self.fwd.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.nfft as f64;
        buf.truncate(self.n);
        buf.iter_mut().for_each(|v| *v *= scale);
        buf
    }

    /// `c(k) = sum_tau g(tau) x(tau - k)` for `k = -half ..= half`.
    fn correlate(&self, g: &[Complex64], half: usize) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nfft];
        buf[..g.len()].copy_from_slice(g);
        self.fwd.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s.conj();
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.nfft as f64;
        (0..=2 * half)
            .map(|i| buf[(i + self.nfft - half) % self.nfft] * scale)
            .collect()
    }
}
