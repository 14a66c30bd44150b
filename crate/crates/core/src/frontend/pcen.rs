//! Per-channel energy normalization with a trainable smoothing rate.
//!
//! `M(t) = (1 - s) M(t-1) + s F(t)` feeds one of two compression forms:
//!
//! * [`PcenForm::Paper`]: `(F / ((eps + M)^alpha + delta))^r - delta^r`
//! * [`PcenForm::Standard`]: `(F / (eps + M)^alpha + delta)^r - delta^r`
//!
//! `alpha`, `delta`, `r` and `eps` are stored as logarithms and `s` as a logit, so
//! any gradient step keeps them in range.

use serde::{Deserialize, Serialize};

use super::Spectrogram;
use crate::error::{Error, Result};
use crate::tensor::{logit, sigmoid, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PcenForm {
    #[default]
    Paper,
    Standard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcenParams {
    pub log_alpha: Vec<f64>,
    pub log_delta: Vec<f64>,
    pub log_r: Vec<f64>,
    pub s_logit: f64,
    pub log_eps: f64,
    pub form: PcenForm,
    /// When false, `eps` is a fixed constant and not listed among the trainable tensors.
    pub train_eps: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcenState {
    pub m: Vec<f64>,
}

impl PcenParams {
    pub fn new(n: usize, alpha: f64, delta: f64, r: f64, s: f64, eps: f64, form: PcenForm) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("delta", delta), ("r", r), ("eps", eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::invalid("s", "must lie in (0, 1)"));
        }
        Ok(Self {
            log_alpha: vec![alpha.ln(); n],
            log_delta: vec![delta.ln(); n],
            log_r: vec![r.ln(); n],
            s_logit: logit(s),
            log_eps: eps.ln(),
            form,
            train_eps: false,
        })
    }

    /// LEAF-style initial values: alpha 0.96, delta 2, r 0.5, s 0.04, eps 1e-6.
    pub fn leaf_default(n: usize, form: PcenForm) -> Self {
        Self::new(n, 0.96, 2.0, 0.5, 0.04, 1e-6, form).expect("valid defaults")
    }

    pub fn channels(&self) -> usize {
        self.log_alpha.len()
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.log_alpha[n].exp()
    }

    pub fn delta(&self, n: usize) -> f64 {
        self.log_delta[n].exp()
    }

    pub fn r(&self, n: usize) -> f64 {
        self.log_r[n].exp()
    }

    pub fn s(&self) -> f64 {
        sigmoid(self.s_logit)
    }

    pub fn eps(&self) -> f64 {
        self.log_eps.exp()
    }

    pub fn zeros_like(&self) -> Self {
        let n = self.channels();
        Self {
            log_alpha: vec![0.0; n],
            log_delta: vec![0.0; n],
            log_r: vec![0.0; n],
            s_logit: 0.0,
            log_eps: 0.0,
            form: self.form,
            train_eps: self.train_eps,
        }
    }

    /// Output for one element given the smoothed energy `m`.
    pub fn compress(&self, f: f64, m: f64, n: usize) -> f64 {
        let (alpha, delta, r, eps) = (self.alpha(n), self.delta(n), self.r(n), self.eps());
        let gain = (eps + m).powf(alpha);
        match self.form {
            PcenForm::Paper => (f / (gain + delta)).powf(r) - delta.powf(r),
            PcenForm::Standard => (f / gain + delta).powf(r) - delta.powf(r),
        }
    }
}

impl Parameters for PcenParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let n = self.channels();
        f("pcen.log_alpha", &[n], &self.log_alpha);
        f("pcen.log_delta", &[n], &self.log_delta);
        f("pcen.log_r", &[n], &self.log_r);
        f("pcen.s_logit", &[1], std::slice::from_ref(&self.s_logit));
        if self.train_eps {
            f("pcen.log_eps", &[1], std::slice::from_ref(&self.log_eps));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("pcen.log_alpha", &mut self.log_alpha);
        f("pcen.log_delta", &mut self.log_delta);
        f("pcen.log_r", &mut self.log_r);
        f("pcen.s_logit", std::slice::from_mut(&mut self.s_logit));
        if self.train_eps {
            f("pcen.log_eps", std::slice::from_mut(&mut self.log_eps));
        }
    }
}

/// Smoothed energies `M(t, n)` kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PcenCache {
    pub m: Vec<f64>,
    pub m0: Vec<f64>,
}

pub fn pcen_forward(f: &Spectrogram, params: &PcenParams, m0: &PcenState) -> Result<(Spectrogram, PcenState)> {
    let (out, cache) = pcen_forward_cached(f, params, m0)?;
    let n = f.channels;
    let last = if f.frames == 0 {
        m0.m.clone()
    } else {
        cache.m[(f.frames - 1) * n..].to_vec()
    };
    Ok((out, PcenState { m: last }))
}

pub fn pcen_forward_cached(f: &Spectrogram, params: &PcenParams, m0: &PcenState) -> Result<(Spectrogram, PcenCache)> {
    let n = f.channels;
    if params.channels() != n || m0.m.len() != n {
        return Err(Error::Shape(format!(
            "PCEN has {} channels, state {}, features {n}",
            params.channels(),
            m0.m.len()
        )));
    }
    if let Some(i) = f.values.iter().position(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::NegativeFeature {
            frame: i / n,
            channel: i % n,
        });
    }
    let s = params.s();
    let mut m = vec![0.0; f.values.len()];
    let mut out = vec![0.0; f.values.len()];
    let mut prev = m0.m.clone();
    for t in 0..f.frames {
        for c in 0..n {
            let i = t * n + c;
            let mt = (1.0 - s) * prev[c] + s * f.values[i];
            m[i] = mt;
            prev[c] = mt;
            out[i] = params.compress(f.values[i], mt, c);
        }
    }
    Ok((
        Spectrogram::new(f.frames, n, out, f.hop),
        PcenCache { m, m0: m0.m.clone() },
    ))
}

/// Returns `(d loss / d F, d loss / d m0, parameter gradients)`.
pub fn pcen_backward(
    f: &Spectrogram,
    params: &PcenParams,
    cache: &PcenCache,
    grad_out: &Spectrogram,
) -> (Spectrogram, Vec<f64>, PcenParams) {
    let n = f.channels;
    let s = params.s();
    let eps = params.eps();
    let mut grads = params.zeros_like();
    let mut d_f = vec![0.0; f.values.len()];
    let mut d_s = 0.0;
    let mut d_eps = 0.0;
    // gradient flowing into M(t) from later frames
    let mut carry = vec![0.0; n];
    for t in (0..f.frames).rev() {
        for c in 0..n {
            let i = t * n + c;
            let g = grad_out.values[i];
            let (fv, mt) = (f.values[i], cache.m[i]);
            let (alpha, delta, r) = (params.alpha(c), params.delta(c), params.r(c));
            let base = eps + mt;
            let gain = base.powf(alpha);
            let (d_dir_f, d_m, d_alpha, d_delta, d_r);
            match params.form {
                PcenForm::Paper => {
                    let den = gain + delta;
                    let u = fv / den;
                    let ur = u.powf(r);
                    d_dir_f = if u > 0.0 { r * ur / fv } else { 0.0 };
                    let d_den = -r * ur / den;
                    d_m = d_den * alpha * gain / base;
                    d_alpha = d_den * gain * base.ln();
                    d_delta = d_den - r * delta.powf(r - 1.0);
                    d_r = if u > 0.0 { ur * u.ln() } else { 0.0 } - delta.powf(r) * delta.ln();
                }
                PcenForm::Standard => {
                    let v = fv / gain + delta;
                    let dv = r * v.powf(r - 1.0);
                    d_dir_f = dv / gain;
                    d_m = -dv * alpha * fv / (gain * base);
                    d_alpha = -dv * fv / gain * base.ln();
                    d_delta = dv - r * delta.powf(r - 1.0);
                    d_r = v.powf(r) * v.ln() - delta.powf(r) * delta.ln();
                }
            }
            let gm = g * d_m + carry[c];
            d_eps += g * d_m;
            d_f[i] += g * d_dir_f + s * gm;
            let m_prev = if t == 0 { cache.m0[c] } else { cache.m[i - n] };
            d_s += gm * (fv - m_prev);
            carry[c] = (1.0 - s) * gm;
            grads.log_alpha[c] += g * d_alpha * alpha;
            grads.log_delta[c] += g * d_delta * delta;
            grads.log_r[c] += g * d_r * r;
        }
    }
    grads.s_logit = d_s * s * (1.0 - s);
    if params.train_eps {
        grads.log_eps = d_eps * eps;
    }
    (Spectrogram::new(f.frames, n, d_f, f.hop), carry, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(frames: usize, n: usize, values: Vec<f64>) -> Spectrogram {
        Spectrogram::new(frames, n, values, 160)
    }

    #[test]
    fn zero_input_gives_negative_delta_power() {
        let p = PcenParams::new(2, 0.9, 0.3, 0.7, 0.1, 1e-6, PcenForm::Paper).unwrap();
        let f = spec(5, 2, vec![0.0; 10]);
        let (out, _) = pcen_forward(&f, &p, &PcenState { m: vec![0.0; 2] }).unwrap();
        let expected = -(0.3f64.powf(0.7));
        for v in out.values {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn full_smoothing_closed_form() {
        // r = 1, delta -> 0, s -> 1: output = F / (eps + F)^alpha
        let mut p = PcenParams::new(1, 0.8, 1.0, 1.0, 0.5, 1e-3, PcenForm::Paper).unwrap();
        p.log_delta[0] = f64::NEG_INFINITY;
        p.s_logit = f64::INFINITY;
        let vals = vec![0.2, 1.5, 0.01, 3.0];
        let f = spec(4, 1, vals.clone());
        let (out, _) = pcen_forward(&f, &p, &PcenState { m: vec![7.0] }).unwrap();
        for (o, v) in out.values.iter().zip(&vals) {
            let expected = v / (1e-3 + v).powf(0.8);
            assert!((o - expected).abs() < 1e-12, "{o} vs {expected}");
        }
    }

    #[test]
    fn two_frame_hand_unroll() {
        let p = PcenParams::new(1, 0.5, 0.25, 0.5, 0.2, 0.01, PcenForm::Paper).unwrap();
        let (s, alpha, delta, r, eps) = (p.s(), p.alpha(0), p.delta(0), p.r(0), p.eps());
        let (f0, f1, m_init) = (0.4, 0.9, 0.3);
        let m0 = (1.0 - s) * m_init + s * f0;
        let m1 = (1.0 - s) * m0 + s * f1;
        let o0 = (f0 / ((eps + m0).powf(alpha) + delta)).powf(r) - delta.powf(r);
        let o1 = (f1 / ((eps + m1).powf(alpha) + delta)).powf(r) - delta.powf(r);
        let (out, state) = pcen_forward(&spec(2, 1, vec![f0, f1]), &p, &PcenState { m: vec![m_init] }).unwrap();
        assert!((out.values[0] - o0).abs() < 1e-12);
        assert!((out.values[1] - o1).abs() < 1e-12);
        assert!((state.m[0] - m1).abs() < 1e-12);
    }

    #[test]
    fn standard_form_moves_delta_out_of_denominator() {
        let mut p = PcenParams::leaf_default(1, PcenForm::Standard);
        let f = spec(1, 1, vec![0.5]);
        let m0 = PcenState { m: vec![0.5] };
        let (a, _) = pcen_forward(&f, &p, &m0).unwrap();
        p.form = PcenForm::Paper;
        let (b, _) = pcen_forward(&f, &p, &m0).unwrap();
        let gain = (1e-6f64 + 0.5).powf(0.96);
        assert!((a.values[0] - ((0.5 / gain + 2.0).sqrt() - 2f64.sqrt())).abs() < 1e-12);
        assert!((b.values[0] - ((0.5 / (gain + 2.0)).sqrt() - 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn negative_entry_rejected() {
        let p = PcenParams::leaf_default(2, PcenForm::Paper);
        let f = spec(1, 2, vec![0.1, -0.1]);
        let err = pcen_forward(&f, &p, &PcenState { m: vec![0.0; 2] }).unwrap_err();
        assert!(matches!(err, Error::NegativeFeature { frame: 0, channel: 1 }));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(PcenParams::new(1, -1.0, 1.0, 1.0, 0.5, 1e-6, PcenForm::Paper).is_err());
        assert!(PcenParams::new(1, 1.0, 1.0, 1.0, 1.0, 1e-6, PcenForm::Paper).is_err());
    }

    #[test]
    fn monotone_in_input_with_fixed_m() {
        for form in [PcenForm::Paper, PcenForm::Standard] {
            let p = PcenParams::new(1, 0.9, 0.7, 0.6, 0.1, 1e-6, form).unwrap();
            let mut last = f64::NEG_INFINITY;
            for i in 0..200 {
                let v = p.compress(i as f64 * 0.05, 0.4, 0);
                assert!(v > last);
                last = v;
            }
        }
    }
}
