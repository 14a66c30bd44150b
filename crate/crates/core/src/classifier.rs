//! Small spiking classifier: stacked LIF layers (optionally recurrent) and a
//! leak-free integrator readout whose time-averaged membrane gives the logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neurons::{check_binary, LifLayer, LifSeqCache, SpikeFn};
use crate::tensor::{affine_in_out, affine_in_out_backward, Matrix, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub layer_sizes: Vec<usize>,
    pub recurrent: bool,
    pub n_classes: usize,
    /// Initial membrane decay of the hidden layers.
    pub beta: f64,
    /// Weight init scale (uniform `+-scale/sqrt(fan_in)`).
    pub init_scale: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![64],
            recurrent: false,
            n_classes: 10,
            beta: 0.9,
            init_scale: 2.0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return Err(Error::invalid(
                "classifier.layer_sizes",
                "must be a nonempty list of positive widths",
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("classifier.n_classes", "need at least two classes"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid("classifier.beta", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub hidden: Vec<LifLayer>,
    /// `[last hidden x classes]`
    pub readout_w: Matrix,
    pub readout_b: Vec<f64>,
}

pub struct ClassifierCache {
    layer_inputs: Vec<Vec<Vec<f64>>>,
    layers: Vec<LifSeqCache>,
}

impl Classifier {
    pub fn init(config: &ClassifierConfig, n_in: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut hidden = Vec::new();
        let mut width = n_in;
        for &size in &config.layer_sizes {
            hidden.push(LifLayer::init(
                width,
                size,
                config.beta,
                config.init_scale,
                config.recurrent,
                rng,
            ));
            width = size;
        }
        let a = 1.0 / (width as f64).sqrt();
        let readout_w = Matrix::from_vec(
            width,
            config.n_classes,
            (0..width * config.n_classes).map(|_| rng.gen_range(-a..a)).collect(),
        )?;
        Ok(Self {
            hidden,
            readout_w,
            readout_b: vec![0.0; config.n_classes],
        })
    }

    pub fn n_in(&self) -> usize {
        self.hidden[0].n_in()
    }

    pub fn n_classes(&self) -> usize {
        self.readout_b.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.iter().map(LifLayer::zeros_like).collect(),
            readout_w: Matrix::zeros(self.readout_w.rows, self.readout_w.cols),
            readout_b: vec![0.0; self.readout_b.len()],
        }
    }

    /// Logits for a binary spike train `[T x N_in]`.
    pub fn classify(&self, spikes: &[Vec<f64>]) -> Result<Vec<f64>> {
        if spikes.is_empty() {
            return Err(Error::Shape("empty spike train".into()));
        }
        for frame in spikes {
            if frame.len() != self.n_in() {
                return Err(Error::Shape(format!(
                    "classifier expects {} input channels, got {}",
                    self.n_in(),
                    frame.len()
                )));
            }
            check_binary(frame)?;
        }
        Ok(self.forward(spikes, &SpikeFn::default()).0)
    }

    /// Unchecked forward; input may be relaxed (real-valued) spikes.
    pub fn forward(&self, input: &[Vec<f64>], spike: &SpikeFn) -> (Vec<f64>, ClassifierCache) {
        let mut layer_inputs = Vec::with_capacity(self.hidden.len());
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut x: Vec<Vec<f64>> = input.to_vec();
        for layer in &self.hidden {
            let cache = layer.forward_seq(&x, spike);
            let out: Vec<Vec<f64>> = cache.spikes().cloned().collect();
            layer_inputs.push(std::mem::replace(&mut x, out));
            layers.push(cache);
        }
        let steps = x.len();
        let k = self.n_classes();
        let mut membrane = vec![0.0; k];
        let mut logits = vec![0.0; k];
        let mut drive = vec![0.0; k];
        for s in &x {
            affine_in_out(&self.readout_w, &self.readout_b, s, &mut drive);
            for c in 0..k {
                membrane[c] += drive[c];
                logits[c] += membrane[c];
            }
        }
        let inv = 1.0 / steps as f64;
        logits.iter_mut().for_each(|v| *v *= inv);
        layer_inputs.push(x);
        (logits, ClassifierCache { layer_inputs, layers })
    }

    /// Returns parameter gradients and `d loss / d input`.
    pub fn backward(
        &self,
        cache: &ClassifierCache,
        grad_logits: &[f64],
        spike: &SpikeFn,
    ) -> (Classifier, Vec<Vec<f64>>) {
        let mut grads = self.zeros_like();
        let top = cache.layer_inputs.last().expect("readout input");
        let steps = top.len();
        let mut d_top = vec![vec![0.0; self.readout_w.rows]; steps];
        for (t, s) in top.iter().enumerate() {
            // the drive at step t is integrated into the membrane for the remaining T - t steps
            let w = (steps - t) as f64 / steps as f64;
            let g: Vec<f64> = grad_logits.iter().map(|v| v * w).collect();
            affine_in_out_backward(
                &self.readout_w,
                s,
                &g,
                &mut grads.readout_w,
                &mut grads.readout_b,
                Some(&mut d_top[t]),
            );
        }
        let mut d_spikes = d_top;
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            let (g, d_in) = layer.backward_seq(&cache.layer_inputs[l], &cache.layers[l], &d_spikes, &[], spike);
            grads.hidden[l] = g;
            d_spikes = d_in;
        }
        (grads, d_spikes)
    }
}

impl Parameters for Classifier {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (l, layer) in self.hidden.iter().enumerate() {
            layer.visit(&mut |name, shape, data| f(&format!("classifier.hidden{l}.{name}"), shape, data));
        }
        f(
            "classifier.readout_w",
            &[self.readout_w.rows, self.readout_w.cols],
            &self.readout_w.data,
        );
        f("classifier.readout_b", &[self.readout_b.len()], &self.readout_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (l, layer) in self.hidden.iter_mut().enumerate() {
            layer.visit_mut(&mut |name, data| f(&format!("classifier.hidden{l}.{name}"), data));
        }
        f("classifier.readout_w", &mut self.readout_w.data);
        f("classifier.readout_b", &mut self.readout_b);
    }
}

/// Softmax cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
