use crate::config::OptimConfig;
use crate::tensor::Parameters;

/// Adam over the flattened parameter vector, with global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip_norm: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(config: &OptimConfig, n_params: usize) -> Self {
        Self {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            clip_norm: config.clip_norm,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Applies one update and returns the pre-clipping gradient norm.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64) -> f64 {
        self.step_scaled(params, grads, lr, None)
    }

    /// As [`Adam::step`], with an optional per-scalar learning-rate multiplier.
    pub fn step_scaled<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64, lr_scale: Option<&[f64]>) -> f64 {
        let mut g = grads.flat_values();
        assert_eq!(g.len(), self.m.len(), "optimizer/parameter size mismatch");
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > self.clip_norm {
            let scale = self.clip_norm / norm;
            g.iter_mut().for_each(|x| *x *= scale);
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let mut p = params.flat_values();
        for i in 0..p.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let lr_i = lr_scale.map_or(lr, |s| lr * s[i]);
            p[i] -= lr_i * m_hat / (v_hat.sqrt() + self.eps);
        }
        params.set_flat_values(&p);
        norm
    }
}

/// `dst += src`, tensor by tensor.
pub fn accumulate<P: Parameters>(dst: &mut P, src: &P) {
    let add = src.flat_values();
    let mut cur = dst.flat_values();
    for (c, a) in cur.iter_mut().zip(&add) {
        *c += a;
    }
    dst.set_flat_values(&cur);
}

pub fn scale<P: Parameters>(p: &mut P, factor: f64) {
    let v: Vec<f64> = p.flat_values().into_iter().map(|x| x * factor).collect();
    p.set_flat_values(&v);
}
