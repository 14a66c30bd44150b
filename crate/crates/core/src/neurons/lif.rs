use rand::Rng;

use super::{check_binary, SpikeFn};
use crate::error::{Error, Result};
use crate::tensor::{affine_in_out, affine_in_out_backward, logit, sigmoid, Matrix, Parameters};

/// Leaky integrate-and-fire layer with soft reset by threshold subtraction:
///
/// ```text
/// I[t] = w^T x[t] (+ r^T S[t-1]) + b
/// U[t] = beta U[t-1] + I[t] - v_th S[t-1]
/// S[t] = H(U[t] - v_th)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LifLayer {
    /// `[in x out]`
    pub w: Matrix,
    pub b: Vec<f64>,
    /// `beta = sigmoid(beta_logit)`, so the decay stays in `(0, 1)`.
    pub beta_logit: Vec<f64>,
    pub v_th: f64,
    /// Optional `[out x out]` recurrent weights fed by the layer's own previous spikes.
    pub recurrent: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
}

impl LifState {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: vec![0.0; n],
            s: vec![0.0; n],
        }
    }
}

impl LifLayer {
    pub fn new(w: Matrix, b: Vec<f64>, beta: Vec<f64>, v_th: f64) -> Result<Self> {
        if b.len() != w.cols || beta.len() != w.cols {
            return Err(Error::Shape("bias/beta length must equal output width".into()));
        }
        if beta.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::invalid("beta", "must lie in (0, 1)"));
        }
        if !(v_th > 0.0) {
            return Err(Error::invalid("v_th", "must be positive"));
        }
        Ok(Self {
            w,
            b,
            beta_logit: beta.iter().map(|&x| logit(x)).collect(),
            v_th,
            recurrent: None,
        })
    }

    /// Uniform `w` in `+-scale / sqrt(n_in)`, zero bias.
    pub fn init(n_in: usize, n_out: usize, beta: f64, scale: f64, recurrent: bool, rng: &mut impl Rng) -> Self {
        let a = scale / (n_in as f64).sqrt();
        let w =
            Matrix::from_vec(n_in, n_out, (0..n_in * n_out).map(|_| rng.gen_range(-a..a)).collect()).expect("shape");
        let mut layer = Self::new(w, vec![0.0; n_out], vec![beta; n_out], 1.0).expect("valid init");
        if recurrent {
            let ar = scale / (n_out as f64).sqrt();
            layer.recurrent = Some(
                Matrix::from_vec(
                    n_out,
                    n_out,
                    (0..n_out * n_out).map(|_| rng.gen_range(-ar..ar)).collect(),
                )
                .expect("shape"),
            );
        }
        layer
    }

    pub fn n_in(&self) -> usize {
        self.w.rows
    }

    pub fn n_out(&self) -> usize {
        self.w.cols
    }

    pub fn beta(&self, i: usize) -> f64 {
        sigmoid(self.beta_logit[i])
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Matrix::zeros(self.w.rows, self.w.cols),
            b: vec![0.0; self.b.len()],
            beta_logit: vec![0.0; self.beta_logit.len()],
            v_th: self.v_th,
            recurrent: self.recurrent.as_ref().map(|r| Matrix::zeros(r.rows, r.cols)),
        }
    }

    fn current(&self, state: &LifState, x: &[f64]) -> Vec<f64> {
        let mut i = vec![0.0; self.n_out()];
        affine_in_out(&self.w, &self.b, x, &mut i);
        if let Some(r) = &self.recurrent {
            for (j, &s) in state.s.iter().enumerate() {
                if s == 0.0 {
                    continue;
                }
                for (acc, &rij) in i.iter_mut().zip(r.row(j)) {
                    *acc += s * rij;
                }
            }
        }
        i
    }

    /// One step on real-valued input.
    pub fn step(&self, state: &LifState, x: &[f64], spike: &SpikeFn) -> LifState {
        let current = self.current(state, x);
        let mut next = LifState::zeros(self.n_out());
        for j in 0..self.n_out() {
            let u = self.beta(j) * state.u[j] + current[j] - self.v_th * state.s[j];
            next.u[j] = u;
            next.s[j] = spike.fire(u - self.v_th);
        }
        next
    }

    pub fn forward_seq(&self, input: &[Vec<f64>], spike: &SpikeFn) -> LifSeqCache {
        let mut states = Vec::with_capacity(input.len() + 1);
        states.push(LifState::zeros(self.n_out()));
        for x in input {
            let next = self.step(states.last().expect("nonempty"), x, spike);
            states.push(next);
        }
        LifSeqCache { states }
    }

    /// BPTT. `grad_spikes[t]` is the external gradient on `S[t]`, `grad_u[t]` on `U[t]`
    /// (either may be empty). Returns parameter gradients and `d loss / d input`.
    pub fn backward_seq(
        &self,
        input: &[Vec<f64>],
        cache: &LifSeqCache,
        grad_spikes: &[Vec<f64>],
        grad_u: &[Vec<f64>],
        spike: &SpikeFn,
    ) -> (LifLayer, Vec<Vec<f64>>) {
        let n = self.n_out();
        let steps = input.len();
        let mut grads = self.zeros_like();
        let mut d_input = vec![vec![0.0; self.n_in()]; steps];
        let mut carry_u = vec![0.0; n];
        let mut carry_s = vec![0.0; n];
        for t in (0..steps).rev() {
            let prev = &cache.states[t];
            let cur = &cache.states[t + 1];
            let mut g_u = vec![0.0; n];
            for j in 0..n {
                let ext_s = grad_spikes.get(t).map_or(0.0, |g| g[j]);
                let ext_u = grad_u.get(t).map_or(0.0, |g| g[j]);
                let g_s = ext_s + carry_s[j];
                g_u[j] = carry_u[j] + ext_u + g_s * spike.grad(cur.u[j] - self.v_th);
                let beta = self.beta(j);
                grads.beta_logit[j] += g_u[j] * prev.u[j] * beta * (1.0 - beta);
                carry_u[j] = beta * g_u[j];
                carry_s[j] = -self.v_th * g_u[j];
            }
            affine_in_out_backward(
                &self.w,
                &input[t],
                &g_u,
                &mut grads.w,
                &mut grads.b,
                Some(&mut d_input[t]),
            );
            if let (Some(r), Some(dr)) = (&self.recurrent, grads.recurrent.as_mut()) {
                for (i, &s) in prev.s.iter().enumerate() {
                    let row = r.row(i);
                    carry_s[i] += row.iter().zip(&g_u).map(|(a, b)| a * b).sum::<f64>();
                    if s != 0.0 {
                        for (d, &g) in dr.row_mut(i).iter_mut().zip(&g_u) {
                            *d += s * g;
                        }
                    }
                }
            }
        }
        (grads, d_input)
    }
}

/// States `U[0..=T]`, `S[0..=T]`; index 0 is the zero initial state.
#[derive(Debug, Clone)]
pub struct LifSeqCache {
    pub states: Vec<LifState>,
}

impl LifSeqCache {
    pub fn spikes(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.states.iter().skip(1).map(|s| &s.s)
    }
}

/// Single step on binary input spikes with a hard threshold.
pub fn lif_step(layer: &LifLayer, state: &LifState, s_in: &[f64]) -> Result<(LifState, Vec<f64>)> {
    check_binary(s_in)?;
    if s_in.len() != layer.n_in() || state.u.len() != layer.n_out() {
        return Err(Error::Shape("lif_step input/state width".into()));
    }
    let next = layer.step(state, s_in, &SpikeFn::default());
    let spikes = next.s.clone();
    Ok((next, spikes))
}

impl Parameters for LifLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("w", &[self.w.rows, self.w.cols], &self.w.data);
        f("b", &[self.b.len()], &self.b);
        f("beta_logit", &[self.beta_logit.len()], &self.beta_logit);
        if let Some(r) = &self.recurrent {
            f("recurrent", &[r.rows, r.cols], &r.data);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w", &mut self.w.data);
        f("b", &mut self.b);
        f("beta_logit", &mut self.beta_logit);
        if let Some(r) = &mut self.recurrent {
            f("recurrent", &mut r.data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_layer(w: f64, beta: f64) -> LifLayer {
        LifLayer::new(Matrix::from_vec(1, 1, vec![w]).unwrap(), vec![0.0], vec![beta], 1.0).unwrap()
    }

    #[test]
    fn fires_at_threshold() {
        let layer = scalar_layer(1.0, 0.5);
        let (st, s) = lif_step(&layer, &LifState::zeros(1), &[1.0]).unwrap();
        assert!((st.u[0] - 1.0).abs() < 1e-15);
        assert_eq!(s, vec![1.0]);
    }

    #[test]
    fn soft_reset_after_spike() {
        let layer = scalar_layer(1.0, 0.5);
        let state = LifState {
            u: vec![2.0],
            s: vec![1.0],
        };
        let (st, s) = lif_step(&layer, &state, &[0.0]).unwrap();
        assert!(st.u[0].abs() < 1e-15);
        assert_eq!(s, vec![0.0]);
    }

    #[test]
    fn quiescent_without_input() {
        let layer = scalar_layer(0.7, 0.9);
        let mut st = LifState::zeros(1);
        for _ in 0..100 {
            let (next, s) = lif_step(&layer, &st, &[0.0]).unwrap();
            assert_eq!(next.u[0], 0.0);
            assert_eq!(s[0], 0.0);
            st = next;
        }
    }

    #[test]
    fn rejects_non_binary_input() {
        let layer = scalar_layer(1.0, 0.5);
        assert!(lif_step(&layer, &LifState::zeros(1), &[0.3]).is_err());
    }

    #[test]
    fn rejects_bad_beta() {
        assert!(LifLayer::new(Matrix::zeros(1, 1), vec![0.0], vec![1.0], 1.0).is_err());
    }
}
