//! Two-compartment neurons with coupled dendritic (`U_d`) and somatic (`U_s`) potentials.
//!
//! ```text
//! I[t]    = w^T x[t] + b
//! I_f[t]  = ZeroDiag(W_f)  S[t-1]
//! I_LI[t] = ZeroDiag(W_LI) S[t-1]
//! U_d[t]  = U_d[t-1] + beta_d U_s[t-1] + I[t] - gamma S[t-1] + I_f[t]
//! U_s[t]  = U_s[t-1] + beta_s U_d[t-1] - v_th S[t-1] - I_LI[t]
//! S[t]    = H(U_s[t] - v_th)
//! ```
//!
//! Both compartments update from the previous step's values. TC-LIF is the case
//! without the lateral terms. `W[i][j]` couples presynaptic neuron `j` into neuron `i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_binary, SpikeFn};
use crate::error::{Error, Result};
use crate::tensor::{affine_in_out, affine_in_out_backward, Matrix, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct TcLifLayer {
    /// `[in x out]`
    pub w: Matrix,
    pub b: Vec<f64>,
    pub beta_d: Vec<f64>,
    pub beta_s: Vec<f64>,
    /// Dendritic reset strength.
    pub gamma: Vec<f64>,
    pub v_th: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcState {
    pub ud: Vec<f64>,
    pub us: Vec<f64>,
    pub s: Vec<f64>,
}

impl TcState {
    pub fn zeros(n: usize) -> Self {
        Self {
            ud: vec![0.0; n],
            us: vec![0.0; n],
            s: vec![0.0; n],
        }
    }
}

/// Which lateral pathways are active (and therefore trainable).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LateralMask {
    pub feedback: bool,
    pub inhibition: bool,
}

impl LateralMask {
    pub const NONE: Self = Self {
        feedback: false,
        inhibition: false,
    };
    pub const ALL: Self = Self {
        feedback: true,
        inhibition: true,
    };
}

impl TcLifLayer {
    pub fn new(w: Matrix, b: Vec<f64>, beta_d: Vec<f64>, beta_s: Vec<f64>, gamma: Vec<f64>, v_th: f64) -> Result<Self> {
        let n = w.cols;
        if [b.len(), beta_d.len(), beta_s.len(), gamma.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Shape("per-neuron vectors must match output width".into()));
        }
        if !(v_th > 0.0) {
            return Err(Error::invalid("v_th", "must be positive"));
        }
        Ok(Self {
            w,
            b,
            beta_d,
            beta_s,
            gamma,
            v_th,
        })
    }

    pub fn n_in(&self) -> usize {
        self.w.rows
    }

    pub fn n_out(&self) -> usize {
        self.w.cols
    }

    pub fn zeros_like(&self) -> Self {
        let n = self.n_out();
        Self {
            w: Matrix::zeros(self.w.rows, self.w.cols),
            b: vec![0.0; n],
            beta_d: vec![0.0; n],
            beta_s: vec![0.0; n],
            gamma: vec![0.0; n],
            v_th: self.v_th,
        }
    }

    fn update(&self, state: &TcState, x: &[f64], lateral: Option<(&Matrix, &Matrix)>, spike: &SpikeFn) -> TcState {
        let n = self.n_out();
        let mut current = vec![0.0; n];
        affine_in_out(&self.w, &self.b, x, &mut current);
        let mut next = TcState::zeros(n);
        for i in 0..n {
            let mut ud = state.ud[i] + self.beta_d[i] * state.us[i] + current[i] - self.gamma[i] * state.s[i];
            let mut us = state.us[i] + self.beta_s[i] * state.ud[i] - self.v_th * state.s[i];
            if let Some((wf, wli)) = lateral {
                let (f, li) = lateral_drive(wf, wli, &state.s, i);
                // exact zeros are skipped so a zero-feedback layer reproduces TC-LIF bit for bit
                if f != 0.0 {
                    ud += f;
                }
                if li != 0.0 {
                    us -= li;
                }
            }
            next.ud[i] = ud;
            next.us[i] = us;
            next.s[i] = spike.fire(us - self.v_th);
        }
        next
    }

    pub fn step(&self, state: &TcState, x: &[f64], spike: &SpikeFn) -> TcState {
        self.update(state, x, None, spike)
    }
}

#[inline]
fn lateral_drive(wf: &Matrix, wli: &Matrix, s_prev: &[f64], i: usize) -> (f64, f64) {
    let (mut f, mut li) = (0.0, 0.0);
    for (j, &s) in s_prev.iter().enumerate() {
        if j == i || s == 0.0 {
            continue;
        }
        f += wf.get(i, j) * s;
        li += wli.get(i, j) * s;
    }
    (f, li)
}

/// TC-LIF with lateral feedback (dendrite) and non-negative lateral inhibition (soma).
#[derive(Debug, Clone, PartialEq)]
pub struct IhcLifLayer {
    pub core: TcLifLayer,
    /// `[out x out]`, zero diagonal.
    pub w_f: Matrix,
    /// `[out x out]`, zero diagonal, non-negative.
    pub w_li: Matrix,
    pub mask: LateralMask,
}

impl IhcLifLayer {
    pub fn from_core(core: TcLifLayer, mask: LateralMask) -> Self {
        let n = core.n_out();
        Self {
            core,
            w_f: Matrix::zeros(n, n),
            w_li: Matrix::zeros(n, n),
            mask,
        }
    }

    /// `w = input_gain * I + U(-noise, noise)` (identity only when square), `beta_d`, `beta_s`
    /// uniform in `(-0.2, 0.2)`, `gamma = v_th`, lateral weights zero.
    pub fn init(n_in: usize, n_out: usize, input_gain: f64, noise: f64, mask: LateralMask, rng: &mut impl Rng) -> Self {
        let mut w = Matrix::zeros(n_in, n_out);
        for v in &mut w.data {
            *v = if noise > 0.0 { rng.gen_range(-noise..noise) } else { 0.0 };
        }
        if n_in == n_out {
            for i in 0..n_in {
                w.data[i * n_out + i] += input_gain;
            }
        }
        let beta_d = (0..n_out).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let beta_s = (0..n_out).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let core = TcLifLayer::new(w, vec![0.0; n_out], beta_d, beta_s, vec![1.0; n_out], 1.0).expect("valid init");
        Self::from_core(core, mask)
    }

    pub fn n_in(&self) -> usize {
        self.core.n_in()
    }

    pub fn n_out(&self) -> usize {
        self.core.n_out()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_out();
        for (name, m) in [("w_f", &self.w_f), ("w_li", &self.w_li)] {
            if m.rows != n || m.cols != n {
                return Err(Error::Shape(format!("{name} must be {n}x{n}")));
            }
            if (0..n).any(|i| m.get(i, i) != 0.0) {
                return Err(Error::Constraint(format!("{name} has a nonzero diagonal")));
            }
        }
        if self.w_li.data.iter().any(|&v| v < 0.0) {
            return Err(Error::Constraint("w_li has a negative entry".into()));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let n = self.n_out();
        Self {
            core: self.core.zeros_like(),
            w_f: Matrix::zeros(n, n),
            w_li: Matrix::zeros(n, n),
            mask: self.mask,
        }
    }

    pub fn step(&self, state: &TcState, x: &[f64], spike: &SpikeFn) -> TcState {
        self.core.update(state, x, Some((&self.w_f, &self.w_li)), spike)
    }

    pub fn forward_seq(&self, input: &[Vec<f64>], spike: &SpikeFn) -> TcSeqCache {
        let mut states = Vec::with_capacity(input.len() + 1);
        states.push(TcState::zeros(self.n_out()));
        for x in input {
            let next = self.step(states.last().expect("nonempty"), x, spike);
            states.push(next);
        }
        TcSeqCache { states }
    }

    /// BPTT with the surrogate standing in for the Heaviside derivative, including
    /// through the reset and lateral terms. Gradients of masked-off lateral weights
    /// and of all diagonals are zero.
    pub fn backward_seq(
        &self,
        input: &[Vec<f64>],
        cache: &TcSeqCache,
        grad_spikes: &[Vec<f64>],
        spike: &SpikeFn,
    ) -> (IhcLifLayer, Vec<Vec<f64>>) {
        let n = self.n_out();
        let core = &self.core;
        let steps = input.len();
        let mut grads = self.zeros_like();
        let mut d_input = vec![vec![0.0; self.n_in()]; steps];
        let mut carry_ud = vec![0.0; n];
        let mut carry_us = vec![0.0; n];
        let mut carry_s = vec![0.0; n];
        let mut g_ud = vec![0.0; n];
        let mut g_us = vec![0.0; n];
        for t in (0..steps).rev() {
            let prev = &cache.states[t];
            let cur = &cache.states[t + 1];
            for i in 0..n {
                let g_s = grad_spikes.get(t).map_or(0.0, |g| g[i]) + carry_s[i];
                g_us[i] = carry_us[i] + g_s * spike.grad(cur.us[i] - core.v_th);
                g_ud[i] = carry_ud[i];
            }
            for i in 0..n {
                grads.core.beta_d[i] += g_ud[i] * prev.us[i];
                grads.core.beta_s[i] += g_us[i] * prev.ud[i];
                grads.core.gamma[i] -= g_ud[i] * prev.s[i];
                carry_ud[i] = g_ud[i] + core.beta_s[i] * g_us[i];
                carry_us[i] = g_us[i] + core.beta_d[i] * g_ud[i];
                carry_s[i] = -core.gamma[i] * g_ud[i] - core.v_th * g_us[i];
            }
            // lateral terms: S[t-1][j] drives neuron i through W[i][j], j != i
            for j in 0..n {
                let mut back = 0.0;
                for i in 0..n {
                    if i == j {
                        continue;
                    }
                    back += self.w_f.get(i, j) * g_ud[i] - self.w_li.get(i, j) * g_us[i];
                }
                carry_s[j] += back;
            }
            if self.mask.feedback || self.mask.inhibition {
                for (j, &s) in prev.s.iter().enumerate() {
                    if s == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        if i == j {
                            continue;
                        }
                        if self.mask.feedback {
                            grads.w_f.data[i * n + j] += g_ud[i] * s;
                        }
                        if self.mask.inhibition {
                            grads.w_li.data[i * n + j] -= g_us[i] * s;
                        }
                    }
                }
            }
            affine_in_out_backward(
                &core.w,
                &input[t],
                &g_ud,
                &mut grads.core.w,
                &mut grads.core.b,
                Some(&mut d_input[t]),
            );
        }
        (grads, d_input)
    }
}

/// States for `t = 0..=T`; index 0 is the zero initial state.
#[derive(Debug, Clone)]
pub struct TcSeqCache {
    pub states: Vec<TcState>,
}

impl TcSeqCache {
    pub fn spikes(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.states.iter().skip(1).map(|s| &s.s)
    }
}

fn check_step_shapes(n_in: usize, n_out: usize, state: &TcState, s_in: &[f64]) -> Result<()> {
    if s_in.len() != n_in || state.ud.len() != n_out || state.us.len() != n_out || state.s.len() != n_out {
        return Err(Error::Shape("step input/state width".into()));
    }
    Ok(())
}

pub fn tclif_step(layer: &TcLifLayer, state: &TcState, s_in: &[f64]) -> Result<(TcState, Vec<f64>)> {
    check_binary(s_in)?;
    check_step_shapes(layer.n_in(), layer.n_out(), state, s_in)?;
    let next = layer.step(state, s_in, &SpikeFn::default());
    let s = next.s.clone();
    Ok((next, s))
}

pub fn ihclif_step(layer: &IhcLifLayer, state: &TcState, s_in: &[f64]) -> Result<(TcState, Vec<f64>)> {
    layer.validate()?;
    check_binary(s_in)?;
    check_step_shapes(layer.n_in(), layer.n_out(), state, s_in)?;
    let next = layer.step(state, s_in, &SpikeFn::default());
    let s = next.s.clone();
    Ok((next, s))
}

/// Zeroes both lateral diagonals and clamps `W_LI` to be non-negative.
pub fn project_constraints(mut layer: IhcLifLayer) -> IhcLifLayer {
    let n = layer.n_out();
    for i in 0..n {
        layer.w_f.set(i, i, 0.0);
        layer.w_li.set(i, i, 0.0);
    }
    for v in &mut layer.w_li.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    layer
}

impl Parameters for IhcLifLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let c = &self.core;
        let n = c.n_out();
        f("w", &[c.w.rows, c.w.cols], &c.w.data);
        f("b", &[n], &c.b);
        f("beta_d", &[n], &c.beta_d);
        f("beta_s", &[n], &c.beta_s);
        f("gamma", &[n], &c.gamma);
        f("w_f", &[n, n], &self.w_f.data);
        f("w_li", &[n, n], &self.w_li.data);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        let c = &mut self.core;
        f("w", &mut c.w.data);
        f("b", &mut c.b);
        f("beta_d", &mut c.beta_d);
        f("beta_s", &mut c.beta_s);
        f("gamma", &mut c.gamma);
        f("w_f", &mut self.w_f.data);
        f("w_li", &mut self.w_li.data);
    }
}
