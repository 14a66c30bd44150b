//! Step functions against independent scalar loops, and the IHC-LIF → TC-LIF reduction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spiking_leaf::frontend::{pcen_forward, PcenForm, PcenParams, PcenState, Spectrogram};
use spiking_leaf::neurons::lif::{lif_step, LifLayer, LifState};
use spiking_leaf::neurons::two_compartment::{ihclif_step, tclif_step, IhcLifLayer, LateralMask, TcLifLayer, TcState};
use spiking_leaf::tensor::Matrix;

const TOL: f64 = 1e-12;

fn rand_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn rand_spikes(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect()
}

fn step_fn(x: f64, th: f64) -> f64 {
    if x >= th {
        1.0
    } else {
        0.0
    }
}

#[test]
fn lif_step_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (n_in, n) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let w = rand_matrix(n_in, n, 1.5, &mut rng);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let v_th = rng.gen_range(0.5..1.5);
        let layer = LifLayer::new(w.clone(), b.clone(), beta, v_th).unwrap();
        let mut state = LifState::zeros(n);
        let (mut u, mut s) = (vec![0.0; n], vec![0.0; n]);
        for _ in 0..10 {
            let x = rand_spikes(n_in, &mut rng);
            let (next, out) = lif_step(&layer, &state, &x).unwrap();
            for j in 0..n {
                let mut i = b[j];
                for k in 0..n_in {
                    i += w.get(k, j) * x[k];
                }
                u[j] = layer.beta(j) * u[j] + i - v_th * s[j];
                s[j] = step_fn(u[j], v_th);
                assert!((next.u[j] - u[j]).abs() <= TOL);
                assert_eq!(out[j], s[j]);
            }
            state = next;
        }
    }
}

fn rand_tc(n_in: usize, n: usize, rng: &mut impl Rng) -> TcLifLayer {
    let w = rand_matrix(n_in, n, 1.5, rng);
    let mut v = |lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
    let (b, beta_d, beta_s, gamma) = (v(-0.5, 0.5), v(-0.5, 0.5), v(-0.5, 0.5), v(0.0, 1.5));
    TcLifLayer::new(w, b, beta_d, beta_s, gamma, rng.gen_range(0.5..1.5)).unwrap()
}

/// Dendrite, soma and spike of a two-compartment neuron, optionally with lateral terms.
fn tc_oracle(l: &TcLifLayer, lat: Option<(&Matrix, &Matrix)>, st: &mut (Vec<f64>, Vec<f64>, Vec<f64>), x: &[f64]) {
    let n = l.n_out();
    let (ud0, us0, s0) = st.clone();
    for i in 0..n {
        let mut cur = l.b[i];
        for k in 0..l.n_in() {
            cur += l.w.get(k, i) * x[k];
        }
        let (mut fb, mut li) = (0.0, 0.0);
        if let Some((wf, wli)) = lat {
            for j in (0..n).filter(|&j| j != i) {
                fb += wf.get(i, j) * s0[j];
                li += wli.get(i, j) * s0[j];
            }
        }
        st.0[i] = ud0[i] + l.beta_d[i] * us0[i] + cur - l.gamma[i] * s0[i] + fb;
        st.1[i] = us0[i] + l.beta_s[i] * ud0[i] - l.v_th * s0[i] - li;
        st.2[i] = step_fn(st.1[i], l.v_th);
    }
}

fn assert_close(state: &TcState, oracle: &(Vec<f64>, Vec<f64>, Vec<f64>)) {
    for i in 0..state.s.len() {
        assert!(
            (state.ud[i] - oracle.0[i]).abs() <= TOL,
            "ud {} vs {}",
            state.ud[i],
            oracle.0[i]
        );
        assert!(
            (state.us[i] - oracle.1[i]).abs() <= TOL,
            "us {} vs {}",
            state.us[i],
            oracle.1[i]
        );
        assert_eq!(state.s[i], oracle.2[i]);
    }
}

#[test]
fn tclif_step_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (n_in, n) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let layer = rand_tc(n_in, n, &mut rng);
        let mut state = TcState::zeros(n);
        let mut oracle = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for _ in 0..10 {
            let x = rand_spikes(n_in, &mut rng);
            let (next, _) = tclif_step(&layer, &state, &x).unwrap();
            tc_oracle(&layer, None, &mut oracle, &x);
            assert_close(&next, &oracle);
            state = next;
        }
    }
}

#[test]
fn ihclif_step_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (n_in, n) = (rng.gen_range(1..6), rng.gen_range(2..6));
        let mut layer = IhcLifLayer::from_core(rand_tc(n_in, n, &mut rng), LateralMask::ALL);
        layer.w_f = rand_matrix(n, n, 0.5, &mut rng);
        layer.w_li = rand_matrix(n, n, 0.5, &mut rng).map(f64::abs);
        for i in 0..n {
            layer.w_f.set(i, i, 0.0);
            layer.w_li.set(i, i, 0.0);
        }
        let mut state = TcState::zeros(n);
        let mut oracle = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for _ in 0..10 {
            let x = rand_spikes(n_in, &mut rng);
            let (next, _) = ihclif_step(&layer, &state, &x).unwrap();
            tc_oracle(&layer.core, Some((&layer.w_f, &layer.w_li)), &mut oracle, &x);
            assert_close(&next, &oracle);
            state = next;
        }
    }
}

#[test]
fn pcen_forward_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..100 {
        let form = if trial % 2 == 0 {
            PcenForm::Paper
        } else {
            PcenForm::Standard
        };
        let n = rng.gen_range(1..5);
        let mut p = PcenParams::new(n, 0.9, 1.0, 0.5, 0.04, 1e-6, form).unwrap();
        for c in 0..n {
            p.log_alpha[c] = rng.gen_range(0.2f64..1.0).ln();
            p.log_delta[c] = rng.gen_range(0.01f64..3.0).ln();
            p.log_r[c] = rng.gen_range(0.1f64..1.0).ln();
        }
        p.s_logit = rng.gen_range(-4.0..0.0);
        let values: Vec<f64> = (0..10 * n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let m0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let f = Spectrogram::new(10, n, values.clone(), 160);
        let (out, last) = pcen_forward(&f, &p, &PcenState { m: m0.clone() }).unwrap();
        let s = 1.0 / (1.0 + (-p.s_logit).exp());
        let mut m = m0;
        for t in 0..10 {
            for c in 0..n {
                let e = values[t * n + c];
                m[c] = (1.0 - s) * m[c] + s * e;
                let (alpha, delta, r) = (p.log_alpha[c].exp(), p.log_delta[c].exp(), p.log_r[c].exp());
                let gain = (1e-6 + m[c]).powf(alpha);
                let want = match form {
                    PcenForm::Paper => (e / (gain + delta)).powf(r) - delta.powf(r),
                    PcenForm::Standard => (e / gain + delta).powf(r) - delta.powf(r),
                };
                assert!((out.get(t, c) - want).abs() <= TOL, "{} vs {want}", out.get(t, c));
            }
        }
        for c in 0..n {
            assert!((last.m[c] - m[c]).abs() <= TOL);
        }
    }
}

#[test]
fn ihclif_without_lateral_weights_is_tclif_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    for _ in 0..1000 {
        let (n_in, n) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let core = rand_tc(n_in, n, &mut rng);
        let ihc = IhcLifLayer::from_core(core.clone(), LateralMask::ALL);
        let mut v = |lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
        let state = TcState {
            ud: v(-2.0, 2.0),
            us: v(-2.0, 2.0),
            s: v(0.0, 1.0).into_iter().map(|x| x.round()).collect(),
        };
        let x = rand_spikes(n_in, &mut rng);
        let (a, sa) = tclif_step(&core, &state, &x).unwrap();
        let (b, sb) = ihclif_step(&ihc, &state, &x).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&a.ud) != bits(&b.ud) || bits(&a.us) != bits(&b.us) || bits(&sa) != bits(&sb) {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}
