//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Property criteria (1–4, 8–10) fail the run when red. The trend criteria (5–7)
//! compare trained models on a desk-scale synthetic task; they are reported but do
//! not fail the run, since a red trend is a finding rather than a regression.
//! `ACCEPTANCE_SKIP_TRENDS=1` skips them (about 15 training runs) for quick checks.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spiking_leaf::audio::{mix_noise, scaled_noise, snr_db, AudioBuffer, NoiseSpec};
use spiking_leaf::config::{FeatureKind, LossConfig, NeuronKind, OptimConfig, PipelineConfig};
use spiking_leaf::dataset::{synth_noise, synthesize, Dataset, SynthConfig};
use spiking_leaf::evaluation::{snr_sweep, train_model, AblationSpec, Experiment};
use spiking_leaf::frontend::{pcen_forward, LearnableFrontend, PcenForm, PcenParams, PcenState, Spectrogram};
use spiking_leaf::neurons::lif::{lif_step, LifLayer, LifState};
use spiking_leaf::neurons::two_compartment::{ihclif_step, tclif_step, IhcLifLayer, LateralMask, TcLifLayer, TcState};
use spiking_leaf::tensor::Matrix;
use spiking_leaf::training::gradcheck::tiny_pipeline_config;
use spiking_leaf::training::{Pipeline, Trainer};

const BIN: &str = env!("CARGO_BIN_EXE_spiking-leaf");
const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn main() -> ExitCode {
    let mut hard_failures = 0;
    let mut trends: Option<TrendRuns> = None;
    let skip_trends = std::env::var_os("ACCEPTANCE_SKIP_TRENDS").is_some_and(|v| v != "0");
    for id in 1..=10 {
        let (name, trend) = match id {
            1 => ("gradient correctness", false),
            2 => ("reduction identity", false),
            3 => ("equation oracles", false),
            4 => ("constraint preservation", false),
            5 => ("regularization trend", true),
            6 => ("feature-learnability trend", true),
            7 => ("noise-robustness trend", true),
            8 => ("SNR mixer exactness", false),
            9 => ("determinism", false),
            _ => ("frequency selectivity", false),
        };
        if trend && skip_trends {
            println!("criterion {id:>2} SKIP {name}: ACCEPTANCE_SKIP_TRENDS is set");
            continue;
        }
        let o = match id {
            1 => gradient_correctness(),
            2 => reduction_identity(),
            3 => equation_oracles(),
            4 => constraint_preservation(),
            5..=7 => {
                let runs = trends.get_or_insert_with(TrendRuns::run);
                match id {
                    5 => runs.regularization(),
                    6 => runs.learnability(),
                    _ => runs.robustness(),
                }
            }
            8 => snr_exactness(),
            9 => determinism(),
            _ => frequency_selectivity(),
        };
        println!(
            "criterion {id:>2} {} {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.passed && !trend {
            hard_failures += 1;
        }
    }
    if hard_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn gradient_correctness() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let status = Command::new(BIN)
        .args(["--seed", "0", "--out"])
        .arg(dir.path())
        .args(["gradcheck", "--epsilon", "1e-4", "--tolerance", "1e-3"])
        .output()
        .unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("gradcheck.json")).unwrap()).unwrap();
    let err = report["max_rel_error"].as_f64().unwrap();
    outcome(
        status.status.success() && err <= 1e-3 && secs < 10.0,
        format!(
            "max relative error {err:.2e} (≤ 1e-3) over {} entries in {secs:.2}s (< 10 s)",
            report["checked"]
        ),
    )
}

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

fn rand_tc(n_in: usize, n: usize, rng: &mut impl Rng) -> TcLifLayer {
    let w = rand_matrix(n_in, n, 1.5, rng);
    let mut v = |lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
    let (b, beta_d, beta_s, gamma) = (v(-0.5, 0.5), v(-0.5, 0.5), v(-0.5, 0.5), v(0.0, 1.5));
    TcLifLayer::new(w, b, beta_d, beta_s, gamma, rng.gen_range(0.5..1.5)).unwrap()
}

fn reduction_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let failures = (0..1000)
        .filter(|_| {
            let (n_in, n) = (rng.gen_range(1..8), rng.gen_range(1..8));
            let core = rand_tc(n_in, n, &mut rng);
            let ihc = IhcLifLayer::from_core(core.clone(), LateralMask::ALL);
            let mut v = |lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
            let state = TcState {
                ud: v(-2.0, 2.0),
                us: v(-2.0, 2.0),
                s: v(0.0, 1.0).into_iter().map(f64::round).collect(),
            };
            let x = rand_spikes(n_in, &mut rng);
            let (a, sa) = tclif_step(&core, &state, &x).unwrap();
            let (b, sb) = ihclif_step(&ihc, &state, &x).unwrap();
            bits(&a.ud) != bits(&b.ud) || bits(&a.us) != bits(&b.us) || bits(&sa) != bits(&sb)
        })
        .count();
    outcome(
        failures == 0,
        format!("{failures} bitwise mismatches in 1000 random triples"),
    )
}

fn heaviside(x: f64, th: f64) -> f64 {
    if x >= th {
        1.0
    } else {
        0.0
    }
}

fn equation_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut lif_err, mut tc_err, mut pcen_err, mut spike_mismatch) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for _ in 0..100 {
        // LIF
        let (n_in, n) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let w = rand_matrix(n_in, n, 1.5, &mut rng);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let v_th = rng.gen_range(0.5..1.5);
        let layer = LifLayer::new(w.clone(), b.clone(), beta, v_th).unwrap();
        let (mut state, mut u, mut s) = (LifState::zeros(n), vec![0.0; n], vec![0.0; n]);
        for _ in 0..10 {
            let x = rand_spikes(n_in, &mut rng);
            let (next, out) = lif_step(&layer, &state, &x).unwrap();
            for j in 0..n {
                let i: f64 = b[j] + (0..n_in).map(|k| w.get(k, j) * x[k]).sum::<f64>();
                u[j] = layer.beta(j) * u[j] + i - v_th * s[j];
                s[j] = heaviside(u[j], v_th);
                lif_err = lif_err.max((next.u[j] - u[j]).abs());
                spike_mismatch += (out[j] != s[j]) as usize;
            }
            state = next;
        }

        // TC-LIF
        let l = rand_tc(n_in, n, &mut rng);
        let (mut state, mut ud, mut us, mut s) = (TcState::zeros(n), vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for _ in 0..10 {
            let x = rand_spikes(n_in, &mut rng);
            let (next, _) = tclif_step(&l, &state, &x).unwrap();
            let (ud0, us0, s0) = (ud.clone(), us.clone(), s.clone());
            for i in 0..n {
                let cur: f64 = l.b[i] + (0..n_in).map(|k| l.w.get(k, i) * x[k]).sum::<f64>();
                ud[i] = ud0[i] + l.beta_d[i] * us0[i] + cur - l.gamma[i] * s0[i];
                us[i] = us0[i] + l.beta_s[i] * ud0[i] - l.v_th * s0[i];
                s[i] = heaviside(us[i], l.v_th);
                tc_err = tc_err.max((next.ud[i] - ud[i]).abs()).max((next.us[i] - us[i]).abs());
                spike_mismatch += (next.s[i] != s[i]) as usize;
            }
            state = next;
        }

        // PCEN
        let c = rng.gen_range(1..5);
        let mut p = PcenParams::new(c, 0.9, 1.0, 0.5, 0.04, 1e-6, PcenForm::Paper).unwrap();
        for k in 0..c {
            p.log_alpha[k] = rng.gen_range(0.2f64..1.0).ln();
            p.log_delta[k] = rng.gen_range(0.01f64..3.0).ln();
            p.log_r[k] = rng.gen_range(0.1f64..1.0).ln();
        }
        p.s_logit = rng.gen_range(-4.0..0.0);
        let values: Vec<f64> = (0..10 * c).map(|_| rng.gen_range(0.0..5.0)).collect();
        let f = Spectrogram::new(10, c, values.clone(), 160);
        let (out, _) = pcen_forward(&f, &p, &PcenState { m: vec![0.0; c] }).unwrap();
        let s_rate = 1.0 / (1.0 + (-p.s_logit).exp());
        let mut m = vec![0.0; c];
        for t in 0..10 {
            for k in 0..c {
                let e = values[t * c + k];
                m[k] = (1.0 - s_rate) * m[k] + s_rate * e;
                let (alpha, delta, r) = (p.log_alpha[k].exp(), p.log_delta[k].exp(), p.log_r[k].exp());
                let want = (e / ((1e-6 + m[k]).powf(alpha) + delta)).powf(r) - delta.powf(r);
                pcen_err = pcen_err.max((out.get(t, k) - want).abs());
            }
        }
    }
    outcome(
        lif_err <= 1e-12 && tc_err <= 1e-12 && pcen_err <= 1e-12 && spike_mismatch == 0,
        format!(
            "max |Δ| LIF {lif_err:.1e}, TC-LIF {tc_err:.1e}, PCEN {pcen_err:.1e} (≤ 1e-12); {spike_mismatch} spike mismatches"
        ),
    )
}

fn tone(hz: f64, secs: f64, phase: f64) -> AudioBuffer {
    let n = (secs * 16_000.0) as usize;
    AudioBuffer::new(
        (0..n)
            .map(|i| 0.4 * (2.0 * PI * hz * i as f64 / 16_000.0 + phase).sin())
            .collect(),
        16_000,
    )
    .unwrap()
}

fn constraint_preservation() -> Outcome {
    let mut cfg = tiny_pipeline_config();
    cfg.n_filters = 8;
    cfg.encoder.neurons = Some(6);
    let p = Pipeline::init(&cfg, 3).unwrap();
    let data: Vec<_> = (0..8)
        .map(|i| {
            let hz = if i % 2 == 0 { 300.0 } else { 3000.0 } * (1.0 + 0.02 * (i / 2) as f64);
            p.example(tone(hz, 0.1, i as f64), i % 2).unwrap()
        })
        .collect();
    let optim = OptimConfig {
        learning_rate: 0.05,
        batch_size: 2,
        ..OptimConfig::default()
    };
    let mut t = Trainer::new(p, optim, LossConfig::default(), 3, 1).unwrap();
    let steps = 500;
    for _ in 0..steps / 4 {
        t.train_epoch(&data).unwrap();
    }
    let (wf, wli) = t.pipeline.lateral_weights().unwrap();
    let n = wf.rows;
    let diag_nonzero = (0..n).filter(|&i| wf.get(i, i) != 0.0 || wli.get(i, i) != 0.0).count();
    let min_li = wli.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let off_diag = wf.data.iter().filter(|v| **v != 0.0).count();
    outcome(
        diag_nonzero == 0 && min_li >= 0.0,
        format!("after {steps} Adam steps: {diag_nonzero} nonzero diagonal entries, min(W_LI) = {min_li}, {off_diag} nonzero W_f entries"),
    )
}

fn snr_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let clean = AudioBuffer::new(
            (0..rng.gen_range(800..16_000))
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
            16_000,
        )
        .unwrap();
        let noise = AudioBuffer::new(
            (0..rng.gen_range(400..20_000))
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
            16_000,
        )
        .unwrap();
        let snr = rng.gen_range(-10.0..30.0);
        let spec = NoiseSpec { noise, snr_db: snr };
        let (added, _) = scaled_noise(&clean, &spec, i).unwrap();
        let mixed = mix_noise(&clean, &spec, i).unwrap();
        let residual: Vec<f64> = mixed
            .samples()
            .iter()
            .zip(clean.samples())
            .map(|(m, c)| m - c)
            .collect();
        worst = worst
            .max((snr_db(clean.samples(), &added) - snr).abs())
            .max((snr_db(clean.samples(), &residual) - snr).abs());
    }
    outcome(
        worst <= 1e-6,
        format!("max round-trip error {worst:.2e} dB over 100 triples (≤ 1e-6)"),
    )
}

fn frequency_selectivity() -> Outcome {
    let fe = LearnableFrontend::new(40, 16_000, PcenForm::Paper).unwrap();
    let wins = (0..40)
        .filter(|&n| {
            let e = fe.energy(&tone(fe.bank.center_hz(n), 0.25, 0.0)).unwrap();
            let frame = e.frame(e.frames / 2);
            (0..frame.len()).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap() == n
        })
        .count();
    outcome(
        wins == 40,
        format!("{wins}/40 filters peak at their own center frequency"),
    )
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Runs the same command sequence in two fresh directories and compares every artifact.
fn determinism() -> Outcome {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let specs = root.join("specs.json");
        std::fs::write(
            &specs,
            r#"[{"feature":"fbank","neuron":"lif","use_if":false,"use_ili":false,"use_lsr":false},
                {"feature":"learnable","neuron":"ihc-lif","use_if":true,"use_ili":true,"use_lsr":true}]"#,
        )
        .unwrap();
        let cli = |args: &[&str]| {
            let o = Command::new(BIN)
                .current_dir(root)
                .args(["--seed", "5", "--threads", "1"])
                .args(args)
                .output()
                .unwrap();
            assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
            o.stdout
        };
        let mut stdout = Vec::new();
        let data = [
            "--train-manifest",
            "corpus/train.tsv",
            "--test-manifest",
            "corpus/test.tsv",
        ];
        stdout.extend(cli(&[
            "--out",
            "corpus",
            "synth",
            "--classes",
            "3",
            "--train-per-class",
            "3",
            "--test-per-class",
            "2",
        ]));
        stdout.extend(cli(&[&["--out", "train", "train", "--epochs", "2"][..], &data].concat()));
        stdout.extend(cli(&[
            "--out",
            "eval",
            "eval",
            "--test-manifest",
            "corpus/test.tsv",
            "--checkpoint",
            "train/checkpoint.bin",
        ]));
        stdout.extend(cli(&[
            "--out",
            "sweep",
            "sweep-snr",
            "--test-manifest",
            "corpus/test.tsv",
            "--checkpoint",
            "train/checkpoint.bin",
            "--noise",
            "corpus/noise.wav",
            "--snr",
            "inf",
            "--snr",
            "0",
        ]));
        stdout.extend(cli(&[
            "--out",
            "enc",
            "encode",
            "corpus/test/00000.wav",
            "--checkpoint",
            "train/checkpoint.bin",
            "--npy",
        ]));
        stdout.extend(cli(&[
            &["--out", "ablate", "ablate", "--epochs", "1", "--specs", "specs.json"][..],
            &data,
        ]
        .concat()));
        stdout.extend(cli(&["--out", "grad", "gradcheck"]));
        stdout.extend(cli(&["inspect", "train/checkpoint.bin"]));
        (snapshot(root), stdout)
    };
    let (a, b) = (run(), run());
    let differing: Vec<String> =
        a.0.iter()
            .filter(|(k, v)| b.0.get(*k) != Some(*v))
            .map(|(k, _)| k.display().to_string())
            .collect();
    let same = differing.is_empty() && a.0.len() == b.0.len() && a.1 == b.1;
    outcome(
        same,
        if same {
            format!(
                "{} artifacts and stdout byte-identical across two single-threaded runs of 8 commands",
                a.0.len()
            )
        } else {
            format!("differing artifacts: {differing:?}")
        },
    )
}

/// Desk-scale stand-in for the spoken-digit task; see the README for the choice of values.
/// The encoder bias of 1.5 wakes the two-compartment neurons, about half of which start
/// silent; plain LIF encoders saturate with it on non-negative PCEN input, so they keep 0.
fn toy_task(neuron: NeuronKind) -> (Experiment, SynthConfig) {
    let mut pipeline = PipelineConfig::default();
    pipeline.pcen.alpha = 0.5;
    pipeline.encoder.input_gain = 3.0;
    pipeline.encoder.bias = if neuron == NeuronKind::Lif { 0.0 } else { 1.5 };
    let exp = Experiment {
        pipeline,
        loss: LossConfig::default(),
        optim: OptimConfig {
            epochs: 10,
            ..OptimConfig::default()
        },
        threads: 1,
    };
    let synth = SynthConfig {
        train_per_class: 30,
        test_per_class: 30,
        formant_jitter: 0.35,
        background: 0.15,
        ..SynthConfig::default()
    };
    (exp, synth)
}

#[derive(Clone, Copy)]
struct RunStats {
    clean: f64,
    rate: f64,
    noisy: f64,
}

/// Per seed: full model with and without the rate penalty, the model without lateral
/// pathways, and LIF encoders on learnable vs fixed features.
struct TrendRuns {
    full: Vec<RunStats>,
    no_lsr: Vec<RunStats>,
    no_lateral: Vec<RunStats>,
    learnable_lif: Vec<RunStats>,
    fbank_lif: Vec<RunStats>,
    reg_minutes: f64,
}

impl TrendRuns {
    fn run() -> Self {
        let (_, synth) = toy_task(NeuronKind::IhcLif);
        let (train, test) = synthesize(&synth).unwrap();
        let noise = synth_noise(5.0, 99).unwrap();
        let go = |spec: AblationSpec, seed: u64, train: &Dataset, test: &Dataset| {
            let exp = spec.apply(&toy_task(spec.neuron).0).unwrap();
            let (m, _) = train_model(&exp, seed, train).unwrap();
            let r = snr_sweep(&m, test, &[f64::INFINITY, 0.0], std::slice::from_ref(&noise), seed, 1).unwrap();
            RunStats {
                clean: r[0].1.accuracy,
                rate: r[0].1.firing_rate,
                noisy: r[1].1.accuracy,
            }
        };
        use FeatureKind::*;
        use NeuronKind::*;
        let spec = |feature, neuron, use_if, use_ili, use_lsr| AblationSpec {
            feature,
            neuron,
            use_if,
            use_ili,
            use_lsr,
        };
        let t0 = Instant::now();
        let full: Vec<_> = SEEDS
            .iter()
            .map(|&s| go(spec(Learnable, IhcLif, true, true, true), s, &train, &test))
            .collect();
        let no_lsr: Vec<_> = SEEDS
            .iter()
            .map(|&s| go(spec(Learnable, IhcLif, true, true, false), s, &train, &test))
            .collect();
        let reg_minutes = t0.elapsed().as_secs_f64() / 60.0;
        let no_lateral = SEEDS
            .iter()
            .map(|&s| go(spec(Learnable, IhcLif, false, false, true), s, &train, &test))
            .collect();
        let learnable_lif = SEEDS
            .iter()
            .map(|&s| go(spec(Learnable, Lif, false, false, false), s, &train, &test))
            .collect();
        let fbank_lif = SEEDS
            .iter()
            .map(|&s| go(spec(Fbank, Lif, false, false, false), s, &train, &test))
            .collect();
        Self {
            full,
            no_lsr,
            no_lateral,
            learnable_lif,
            fbank_lif,
            reg_minutes,
        }
    }

    fn regularization(&self) -> Outcome {
        let mut ok = 0;
        let mut parts = Vec::new();
        for (i, (a, b)) in self.full.iter().zip(&self.no_lsr).enumerate() {
            let reduction = 1.0 - a.rate / b.rate;
            let drop = (b.clean - a.clean) * 100.0;
            let pass = reduction >= 0.30 && drop <= 3.0;
            ok += pass as usize;
            parts.push(format!(
                "seed {i}: rate {:.3}→{:.3} (−{:.0}%), acc {:.1}→{:.1}%",
                b.rate,
                a.rate,
                reduction * 100.0,
                b.clean * 100.0,
                a.clean * 100.0
            ));
        }
        outcome(
            ok >= 2 && self.reg_minutes < 30.0,
            format!(
                "{ok}/3 seeds satisfy; {}; {:.1} min",
                parts.join("; "),
                self.reg_minutes
            ),
        )
    }

    fn learnability(&self) -> Outcome {
        let ok = self
            .learnable_lif
            .iter()
            .zip(&self.fbank_lif)
            .filter(|(a, b)| a.clean >= b.clean)
            .count();
        let parts: Vec<String> = self
            .learnable_lif
            .iter()
            .zip(&self.fbank_lif)
            .enumerate()
            .map(|(i, (a, b))| {
                format!(
                    "seed {i}: learnable {:.1}% vs fbank {:.1}%",
                    a.clean * 100.0,
                    b.clean * 100.0
                )
            })
            .collect();
        outcome(ok >= 2, format!("{ok}/3 seeds; {}", parts.join("; ")))
    }

    fn robustness(&self) -> Outcome {
        let ok = self
            .full
            .iter()
            .zip(&self.no_lateral)
            .filter(|(a, b)| a.noisy > b.noisy)
            .count();
        let parts: Vec<String> = self
            .full
            .iter()
            .zip(&self.no_lateral)
            .enumerate()
            .map(|(i, (a, b))| {
                format!(
                    "seed {i}: 0 dB IHC-LIF {:.1}% vs no lateral {:.1}%",
                    a.noisy * 100.0,
                    b.noisy * 100.0
                )
            })
            .collect();
        outcome(ok >= 2, format!("{ok}/3 seeds; {}", parts.join("; ")))
    }
}
