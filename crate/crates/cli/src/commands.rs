use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde_json::json;
use spiking_leaf::audio::{load_wav, resample, AudioBuffer, PIPELINE_RATE};
use spiking_leaf::config::RunConfig;
use spiking_leaf::dataset::{write_corpus, Dataset, SynthConfig};
use spiking_leaf::evaluation::{
    default_grid, export_raster, prepare, results_csv, run_ablation_grid, snr_sweep, AblationSpec, EvalResult,
    Experiment,
};
use spiking_leaf::io::{parse_raster_npy, raster_npy, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
use spiking_leaf::spikes::spike_rate;
use spiking_leaf::tensor::Parameters;
use spiking_leaf::training::gradcheck::{check_pipeline, tiny_pipeline_config};
use spiking_leaf::training::{evaluate, Pipeline, Trainer};
use spiking_leaf::{Error, Result};

use crate::{Cli, Command, DataArgs};

/// Defaults, then the config file, then flags.
fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.exists() {
                return Err(Error::invalid("config", format!("{} does not exist", p.display())));
            }
            RunConfig::from_json(&std::fs::read_to_string(p)?)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.seeds.clear();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn overlay(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(p) = &data.train_manifest {
        cfg.train_manifest = Some(p.clone());
    }
    if let Some(p) = &data.test_manifest {
        cfg.test_manifest = Some(p.clone());
    }
    if let Some(p) = &data.checkpoint {
        cfg.checkpoint = Some(p.clone());
    }
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(&cfg.out_dir)
}

fn experiment(cfg: &RunConfig) -> Experiment {
    Experiment {
        pipeline: cfg.pipeline.clone(),
        loss: cfg.loss.clone(),
        optim: cfg.optim.clone(),
        threads: cfg.threads,
    }
}

fn model_from(cfg: &RunConfig) -> Result<(Pipeline, Vec<String>)> {
    let path = cfg.require("checkpoint", &cfg.checkpoint)?;
    read_checkpoint(path)
}

fn load_noise(paths: &[PathBuf]) -> Result<Vec<AudioBuffer>> {
    paths.iter().map(|p| resample(&load_wav(p)?, PIPELINE_RATE)).collect()
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Encode {
            wav,
            checkpoint,
            stem,
            npy,
        } => {
            if let Some(c) = checkpoint {
                cfg.checkpoint = Some(c.clone());
            }
            cfg.validate()?;
            let pipeline = match &cfg.checkpoint {
                Some(p) => read_checkpoint(p)?.0,
                None => Pipeline::init(&cfg.pipeline, cfg.seed)?,
            };
            let audio = resample(&load_wav(wav)?, PIPELINE_RATE)?;
            let pred = pipeline.predict(&audio)?;
            let stem = stem
                .clone()
                .or_else(|| wav.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .unwrap_or_else(|| "encoded".into());
            let dir = out_dir(&cfg)?;
            export_raster(&pred.spikes, &pred.features, dir, &stem)?;
            if *npy {
                std::fs::write(dir.join(format!("{stem}.raster.npy")), raster_npy(&pred.spikes))?;
            }
            let stats = json!({
                "frames": pred.spikes.steps(),
                "neurons": pred.spikes.neurons(),
                "firing_rate": spike_rate(&pred.spikes)?,
            });
            println!("{stats}");
        }
        Command::Train { data, epochs } => {
            overlay(&mut cfg, data);
            if let Some(e) = epochs {
                cfg.optim.epochs = *e;
            }
            cfg.validate()?;
            let train = Dataset::from_manifest(cfg.require("train_manifest", &cfg.train_manifest)?, None)?;
            cfg.pipeline.classifier.n_classes = train.labels.len();
            let pipeline = Pipeline::init(&cfg.pipeline, cfg.seed)?;
            let examples = prepare(&pipeline, &train)?;
            let mut trainer = Trainer::new(pipeline, cfg.optim.clone(), cfg.loss.clone(), cfg.seed, cfg.threads)?;
            let dir = out_dir(&cfg)?.to_path_buf();
            let mut report = String::new();
            for _ in 0..cfg.optim.epochs {
                let r = trainer.train_epoch(&examples)?;
                // Wall-clock time goes to stderr so the artifacts stay reproducible.
                eprintln!(
                    "epoch {} loss {:.4} acc {:.3} rate {:.3} ({:.1}s)",
                    r.epoch, r.loss, r.accuracy, r.firing_rate, r.wall_clock_s
                );
                report.push_str(&serde_json::to_string(&r)?);
                report.push('\n');
            }
            std::fs::write(dir.join("report.jsonl"), report)?;
            write_checkpoint(dir.join("checkpoint.bin"), &trainer.pipeline, &train.labels)?;
            if let Some(path) = &cfg.test_manifest {
                let test = Dataset::from_manifest(path, Some(&train.labels))?;
                let s = evaluate(&trainer.pipeline, &prepare(&trainer.pipeline, &test)?, cfg.threads)?;
                println!(
                    "{}",
                    json!({"accuracy": s.accuracy, "firing_rate": s.firing_rate, "n": test.len()})
                );
            }
        }
        Command::Eval { data } => {
            overlay(&mut cfg, data);
            cfg.validate()?;
            let (model, labels) = model_from(&cfg)?;
            let test = Dataset::from_manifest(cfg.require("test_manifest", &cfg.test_manifest)?, Some(&labels))?;
            let s = evaluate(&model, &prepare(&model, &test)?, cfg.threads)?;
            let body = json!({"accuracy": s.accuracy, "firing_rate": s.firing_rate, "n": test.len()});
            std::fs::write(out_dir(&cfg)?.join("eval.json"), format!("{body}\n"))?;
            println!("{body}");
        }
        Command::SweepSnr { data, noise, snrs } => {
            overlay(&mut cfg, data);
            if !noise.is_empty() {
                cfg.noise = noise.clone();
            }
            if !snrs.is_empty() {
                cfg.snrs_db = snrs.clone();
            }
            cfg.validate()?;
            let (model, labels) = model_from(&cfg)?;
            let test = Dataset::from_manifest(cfg.require("test_manifest", &cfg.test_manifest)?, Some(&labels))?;
            let noise = load_noise(&cfg.noise)?;
            let spec = AblationSpec::of(&Experiment {
                pipeline: model.config.clone(),
                ..experiment(&cfg)
            });
            let rows: Vec<EvalResult> = snr_sweep(&model, &test, &cfg.snrs_db, &noise, cfg.seed, cfg.threads)?
                .into_iter()
                .map(|(snr, s)| EvalResult {
                    spec,
                    seed: cfg.seed,
                    snr_db: snr.is_finite().then_some(snr),
                    accuracy: s.accuracy,
                    firing_rate: s.firing_rate,
                })
                .collect();
            let csv = results_csv(&rows);
            std::fs::write(out_dir(&cfg)?.join("snr_sweep.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Ablate { data, specs, epochs } => {
            overlay(&mut cfg, data);
            if let Some(e) = epochs {
                cfg.optim.epochs = *e;
            }
            cfg.validate()?;
            let specs: Vec<AblationSpec> = match specs {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
                    .map_err(|e| Error::invalid("specs", e.to_string()))?,
                None => default_grid(),
            };
            let train = Dataset::from_manifest(cfg.require("train_manifest", &cfg.train_manifest)?, None)?;
            let test = Dataset::from_manifest(cfg.require("test_manifest", &cfg.test_manifest)?, Some(&train.labels))?;
            cfg.pipeline.classifier.n_classes = train.labels.len();
            let rows = run_ablation_grid(&specs, &experiment(&cfg), &train, &test, &cfg.seed_list())?;
            let csv = results_csv(&rows);
            std::fs::write(out_dir(&cfg)?.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Gradcheck { epsilon, tolerance } => {
            let t0 = std::time::Instant::now();
            let report = check_pipeline(&tiny_pipeline_config(), 8, cfg.seed, *epsilon, *tolerance)?;
            if let Some(o) = &cli.out {
                std::fs::create_dir_all(o)?;
                std::fs::write(o.join("gradcheck.json"), serde_json::to_string_pretty(&report)?)?;
            }
            println!(
                "max relative error {:.3e} over {} entries (tolerance {:e}): {}",
                report.max_rel_error,
                report.checked,
                report.tolerance,
                if report.passed { "PASS" } else { "FAIL" }
            );
            if let Some(w) = &report.worst {
                println!(
                    "worst: {}[{}] analytic {:.6e} numeric {:.6e}",
                    w.tensor, w.index, w.analytic, w.numeric
                );
            }
            eprintln!("gradcheck took {:.2}s", t0.elapsed().as_secs_f64());
            if !report.passed {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Inspect { path } => println!("{}", serde_json::to_string_pretty(&inspect(path)?)?),
        Command::Synth {
            classes,
            train_per_class,
            test_per_class,
            formant_jitter,
            background,
        } => {
            let synth = SynthConfig {
                classes: *classes,
                train_per_class: *train_per_class,
                test_per_class: *test_per_class,
                formant_jitter: *formant_jitter,
                background: *background,
                seed: cfg.seed,
                ..SynthConfig::default()
            };
            let dir = out_dir(&cfg)?;
            write_corpus(dir, &synth)?;
            println!(
                "{}",
                json!({"dir": dir, "train": classes * train_per_class, "test": classes * test_per_class})
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn inspect(path: &Path) -> Result<serde_json::Value> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"\x93NUMPY") {
        let s = parse_raster_npy(&bytes)?;
        return Ok(json!({"kind": "raster", "steps": s.steps(), "neurons": s.neurons(), "spikes": s.count()}));
    }
    if bytes.starts_with(b"RIFF") {
        let a = load_wav(path)?;
        return Ok(json!({
            "kind": "wav",
            "sample_rate": a.sample_rate(),
            "samples": a.len(),
            "duration_s": a.duration_secs(),
            "peak": a.peak(),
            "power": a.power(),
        }));
    }
    if bytes.len() > 8
        && bytes[8..].starts_with(b"{")
        && bytes
            .windows(CHECKPOINT_MAGIC.len())
            .any(|w| w == CHECKPOINT_MAGIC.as_bytes())
    {
        let (model, labels) = read_checkpoint(path)?;
        let tensors: Vec<_> = model
            .named_tensors()
            .into_iter()
            .map(|t| {
                let (lo, hi) = t
                    .data
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                json!({"name": t.name, "shape": t.shape, "min": lo, "max": hi})
            })
            .collect();
        let lateral = model.lateral_weights().map(|(wf, wli)| {
            let n = wf.rows;
            json!({
                "w_f_diag_zero": (0..n).all(|i| wf.get(i, i) == 0.0),
                "w_li_diag_zero": (0..n).all(|i| wli.get(i, i) == 0.0),
                "w_li_min": wli.data.iter().cloned().fold(f64::INFINITY, f64::min),
            })
        });
        return Ok(json!({
            "kind": "checkpoint",
            "config": model.config,
            "labels": labels,
            "parameters": model.param_count(),
            "tensors": tensors,
            "lateral": lateral,
        }));
    }
    Err(Error::Format {
        what: "input",
        reason: "not a checkpoint, WAV or .npy file".into(),
    })
}
