mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "spiking-leaf",
    version,
    about = "Spiking auditory front-end: encode, train, evaluate"
)]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 guarantees bit-reproducible output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub test_manifest: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Encode one WAV into a spike raster and its feature matrix.
    Encode {
        wav: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Base name of the output files (defaults to the WAV's file stem).
        #[arg(long)]
        stem: Option<String>,
        /// Also write the dense raster as `.npy`.
        #[arg(long)]
        npy: bool,
    },
    /// Train on a manifest; writes `checkpoint.bin` and `report.jsonl`.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Accuracy and firing rate of a checkpoint on a test manifest.
    Eval {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Accuracy of a checkpoint on noise-mixed copies of the test set.
    SweepSnr {
        #[command(flatten)]
        data: DataArgs,
        /// Noise WAV (repeatable).
        #[arg(long)]
        noise: Vec<PathBuf>,
        /// SNR in dB (repeatable; `inf` for clean).
        #[arg(long = "snr", allow_negative_numbers = true)]
        snrs: Vec<f64>,
    },
    /// Train and evaluate an ablation grid; writes `ablation.csv`.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        /// JSON list of ablation specs (defaults to the full table).
        #[arg(long)]
        specs: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Finite-difference check of the tiny end-to-end pipeline.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Summarize a checkpoint, WAV or `.npy` raster.
    Inspect { path: PathBuf },
    /// Write the synthetic keyword corpus (WAVs, manifests, noise).
    Synth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        train_per_class: usize,
        #[arg(long, default_value_t = 10)]
        test_per_class: usize,
        /// Relative formant jitter across speakers.
        #[arg(long, default_value_t = 0.08)]
        formant_jitter: f64,
        /// Background noise level relative to the vowel peak.
        #[arg(long, default_value_t = 0.02)]
        background: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            let body = serde_json::json!({
                "error": e.kind(),
                "field": e.field(),
                "message": e.to_string(),
            });
            eprintln!("{body}");
            ExitCode::from(2)
        }
    }
}
