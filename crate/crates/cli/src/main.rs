use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use pmfq::quantization::{read_pqw, PQW_MAGIC};
use pmfq::runner::{evaluate_weights, load_splits, parse_config, read_float_weights, run_experiment, Arch, DatasetKind};
use pmfq::{Error, ExperimentConfig, Method};

#[derive(Parser)]
#[command(name = "pmfq", version, about = "Train and evaluate quantized networks on the probability simplex")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training experiment from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report validation and test accuracy of saved weights (`.pqw` or raw f64).
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        arch: String,
        #[arg(long)]
        dataset: String,
        /// Reads data location, blob shape and calibration size from a config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Seed of the synthetic blob dataset.
        #[arg(long)]
        seed: Option<u64>,
        /// Training examples used to recompute batch-norm statistics.
        #[arg(long)]
        calibration: Option<usize>,
    },
    /// Run the oracle self-checks of the numerical core.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Process exit codes by failure category.
mod exit {
    pub const OTHER: u8 = 1;
    pub const PARSE: u8 = 2;
    pub const DIVERGENCE: u8 = 3;
    pub const IO: u8 = 4;
    pub const FORMAT: u8 = 5;
    pub const VERIFY: u8 = 6;
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Parse { .. }) => exit::PARSE,
        Some(Error::Divergence { .. }) => exit::DIVERGENCE,
        Some(Error::Io { .. }) => exit::IO,
        Some(Error::Format { .. }) => exit::FORMAT,
        _ => exit::OTHER,
    }
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let mut cfg = parse_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    let summary = run_experiment(&cfg)?;
    print!("{}", summary.to_text(&cfg));
    Ok(())
}

fn read_weights(path: &Path) -> anyhow::Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if bytes.starts_with(PQW_MAGIC) {
        Ok(read_pqw(path)?.values())
    } else {
        Ok(read_float_weights(path)?)
    }
}

#[allow(clippy::too_many_arguments)]
fn eval(
    weights: &Path,
    arch: &str,
    dataset: &str,
    config: Option<&Path>,
    data_dir: Option<PathBuf>,
    seed: Option<u64>,
    calibration: Option<usize>,
) -> anyhow::Result<()> {
    let arch = Arch::parse(arch).with_context(|| format!("unknown arch `{arch}`"))?;
    let dataset = DatasetKind::parse(dataset).with_context(|| format!("unknown dataset `{dataset}`"))?;
    let mut cfg = match config {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::new(dataset, arch, Method::Pmf),
    };
    cfg.arch = arch;
    cfg.dataset = dataset;
    if let Some(dir) = data_dir {
        cfg.data_dir = dir;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(n) = calibration {
        cfg.calibration_samples = n;
    }
    let w = read_weights(weights)?;
    let report = evaluate_weights(&w, &cfg, &load_splits(&cfg)?)?;
    println!("val_acc = {}", report.val_acc);
    println!("test_acc = {}", report.test_acc);
    Ok(())
}

fn verify(seed: u64) -> anyhow::Result<bool> {
    let checks = pmfq::verify::run_all(seed)?;
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} {} (worst {:e}, tolerance {:e})", c.name, c.worst, c.tolerance);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out } => train(&config, seed, out).map(|_| true),
        Command::Eval {
            weights,
            arch,
            dataset,
            config,
            data_dir,
            seed,
            calibration,
        } => eval(&weights, &arch, &dataset, config.as_deref(), data_dir, seed, calibration).map(|_| true),
        Command::Verify { seed } => verify(seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(exit::VERIFY),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
