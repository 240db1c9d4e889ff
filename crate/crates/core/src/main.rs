//! Command-line entry point for the experiment matrix.
//!
//! Flags mirror the experiment configuration. An optional plain key=value
//! config file supplies defaults; explicit flags always win.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::Parser;

use conformal_train::experiment::{run_experiment, ExperimentConfig};
use conformal_train::training::ParamGrid;

#[derive(Parser, Debug)]
#[command(
    name = "conformal-train",
    version,
    about = "Trains split-conformal predictors over a kernel bandwidth grid \
             and runs the binary MNIST experiment matrix"
)]
struct Cli {
    /// Plain key=value config file; explicit flags take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Comma-separated positive-class digits (default: 0-9).
    #[arg(long, value_delimiter = ',')]
    digits: Option<Vec<u8>>,
    /// Comma-separated dataset half-sizes (default: 5,10,20,40).
    #[arg(long = "n-sizes", value_delimiter = ',')]
    n_sizes: Option<Vec<usize>>,
    /// Replications per (digit, n_size) cell (default: 10).
    #[arg(long)]
    replications: Option<u32>,
    /// Root seed of the whole matrix (default: 42).
    #[arg(long)]
    seed: Option<u64>,
    /// Smallest grid exponent (default: -5).
    #[arg(long, allow_negative_numbers = true)]
    grid_min: Option<f64>,
    /// Largest grid exponent, exclusive of the grid (default: 10).
    #[arg(long, allow_negative_numbers = true)]
    grid_max: Option<f64>,
    /// Number of grid points (default: 10).
    #[arg(long)]
    grid_points: Option<usize>,
    /// MNIST images file, IDX format, optionally gzipped.
    #[arg(long)]
    mnist_images: Option<PathBuf>,
    /// MNIST labels file, IDX format, optionally gzipped.
    #[arg(long)]
    mnist_labels: Option<PathBuf>,
    /// Output directory for scores.csv, curves.csv, summary.csv
    /// (default: results).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    workers: Option<usize>,
}

/// The same knobs as the flags, as read from a config file.
#[derive(Debug, Default)]
struct FileConfig {
    digits: Option<Vec<u8>>,
    n_sizes: Option<Vec<usize>>,
    replications: Option<u32>,
    seed: Option<u64>,
    grid_min: Option<f64>,
    grid_max: Option<f64>,
    grid_points: Option<usize>,
    mnist_images: Option<PathBuf>,
    mnist_labels: Option<PathBuf>,
    out: Option<PathBuf>,
    workers: Option<usize>,
}

fn parse_scalar<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("config key {key}: cannot parse {value:?}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(|item| parse_scalar(key, item))
        .collect()
}

fn parse_config_file(path: &Path) -> Result<FileConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|err| format!("cannot read config file {}: {err}", path.display()))?;
    let mut config = FileConfig::default();
    for (number, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!(
                "config file {} line {}: expected key=value, got {line:?}",
                path.display(),
                number + 1
            ));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "digits" => config.digits = Some(parse_list(key, value)?),
            "n-sizes" => config.n_sizes = Some(parse_list(key, value)?),
            "replications" => config.replications = Some(parse_scalar(key, value)?),
            "seed" => config.seed = Some(parse_scalar(key, value)?),
            "grid-min" => config.grid_min = Some(parse_scalar(key, value)?),
            "grid-max" => config.grid_max = Some(parse_scalar(key, value)?),
            "grid-points" => config.grid_points = Some(parse_scalar(key, value)?),
            "mnist-images" => config.mnist_images = Some(PathBuf::from(value)),
            "mnist-labels" => config.mnist_labels = Some(PathBuf::from(value)),
            "out" => config.out = Some(PathBuf::from(value)),
            "workers" => config.workers = Some(parse_scalar(key, value)?),
            unknown => {
                return Err(format!(
                    "config file {} line {}: unknown key {unknown:?}",
                    path.display(),
                    number + 1
                ))
            }
        }
    }
    Ok(config)
}

fn build_config(cli: Cli) -> Result<ExperimentConfig, String> {
    let file = match &cli.config {
        Some(path) => parse_config_file(path)?,
        None => FileConfig::default(),
    };
    let grid = ParamGrid::new(
        cli.grid_min.or(file.grid_min).unwrap_or(-5.0),
        cli.grid_max.or(file.grid_max).unwrap_or(10.0),
        cli.grid_points.or(file.grid_points).unwrap_or(10),
    )
    .map_err(|err| err.to_string())?;
    let mnist_images = cli
        .mnist_images
        .or(file.mnist_images)
        .ok_or("missing --mnist-images (or mnist-images= in the config file)")?;
    let mnist_labels = cli
        .mnist_labels
        .or(file.mnist_labels)
        .ok_or("missing --mnist-labels (or mnist-labels= in the config file)")?;
    Ok(ExperimentConfig {
        digits: cli.digits.or(file.digits).unwrap_or_else(|| (0..=9).collect()),
        n_sizes: cli.n_sizes.or(file.n_sizes).unwrap_or_else(|| vec![5, 10, 20, 40]),
        replications: cli.replications.or(file.replications).unwrap_or(10),
        seed: cli.seed.or(file.seed).unwrap_or(42),
        grid,
        mnist_images,
        mnist_labels,
        out_dir: cli.out.or(file.out).unwrap_or_else(|| PathBuf::from("results")),
        workers: cli.workers.or(file.workers),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match build_config(cli) {
        Ok(config) => config,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::FAILURE;
        }
    };
    match run_experiment(&config) {
        Ok(report) => {
            eprintln!(
                "wrote {} score row(s), {} summary row(s) to {}",
                report.cells.len(),
                report.aggregates.len(),
                config.out_dir.display()
            );
            if report.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} cell(s) failed", report.failures.len());
                ExitCode::FAILURE
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
