//! The experiment harness: runs the full (digit, n_size, replication)
//! matrix, aggregates scores, and writes the CSV outputs.
//!
//! Cells are independent and run on a bounded worker pool, but results are
//! gathered and written in the fixed (digit, n_size, replication) order, so
//! the output bytes do not depend on the worker count or on scheduling. A
//! failed cell is logged with its coordinates and skipped; the remaining
//! cells still produce output.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::conformity::{DistanceCache, KernelFamily};
use crate::criteria::TieCounter;
use crate::data::{sample_task, DataError, MnistPool, TaskSpec};
use crate::dataset::{ObjectVector, SplitQuadruple};
use crate::training::{
    evaluate, train_all, ParamGrid, ScoreReport, TrainError, TrainedModel, TrainedModels,
    TrainingRegime,
};

/// Errors that abort the whole run (per-cell errors are logged instead).
#[derive(Error, Debug)]
pub enum ExperimentError {
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot start worker pool: {0}")]
    WorkerPool(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Full description of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Positive-class digits, one task family per digit.
    pub digits: Vec<u8>,
    /// Dataset half-sizes; every split part holds 2 * n_size observations.
    pub n_sizes: Vec<usize>,
    pub replications: u32,
    pub seed: u64,
    pub grid: ParamGrid,
    pub mnist_images: PathBuf,
    pub mnist_labels: PathBuf,
    pub out_dir: PathBuf,
    /// Worker threads; `None` uses one per core.
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |reason: String| Err(ExperimentError::InvalidConfig { reason });
        if self.digits.is_empty() {
            return fail("no digits selected".into());
        }
        if let Some(&bad) = self.digits.iter().find(|&&d| d > 9) {
            return fail(format!("digit {bad} outside 0..=9"));
        }
        let mut seen = [false; 10];
        for &digit in &self.digits {
            if std::mem::replace(&mut seen[digit as usize], true) {
                return fail(format!("digit {digit} listed twice"));
            }
        }
        if self.n_sizes.is_empty() {
            return fail("no n_sizes selected".into());
        }
        if let Some(&bad) = self.n_sizes.iter().find(|&&n| n < 2) {
            return fail(format!(
                "n_size {bad} too small: leave-one-out training needs at least 2"
            ));
        }
        if self.replications == 0 {
            return fail("replications must be at least 1".into());
        }
        Ok(())
    }
}

/// Coordinates of one cell of the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellKey {
    pub digit: u8,
    pub n_size: usize,
    pub replication: u32,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "digit={} n_size={} replication={}",
            self.digit, self.n_size, self.replication
        )
    }
}

/// Which side of the grid-search curve a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Test,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Test => "test",
        }
    }
}

/// One row of the curves output.
#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub regime: TrainingRegime,
    pub rho: f64,
    pub log_rho: f64,
    pub phase: Phase,
    pub value: f64,
}

/// Everything one cell produced.
#[derive(Debug, Clone)]
pub struct CellRecord {
    pub key: CellKey,
    pub report: ScoreReport,
    pub curves: Vec<CurvePoint>,
}

/// One row of the summary output.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub digit: u8,
    pub n_size: usize,
    pub score: &'static str,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub count: usize,
}

/// In-memory result of a run, mirroring the CSV outputs.
#[derive(Debug)]
pub struct ExperimentReport {
    pub cells: Vec<CellRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub failures: Vec<(CellKey, String)>,
}

/// The four reported score columns, in output order.
pub const SCORE_NAMES: [&str; 4] = [
    "pe_test_pe_train",
    "pe_test_of_train",
    "of_test_pe_train",
    "of_test_of_train",
];

fn score_by_name(report: &ScoreReport, name: &str) -> f64 {
    match name {
        "pe_test_pe_train" => report.pe_test_pe_train,
        "pe_test_of_train" => report.pe_test_of_train,
        "of_test_pe_train" => report.of_test_pe_train,
        "of_test_of_train" => report.of_test_of_train,
        other => unreachable!("unknown score column {other}"),
    }
}

/// Runs the whole matrix and writes scores.csv, curves.csv, and summary.csv
/// into the output directory. Cell failures are logged to stderr and
/// collected in the report; the caller decides the exit code.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let pool = MnistPool::load_idx(&config.mnist_images, &config.mnist_labels)?;

    let mut keys = Vec::new();
    for &digit in &config.digits {
        for &n_size in &config.n_sizes {
            for replication in 0..config.replications {
                keys.push(CellKey {
                    digit,
                    n_size,
                    replication,
                });
            }
        }
    }

    let run_cells = || {
        keys.par_iter()
            .map(|&key| run_cell(&pool, config, key).map_err(|err| (key, err.to_string())))
            .collect::<Vec<_>>()
    };
    let results = match config.workers {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|err| ExperimentError::WorkerPool(err.to_string()))?
            .install(run_cells),
        None => run_cells(),
    };

    let mut cells = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(cell) => cells.push(cell),
            Err(failure) => failures.push(failure),
        }
    }
    for (key, message) in &failures {
        eprintln!("cell {key} failed: {message}");
    }

    let aggregates = aggregate(&cells);
    std::fs::create_dir_all(&config.out_dir).map_err(|source| ExperimentError::Io {
        path: config.out_dir.clone(),
        source,
    })?;
    write_scores(config, &cells)?;
    write_curves(config, &cells)?;
    write_summary(config, &aggregates)?;

    Ok(ExperimentReport {
        cells,
        aggregates,
        failures,
    })
}

/// Runs one cell: sample, build the distance cache, train the four regimes,
/// evaluate the four scores, and trace both curve phases.
pub fn run_cell(
    pool: &MnistPool,
    config: &ExperimentConfig,
    key: CellKey,
) -> Result<CellRecord, ExperimentError> {
    let spec = TaskSpec {
        digit: key.digit,
        n_size: key.n_size,
        seed: config.seed,
        replication: key.replication,
    };
    let split = sample_task(pool, &spec)?;
    let objects: Vec<ObjectVector> = split
        .train()
        .iter()
        .chain(split.test().iter())
        .map(|z| z.object().clone())
        .collect();
    let family = KernelFamily::with_cache(Arc::new(DistanceCache::build(&objects)));
    let models = train_all(&split, &config.grid, &family)?;
    let report = evaluate(&models, &split, &family)?;
    let curves = trace_curves(&split, &family, &config.grid, &models)?;
    Ok(CellRecord {
        key,
        report,
        curves,
    })
}

fn model_for(models: &TrainedModels, regime: TrainingRegime) -> &TrainedModel {
    match regime {
        TrainingRegime::Pe => &models.pe,
        TrainingRegime::PrePe => &models.pre_pe,
        TrainingRegime::Of => &models.of,
        TrainingRegime::PreOf => &models.pre_of,
    }
}

/// Emits both curve phases for every regime: the stored training objective
/// and the regime's test score re-evaluated at every grid point. Ties hit
/// during curve tracing are deliberately not added to the cell's tie count;
/// they would double-count the evaluation at rho_star.
fn trace_curves(
    split: &SplitQuadruple,
    family: &KernelFamily,
    grid: &ParamGrid,
    models: &TrainedModels,
) -> Result<Vec<CurvePoint>, ExperimentError> {
    let scratch_ties = TieCounter::new();
    let mut curves = Vec::with_capacity(TrainingRegime::ALL.len() * 2 * grid.points());
    for regime in TrainingRegime::ALL {
        for &(rho, value) in model_for(models, regime).objective_curve() {
            curves.push(CurvePoint {
                regime,
                rho,
                log_rho: rho.ln(),
                phase: Phase::Train,
                value,
            });
        }
        for rho in grid.values() {
            let value = regime.test_score(split, family, rho, &scratch_ties)?;
            curves.push(CurvePoint {
                regime,
                rho,
                log_rho: rho.ln(),
                phase: Phase::Test,
                value,
            });
        }
    }
    Ok(curves)
}

/// Per-(digit, n_size, score) summary statistics over replications.
///
/// Standard deviation uses the n-1 denominator and is 0 for a single
/// replication; percentiles interpolate linearly between order statistics.
pub fn aggregate(cells: &[CellRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(u8, usize), Vec<&ScoreReport>> = BTreeMap::new();
    for cell in cells {
        groups
            .entry((cell.key.digit, cell.key.n_size))
            .or_default()
            .push(&cell.report);
    }
    let mut rows = Vec::with_capacity(groups.len() * SCORE_NAMES.len());
    for ((digit, n_size), reports) in groups {
        for name in SCORE_NAMES {
            let mut values: Vec<f64> = reports.iter().map(|r| score_by_name(r, name)).collect();
            values.sort_by(f64::total_cmp);
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            rows.push(AggregateRow {
                digit,
                n_size,
                score: name,
                mean,
                std: sample_std(&values, mean),
                median: percentile(&values, 0.5),
                p25: percentile(&values, 0.25),
                p75: percentile(&values, 0.75),
                count: values.len(),
            });
        }
    }
    rows
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let sum_sq: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (sum_sq / (values.len() - 1) as f64).sqrt()
}

/// Percentile by linear interpolation between the closest order statistics
/// of an already sorted slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = (sorted.len() - 1) as f64 * p;
    let low = rank.floor() as usize;
    let high = rank.ceil() as usize;
    if low == high {
        sorted[low]
    } else {
        sorted[low] + (rank - low as f64) * (sorted[high] - sorted[low])
    }
}

fn create(config: &ExperimentConfig, name: &str) -> Result<BufWriter<File>, ExperimentError> {
    let path = config.out_dir.join(name);
    let file = File::create(&path).map_err(|source| ExperimentError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(BufWriter::new(file))
}

fn flush_to(path: &PathBuf, mut writer: BufWriter<File>) -> Result<(), ExperimentError> {
    writer.flush().map_err(|source| ExperimentError::Io {
        path: path.clone(),
        source,
    })
}

fn write_scores(config: &ExperimentConfig, cells: &[CellRecord]) -> Result<(), ExperimentError> {
    let path = config.out_dir.join("scores.csv");
    let mut out = create(config, "scores.csv")?;
    let io_err = |source| ExperimentError::Io {
        path: path.clone(),
        source,
    };
    writeln!(
        out,
        "digit,n_size,replication,rho_pe,rho_pre_pe,rho_of,rho_pre_of,\
         pe_test_pe_train,pe_test_of_train,of_test_pe_train,of_test_of_train,ties"
    )
    .map_err(io_err)?;
    for cell in cells {
        let r = &cell.report;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            cell.key.digit,
            cell.key.n_size,
            cell.key.replication,
            r.rho_pe,
            r.rho_pre_pe,
            r.rho_of,
            r.rho_pre_of,
            r.pe_test_pe_train,
            r.pe_test_of_train,
            r.of_test_pe_train,
            r.of_test_of_train,
            r.ties
        )
        .map_err(io_err)?;
    }
    flush_to(&path, out)
}

fn write_curves(config: &ExperimentConfig, cells: &[CellRecord]) -> Result<(), ExperimentError> {
    let path = config.out_dir.join("curves.csv");
    let mut out = create(config, "curves.csv")?;
    let io_err = |source| ExperimentError::Io {
        path: path.clone(),
        source,
    };
    writeln!(out, "digit,n_size,replication,regime,rho,log_rho,phase,value").map_err(io_err)?;
    for cell in cells {
        for point in &cell.curves {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                cell.key.digit,
                cell.key.n_size,
                cell.key.replication,
                point.regime.name(),
                point.rho,
                point.log_rho,
                point.phase.name(),
                point.value
            )
            .map_err(io_err)?;
        }
    }
    flush_to(&path, out)
}

fn write_summary(
    config: &ExperimentConfig,
    aggregates: &[AggregateRow],
) -> Result<(), ExperimentError> {
    let path = config.out_dir.join("summary.csv");
    let mut out = create(config, "summary.csv")?;
    let io_err = |source| ExperimentError::Io {
        path: path.clone(),
        source,
    };
    writeln!(out, "digit,n_size,score,mean,std,median,p25,p75,count").map_err(io_err)?;
    for row in aggregates {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.digit,
            row.n_size,
            row.score,
            row.mean,
            row.std,
            row.median,
            row.p25,
            row.p75,
            row.count
        )
        .map_err(io_err)?;
    }
    flush_to(&path, out)
}
