//! The benchmark loop: generate, train, evaluate, record.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use ssg_core::datagen::{generate_instance, GenConfig, DATASET_SCHEMA_VERSION};
use ssg_core::learning::{
    evaluate, train_decision_focused, train_two_stage, Dataset, VALIDATION_FRACTION,
};
use ssg_core::model::{zero_output_model, CHECKPOINT_SCHEMA_VERSION};
use ssg_core::seeding::derive_seed;
use ssg_core::{Error, Result};

use crate::spec::{ExperimentSpec, SweepParam};

pub const RESULTS_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str =
    "sweep_param,sweep_value,trial,strategy,mean_test_deu,median_test_deu,train_seconds,solver_failures";

/// Stream tag separating per-trial instance seeds from everything else.
const TRIAL_TAG: u64 = 0x7121;

pub const STRATEGIES: [&str; 3] = ["df", "2s", "unif"];

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub sweep_param: String,
    pub sweep_value: u64,
    pub trial: usize,
    pub strategy: &'static str,
    pub mean_test_deu: f64,
    pub median_test_deu: f64,
    pub train_seconds: f64,
    pub solver_failures: usize,
}

impl CsvRow {
    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3},{}",
            self.sweep_param,
            self.sweep_value,
            self.trial,
            self.strategy,
            self.mean_test_deu,
            self.median_test_deu,
            self.train_seconds,
            self.solver_failures
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryLine {
    pub sweep_value: u64,
    pub strategy: &'static str,
    /// Median across trials of (strategy mean test DEU - unif mean test DEU).
    pub median_deu_minus_unif: f64,
}

#[derive(Debug)]
pub struct ExperimentResults {
    pub rows: Vec<CsvRow>,
    pub summaries: Vec<SummaryLine>,
    pub failed_trials: usize,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// The per-trial instance seed: shared across sweep points so that sweep
/// values which only change the observation process (attacks per game) or
/// extend the training set keep the same underlying games, enabling paired
/// comparisons against the unlearned baseline.
pub fn trial_seed(root_seed: u64, trial: usize) -> u64 {
    derive_seed(root_seed, &[TRIAL_TAG, trial as u64])
}

fn gen_for_sweep(base: &GenConfig, param: Option<SweepParam>, value: u64, seed: u64) -> GenConfig {
    let mut gen = base.clone();
    gen.seed = seed;
    match param {
        Some(SweepParam::AttacksPerGame) => gen.attacks_per_game = value,
        Some(SweepParam::TrainGames) => gen.train_games = value as usize,
        Some(SweepParam::FeaturesPerTarget) => gen.features_per_target = value as usize,
        None => {}
    }
    gen
}

struct StrategyOutcome {
    mean: f64,
    median: f64,
    train_seconds: f64,
    solver_failures: usize,
}

fn run_trial(
    spec: &ExperimentSpec,
    gen: &GenConfig,
) -> Result<[StrategyOutcome; 3]> {
    let (dataset, _, _) = generate_instance(gen)?;
    let dataset: Dataset = dataset.carve_validation(VALIDATION_FRACTION, gen.seed);
    let w = gen.w_coverage;

    let started = Instant::now();
    let (df_model, df_stats) =
        train_decision_focused(&dataset, &spec.train, w, &spec.solver)?;
    let df_seconds = started.elapsed().as_secs_f64();
    let df_eval = evaluate(&df_model, &dataset.test, &spec.solver)?;

    let started = Instant::now();
    let (ts_model, _ts_stats) = train_two_stage(&dataset, &spec.train, w)?;
    let ts_seconds = started.elapsed().as_secs_f64();
    let ts_eval = evaluate(&ts_model, &dataset.test, &spec.solver)?;

    let unif_model = zero_output_model(gen.features_per_target, spec.train.hidden_dim, w)?;
    let unif_eval = evaluate(&unif_model, &dataset.test, &spec.solver)?;

    let timing = |secs: f64| if spec.record_timing { secs } else { 0.0 };
    Ok([
        StrategyOutcome {
            mean: df_eval.mean,
            median: df_eval.median,
            train_seconds: timing(df_seconds),
            solver_failures: df_stats.solver_failures + df_eval.solver_failures,
        },
        StrategyOutcome {
            mean: ts_eval.mean,
            median: ts_eval.median,
            train_seconds: timing(ts_seconds),
            solver_failures: ts_eval.solver_failures,
        },
        StrategyOutcome {
            mean: unif_eval.mean,
            median: unif_eval.median,
            train_seconds: 0.0,
            solver_failures: unif_eval.solver_failures,
        },
    ])
}

/// Runs the full comparison: for every (sweep value, trial), generates an
/// instance from a derived seed, trains both learners, evaluates all three
/// strategies on the test games, and writes one CSV row per strategy plus a
/// manifest of every resolved configuration value. A failed trial records
/// NaN rows and the run continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    spec.validate()?;
    let (param, values): (Option<SweepParam>, Vec<u64>) = match &spec.sweep {
        Some(sweep) => (Some(sweep.param), sweep.values.clone()),
        None => (None, vec![0]),
    };
    let param_name = param.map_or("none", |p| p.as_str());

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut failed_trials = 0usize;

    for &value in &values {
        let mut unif_means = Vec::with_capacity(spec.trials);
        let mut means: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for trial in 0..spec.trials {
            let seed = trial_seed(spec.root_seed, trial);
            let gen = gen_for_sweep(&spec.gen, param, value, seed);
            match run_trial(spec, &gen) {
                Ok(outcomes) => {
                    unif_means.push(outcomes[2].mean);
                    means[0].push(outcomes[0].mean);
                    means[1].push(outcomes[1].mean);
                    for (strategy, outcome) in STRATEGIES.iter().zip(outcomes) {
                        rows.push(CsvRow {
                            sweep_param: param_name.to_string(),
                            sweep_value: value,
                            trial,
                            strategy,
                            mean_test_deu: outcome.mean,
                            median_test_deu: outcome.median,
                            train_seconds: outcome.train_seconds,
                            solver_failures: outcome.solver_failures,
                        });
                    }
                }
                Err(err) => {
                    eprintln!("trial {trial} at {param_name}={value} failed: {err}");
                    failed_trials += 1;
                    for strategy in STRATEGIES {
                        rows.push(CsvRow {
                            sweep_param: param_name.to_string(),
                            sweep_value: value,
                            trial,
                            strategy,
                            mean_test_deu: f64::NAN,
                            median_test_deu: f64::NAN,
                            train_seconds: 0.0,
                            solver_failures: 0,
                        });
                    }
                }
            }
        }
        for (idx, strategy) in STRATEGIES.into_iter().take(2).enumerate() {
            let diffs: Vec<f64> = means[idx]
                .iter()
                .zip(&unif_means)
                .map(|(s, u)| s - u)
                .collect();
            if !diffs.is_empty() {
                summaries.push(SummaryLine {
                    sweep_value: value,
                    strategy,
                    median_deu_minus_unif: ssg_core::learning::median(&diffs),
                });
            }
        }
    }

    let csv_path = spec.output_path.clone();
    write_csv(&rows, &csv_path)?;
    let manifest_path = manifest_path_for(&csv_path);
    write_manifest(spec, &manifest_path)?;

    Ok(ExperimentResults {
        rows,
        summaries,
        failed_trials,
        csv_path,
        manifest_path,
    })
}

fn write_csv(rows: &[CsvRow], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_line());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn manifest_path_for(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".to_string());
    csv_path.with_file_name(format!("{stem}.manifest.json"))
}

#[derive(Serialize)]
struct Manifest<'a> {
    results_schema_version: u32,
    dataset_schema_version: u32,
    checkpoint_schema_version: u32,
    csv_header: &'static str,
    trial_seeds: Vec<u64>,
    spec: &'a ExperimentSpec,
}

fn write_manifest(spec: &ExperimentSpec, path: &Path) -> Result<()> {
    let manifest = Manifest {
        results_schema_version: RESULTS_SCHEMA_VERSION,
        dataset_schema_version: DATASET_SCHEMA_VERSION,
        checkpoint_schema_version: CHECKPOINT_SCHEMA_VERSION,
        csv_header: CSV_HEADER,
        trial_seeds: (0..spec.trials).map(|t| trial_seed(spec.root_seed, t)).collect(),
        spec,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Parses a results CSV back into rows (used by tests and tooling).
pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != CSV_HEADER {
        return Err(Error::InvalidParameter {
            name: "csv",
            reason: format!("unexpected header `{header}`"),
        });
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::InvalidParameter {
                name: "csv",
                reason: format!("line {}: expected 8 fields", lineno + 2),
            });
        }
        let strategy = STRATEGIES
            .iter()
            .find(|s| **s == fields[3])
            .ok_or_else(|| Error::InvalidParameter {
                name: "csv",
                reason: format!("line {}: unknown strategy {}", lineno + 2, fields[3]),
            })?;
        let parse_f = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);
        rows.push(CsvRow {
            sweep_param: fields[0].to_string(),
            sweep_value: fields[1].parse().unwrap_or(0),
            trial: fields[2].parse().unwrap_or(0),
            strategy,
            mean_test_deu: parse_f(fields[4]),
            median_test_deu: parse_f(fields[5]),
            train_seconds: parse_f(fields[6]),
            solver_failures: fields[7].parse().unwrap_or(0),
        });
    }
    Ok(rows)
}

/// Writes the human-readable summary to the given sink.
pub fn print_summary(results: &ExperimentResults, mut sink: impl std::io::Write) -> Result<()> {
    for line in &results.summaries {
        writeln!(
            sink,
            "sweep_value={} strategy={} median(DEU - unif)={}",
            line.sweep_value, line.strategy, line.median_deu_minus_unif
        )?;
    }
    if results.failed_trials > 0 {
        writeln!(sink, "failed trials: {}", results.failed_trials)?;
    }
    Ok(())
}
