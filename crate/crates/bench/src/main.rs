//! Command-line harness: dataset generation, training, evaluation,
//! experiment sweeps, and theory verification.
//!
//! Exit codes: 0 success, 1 usage error, 2 verification failure,
//! 3 partial trial failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ssg_bench::experiment::{print_summary, run_experiment};
use ssg_bench::spec::{ExperimentSpec, SpecOverlay, Sweep, SweepParam};
use ssg_bench::theory_checks::{run_theory_checks, TheoryConfig};
use ssg_core::datagen::{generate_instance, load_games, save_games, GenConfig};
use ssg_core::learning::{
    evaluate, train_decision_focused, train_two_stage, VALIDATION_FRACTION,
};
use ssg_core::model::{load_model, save_model};
use ssg_core::solver::SolverConfig;
use ssg_core::learning::TrainConfig;

#[derive(Parser)]
#[command(
    name = "ssg-bench",
    about = "Security-game adversary-model learning: generate, train, evaluate, benchmark",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Gen(GenArgs),
    /// Train a model on a dataset file and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test games.
    Eval(EvalArgs),
    /// Run the full strategy comparison, optionally sweeping a parameter.
    Run(RunArgs),
    /// Verify the two-target theory results by enumeration and grid search.
    VerifyTheory(VerifyArgs),
}

#[derive(Args, Clone)]
struct GenFlags {
    /// Number of targets per game.
    #[arg(long, default_value_t = 8)]
    targets: usize,
    /// Features per target.
    #[arg(long, default_value_t = 100)]
    features: usize,
    #[arg(long, default_value_t = 50)]
    train_games: usize,
    #[arg(long, default_value_t = 50)]
    test_games: usize,
    /// Observed attacks per training game.
    #[arg(long, default_value_t = 5)]
    attacks: u64,
    /// Defense resources; defaults to 3 for 8 targets, 9 for 24.
    #[arg(long)]
    budget: Option<f64>,
    /// Attacker's weight on coverage (must be negative).
    #[arg(long, default_value_t = -4.0, allow_hyphen_values = true)]
    w_coverage: f64,
    /// Hidden width of the ground-truth value networks.
    #[arg(long, default_value_t = 200)]
    value_net_hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GenFlags {
    fn to_config(&self) -> GenConfig {
        let defaults = GenConfig::for_targets(self.targets);
        GenConfig {
            target_count: self.targets,
            features_per_target: self.features,
            train_games: self.train_games,
            test_games: self.test_games,
            attacks_per_game: self.attacks,
            budget: self.budget.unwrap_or(defaults.budget),
            w_coverage: self.w_coverage,
            value_net_hidden: self.value_net_hidden,
            seed: self.seed,
        }
    }
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Early-stopping patience, in epochs without validation improvement.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Hidden-layer dropout rate (two-stage training only).
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Additive smoothing on empirical counts; defaults to 1/targets.
    #[arg(long)]
    smoothing_alpha: Option<f64>,
    /// Hidden width of the trained model.
    #[arg(long, default_value_t = 200)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
}

impl TrainFlags {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            early_stopping_patience: self.patience,
            dropout_rate: self.dropout,
            smoothing_alpha: self.smoothing_alpha,
            hidden_dim: self.hidden_dim,
            seed: self.train_seed,
        }
    }
}

#[derive(Args, Clone)]
struct SolverFlags {
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    stationarity_tolerance: f64,
    #[arg(long, default_value_t = 0)]
    solver_seed: u64,
}

impl SolverFlags {
    fn to_config(&self) -> SolverConfig {
        SolverConfig {
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            stationarity_tolerance: self.stationarity_tolerance,
            seed: self.solver_seed,
            ..SolverConfig::default()
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Output dataset path (JSON).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    gen: GenFlags,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file produced by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Training method: `2s` (cross entropy) or `df` (decision-focused).
    #[arg(long)]
    method: String,
    /// Output checkpoint path (JSON).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint produced by `train`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct RunArgs {
    /// Results CSV path; a manifest is written alongside it.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Parameter to sweep: attacks_per_game, train_games, features_per_target.
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    sweep_values: Vec<u64>,
    /// Record wall-clock training time (breaks byte-level reproducibility).
    #[arg(long, default_value_t = false)]
    record_timing: bool,
    /// JSON config file; fields present in it override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    gen: GenFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random cases for the ratio enumeration.
    #[arg(long, default_value_t = 100)]
    theorem1_cases: usize,
    /// Random (alpha, epsilon) pairs for the rationality bound.
    #[arg(long, default_value_t = 20)]
    theorem2_cases: usize,
    /// Grid resolution for the coverage searches.
    #[arg(long, default_value_t = 1e-4)]
    resolution: f64,
}

fn cmd_gen(args: &GenArgs) -> ssg_core::Result<()> {
    let config = args.gen.to_config();
    let (dataset, _, _) = generate_instance(&config)?;
    save_games(&dataset, config.seed, config.w_coverage, &args.out)?;
    println!(
        "wrote {} ({} train, {} test games)",
        args.out.display(),
        dataset.train.len(),
        dataset.test.len()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> ssg_core::Result<()> {
    let loaded = load_games(&args.data)?;
    let dataset = loaded
        .dataset
        .carve_validation(VALIDATION_FRACTION, loaded.seed);
    let train_config = args.train.to_config();
    let (model, stats) = match args.method.as_str() {
        "2s" => train_two_stage(&dataset, &train_config, loaded.w_coverage)?,
        "df" => train_decision_focused(
            &dataset,
            &train_config,
            loaded.w_coverage,
            &args.solver.to_config(),
        )?,
        other => {
            return Err(ssg_core::Error::InvalidParameter {
                name: "method",
                reason: format!("`{other}` is not one of 2s, df"),
            })
        }
    };
    save_model(&model, &args.out)?;
    println!(
        "wrote {} (epochs run {}, best epoch {}, best validation {}, solver failures {})",
        args.out.display(),
        stats.epochs_run,
        stats.best_epoch,
        stats.best_validation,
        stats.solver_failures
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> ssg_core::Result<()> {
    let loaded = load_games(&args.data)?;
    let model = load_model(&args.model)?;
    let summary = evaluate(&model, &loaded.dataset.test, &args.solver.to_config())?;
    for (i, deu) in summary.per_game.iter().enumerate() {
        println!("game {i}: deu {deu}");
    }
    println!("mean_test_deu {}", summary.mean);
    println!("median_test_deu {}", summary.median);
    println!("solver_failures {}", summary.solver_failures);
    Ok(())
}

fn cmd_run(args: &RunArgs) -> ssg_core::Result<u8> {
    let mut spec = ExperimentSpec {
        gen: args.gen.to_config(),
        train: args.train.to_config(),
        solver: args.solver.to_config(),
        trials: args.trials,
        sweep: None,
        output_path: args.out.clone(),
        root_seed: args.gen.seed,
        record_timing: args.record_timing,
    };
    if let Some(name) = &args.sweep {
        spec.sweep = Some(Sweep {
            param: SweepParam::parse(name)?,
            values: args.sweep_values.clone(),
        });
    }
    if let Some(path) = &args.config {
        SpecOverlay::from_file(path)?.apply(&mut spec)?;
    }
    let results = run_experiment(&spec)?;
    print_summary(&results, std::io::stdout().lock())?;
    println!(
        "wrote {} and {}",
        results.csv_path.display(),
        results.manifest_path.display()
    );
    Ok(if results.failed_trials > 0 { 3 } else { 0 })
}

fn cmd_verify(args: &VerifyArgs) -> ssg_core::Result<u8> {
    let config = TheoryConfig {
        seed: args.seed,
        theorem1_cases: args.theorem1_cases,
        theorem2_cases: args.theorem2_cases,
        grid_resolution: args.resolution,
    };
    let checks = run_theory_checks(&config)?;
    let mut failures = 0;
    for check in &checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("{status} {}: {}", check.name, check.detail);
        if !check.passed {
            failures += 1;
        }
    }
    Ok(if failures > 0 { 2 } else { 0 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Gen(args) => cmd_gen(args).map(|()| 0),
        Command::Train(args) => cmd_train(args).map(|()| 0),
        Command::Eval(args) => cmd_eval(args).map(|()| 0),
        Command::Run(args) => cmd_run(args),
        Command::VerifyTheory(args) => cmd_verify(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
