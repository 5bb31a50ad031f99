//! Experiment specification: what to generate, how to train, what to sweep.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use ssg_core::datagen::GenConfig;
use ssg_core::learning::TrainConfig;
use ssg_core::solver::SolverConfig;
use ssg_core::{Error, Result};

/// Parameter varied across sweep points. Each one changes only the
/// difficulty of the learning problem, never the game being defended,
/// except where the parameter itself reshapes the games.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    AttacksPerGame,
    TrainGames,
    FeaturesPerTarget,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::AttacksPerGame => "attacks_per_game",
            SweepParam::TrainGames => "train_games",
            SweepParam::FeaturesPerTarget => "features_per_target",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "attacks_per_game" => Ok(SweepParam::AttacksPerGame),
            "train_games" => Ok(SweepParam::TrainGames),
            "features_per_target" => Ok(SweepParam::FeaturesPerTarget),
            other => Err(Error::InvalidParameter {
                name: "sweep",
                reason: format!(
                    "unknown parameter `{other}` (expected attacks_per_game, train_games, or features_per_target)"
                ),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub solver: SolverConfig,
    pub trials: usize,
    pub sweep: Option<Sweep>,
    pub output_path: PathBuf,
    /// Root seed; per-trial seeds derive from it.
    pub root_seed: u64,
    /// When false (the default) the `train_seconds` column is written as
    /// 0.000 so reruns of the same spec are byte-identical. Enable to record
    /// wall-clock training time at the cost of reproducible bytes.
    pub record_timing: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            gen: GenConfig::default(),
            train: TrainConfig::default(),
            solver: SolverConfig::default(),
            trials: 10,
            sweep: None,
            output_path: PathBuf::from("results.csv"),
            root_seed: 0,
            record_timing: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        self.solver.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidParameter {
                name: "trials",
                reason: "must run at least one trial".into(),
            });
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::InvalidParameter {
                    name: "sweep",
                    reason: "sweep needs at least one value".into(),
                });
            }
            if sweep.values.iter().any(|&v| v == 0) {
                return Err(Error::InvalidParameter {
                    name: "sweep",
                    reason: "sweep values must be positive".into(),
                });
            }
        }
        Ok(())
    }
}

/// Partial spec loaded from a config file; present fields override the
/// flag-built spec.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecOverlay {
    pub targets: Option<usize>,
    pub features: Option<usize>,
    pub train_games: Option<usize>,
    pub test_games: Option<usize>,
    pub attacks: Option<u64>,
    pub budget: Option<f64>,
    pub w_coverage: Option<f64>,
    pub value_net_hidden: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub patience: Option<usize>,
    pub dropout: Option<f64>,
    pub smoothing_alpha: Option<f64>,
    pub hidden_dim: Option<usize>,
    pub restarts: Option<usize>,
    pub max_iterations: Option<usize>,
    pub stationarity_tolerance: Option<f64>,
    pub trials: Option<usize>,
    pub sweep_param: Option<String>,
    pub sweep_values: Option<Vec<u64>>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub record_timing: Option<bool>,
}

impl SpecOverlay {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn apply(&self, spec: &mut ExperimentSpec) -> Result<()> {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.targets => spec.gen.target_count);
        set!(self.features => spec.gen.features_per_target);
        set!(self.train_games => spec.gen.train_games);
        set!(self.test_games => spec.gen.test_games);
        set!(self.attacks => spec.gen.attacks_per_game);
        set!(self.budget => spec.gen.budget);
        set!(self.w_coverage => spec.gen.w_coverage);
        set!(self.value_net_hidden => spec.gen.value_net_hidden);
        set!(self.epochs => spec.train.epochs);
        set!(self.learning_rate => spec.train.learning_rate);
        set!(self.patience => spec.train.early_stopping_patience);
        set!(self.dropout => spec.train.dropout_rate);
        if self.smoothing_alpha.is_some() {
            spec.train.smoothing_alpha = self.smoothing_alpha;
        }
        set!(self.hidden_dim => spec.train.hidden_dim);
        set!(self.restarts => spec.solver.restarts);
        set!(self.max_iterations => spec.solver.max_iterations);
        set!(self.stationarity_tolerance => spec.solver.stationarity_tolerance);
        set!(self.trials => spec.trials);
        if let Some(name) = &self.sweep_param {
            let param = SweepParam::parse(name)?;
            let values = self
                .sweep_values
                .clone()
                .or_else(|| spec.sweep.as_ref().map(|s| s.values.clone()))
                .unwrap_or_default();
            spec.sweep = Some(Sweep { param, values });
        } else if let Some(values) = &self.sweep_values {
            if let Some(sweep) = &mut spec.sweep {
                sweep.values = values.clone();
            } else {
                return Err(Error::InvalidParameter {
                    name: "sweep_values",
                    reason: "sweep_values given without sweep_param".into(),
                });
            }
        }
        set!(self.output => spec.output_path);
        set!(self.seed => spec.root_seed);
        set!(self.record_timing => spec.record_timing);
        Ok(())
    }
}
