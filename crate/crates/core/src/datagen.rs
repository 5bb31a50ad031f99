//! Synthetic instance generation and dataset files.
//!
//! Instances follow the synthetic-experiment protocol: features drawn
//! uniformly from [-10, 10], ground-truth attacker and defender value
//! functions realized as fresh random networks, defender values rescaled
//! per game onto [-10, 0], historical coverage produced by the uniform
//! (no-information) baseline, and observed attacks sampled from the true
//! attack distribution at that coverage.
//!
//! Datasets persist as a single self-describing JSON document (see the
//! `DatasetFile` schema and `docs/formats.md`). Floats round-trip exactly,
//! so save -> load -> save is byte-identical.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{suqr_attack_distribution, AttackDistribution, Attractiveness, Coverage, SecurityGame};
use crate::learning::Dataset;
use crate::model::{forward, init_model};
use crate::seeding::rng_for;
use crate::solver::{uniform_coverage, SolverConfig};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

// stream tags for per-game seed derivation
const TAG_ATTACKER_NET: u64 = 1;
const TAG_DEFENDER_NET: u64 = 2;
const TAG_TRAIN_GAME: u64 = 3;
const TAG_TEST_GAME: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub target_count: usize,
    pub features_per_target: usize,
    pub train_games: usize,
    pub test_games: usize,
    pub attacks_per_game: u64,
    pub budget: f64,
    pub w_coverage: f64,
    /// Hidden width of the ground-truth value networks.
    pub value_net_hidden: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            target_count: 8,
            features_per_target: 100,
            train_games: 50,
            test_games: 50,
            attacks_per_game: 5,
            budget: 3.0,
            w_coverage: -4.0,
            value_net_hidden: 200,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Defaults for the two standard sizes: budget 3 at 8 targets,
    /// budget 9 at 24.
    pub fn for_targets(target_count: usize) -> Self {
        let budget = match target_count {
            24 => 9.0,
            _ => 3.0,
        };
        GenConfig {
            target_count,
            budget,
            ..GenConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_count == 0
            || self.features_per_target == 0
            || self.train_games == 0
            || self.test_games == 0
            || self.value_net_hidden == 0
        {
            return Err(Error::param("gen_config", "counts must be positive"));
        }
        if self.attacks_per_game == 0 {
            return Err(Error::param("attacks_per_game", "must be positive"));
        }
        if !(self.w_coverage < 0.0) {
            return Err(Error::param("w_coverage", "must be negative"));
        }
        if !(self.budget > 0.0 && self.budget < self.target_count as f64) {
            return Err(Error::param("budget", "must lie in (0, target_count)"));
        }
        Ok(())
    }
}

/// Tallies `n` categorical draws from `q`.
pub fn sample_attacks(q: &AttackDistribution, n: u64, rng: &mut impl Rng) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::param("n", "must draw at least one attack"));
    }
    let mut counts = vec![0u64; q.len()];
    let probs = q.as_slice();
    for _ in 0..n {
        let mut u: f64 = rng.gen();
        let mut chosen = q.len() - 1;
        for (i, &p) in probs.iter().enumerate() {
            if u < p {
                chosen = i;
                break;
            }
            u -= p;
        }
        counts[chosen] += 1;
    }
    Ok(counts)
}

/// Affine per-game rescale of raw values onto [-10, 0].
fn rescale_defender_values(raw: &[f64]) -> Result<Vec<f64>> {
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max - min).is_finite() || max - min < 1e-12 {
        return Err(Error::InvalidGame(
            "degenerate defender value range; cannot rescale".into(),
        ));
    }
    // divide before scaling: the ratio is exactly 1 at the max and 0 at the
    // min, so the endpoints land on 0 and -10 with nothing leaking above 0
    Ok(raw
        .iter()
        .map(|&v| -10.0 + 10.0 * ((v - min) / (max - min)))
        .collect())
}

/// Generates a dataset plus the ground-truth value networks behind it:
/// one fixed attacker network and one fixed defender network shared by
/// every game. Deterministic per seed; per-game streams are derived from
/// `(seed, split, index)`, so shrinking `train_games` keeps a prefix.
pub fn generate_instance(
    config: &GenConfig,
) -> Result<(Dataset, crate::model::ValueModel, crate::model::ValueModel)> {
    config.validate()?;
    let attacker_net = init_model(
        config.features_per_target,
        config.value_net_hidden,
        config.w_coverage,
        crate::seeding::derive_seed(config.seed, &[TAG_ATTACKER_NET]),
    )?;
    let defender_net = init_model(
        config.features_per_target,
        config.value_net_hidden,
        config.w_coverage,
        crate::seeding::derive_seed(config.seed, &[TAG_DEFENDER_NET]),
    )?;

    let solver_config = SolverConfig::default();
    let make_game = |tag: u64, index: u64, with_history: bool| -> Result<SecurityGame> {
        let mut rng = rng_for(config.seed, &[tag, index]);
        let features: Vec<Vec<f64>> = (0..config.target_count)
            .map(|_| {
                (0..config.features_per_target)
                    .map(|_| rng.gen_range(-10.0..=10.0))
                    .collect()
            })
            .collect();
        let phi_true = forward(&attacker_net, &features, None)?;
        let raw_values = forward(&defender_net, &features, None)?;
        let defender_values = rescale_defender_values(raw_values.as_slice())?;

        let (coverage, counts) = if with_history {
            let unif = uniform_coverage(
                &defender_values,
                config.w_coverage,
                config.budget,
                &solver_config,
            )?;
            let q = suqr_attack_distribution(&unif.coverage, &phi_true, config.w_coverage)?;
            let counts = sample_attacks(&q, config.attacks_per_game, &mut rng)?;
            (Some(unif.coverage), Some(counts))
        } else {
            (None, None)
        };
        SecurityGame::new(
            features,
            defender_values,
            config.budget,
            coverage,
            counts,
            Some(phi_true),
        )
    };

    let mut train = Vec::with_capacity(config.train_games);
    for i in 0..config.train_games {
        let mut game = make_game(TAG_TRAIN_GAME, i as u64, true)?;
        // the recoverable signal is the history, not the generator's truth
        game.true_phi = None;
        train.push(game);
    }
    let mut test = Vec::with_capacity(config.test_games);
    for i in 0..config.test_games {
        test.push(make_game(TAG_TEST_GAME, i as u64, false)?);
    }

    Ok((
        Dataset {
            train,
            validation: Vec::new(),
            test,
        },
        attacker_net,
        defender_net,
    ))
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    schema_version: u32,
    seed: u64,
    w_coverage: f64,
    games: Vec<GameRecord>,
}

#[derive(Serialize, Deserialize)]
struct GameRecord {
    split: String,
    targets: usize,
    features: Vec<Vec<f64>>,
    defender_values: Vec<f64>,
    budget: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    historical_coverage: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attack_counts: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_phi: Option<Vec<f64>>,
}

fn record_from_game(game: &SecurityGame, split: &str) -> GameRecord {
    GameRecord {
        split: split.to_string(),
        targets: game.target_count,
        features: game.features.clone(),
        defender_values: game.defender_values.clone(),
        budget: game.budget,
        historical_coverage: game
            .historical_coverage
            .as_ref()
            .map(|c| c.as_slice().to_vec()),
        attack_counts: game.attack_counts.clone(),
        true_phi: game.true_phi.as_ref().map(|p| p.as_slice().to_vec()),
    }
}

fn game_from_record(record: GameRecord, index: usize) -> Result<SecurityGame> {
    let invalid = |reason: String| Error::InvalidGameRecord { index, reason };
    if record.features.len() != record.targets {
        return Err(invalid(format!(
            "targets field says {} but features has {} rows",
            record.targets,
            record.features.len()
        )));
    }
    if matches!(record.split.as_str(), "train" | "validation") {
        if record.historical_coverage.is_none() {
            return Err(invalid("missing historical_coverage on a training game".into()));
        }
        if record.attack_counts.is_none() {
            return Err(invalid("missing attack_counts on a training game".into()));
        }
    }
    let coverage = record
        .historical_coverage
        .map(Coverage::new)
        .transpose()
        .map_err(|e| invalid(e.to_string()))?;
    let phi = record
        .true_phi
        .map(Attractiveness::from_centered)
        .transpose()
        .map_err(|e| invalid(e.to_string()))?;
    SecurityGame::new(
        record.features,
        record.defender_values,
        record.budget,
        coverage,
        record.attack_counts,
        phi,
    )
    .map_err(|e| invalid(e.to_string()))
}

/// Writes a dataset (with its generator seed and coverage weight) to `path`.
pub fn save_games(dataset: &Dataset, seed: u64, w_coverage: f64, path: &Path) -> Result<()> {
    let mut games = Vec::new();
    for g in &dataset.train {
        games.push(record_from_game(g, "train"));
    }
    for g in &dataset.validation {
        games.push(record_from_game(g, "validation"));
    }
    for g in &dataset.test {
        games.push(record_from_game(g, "test"));
    }
    let file = DatasetFile {
        schema_version: DATASET_SCHEMA_VERSION,
        seed,
        w_coverage,
        games,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("dataset serialization");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Loaded dataset together with the file-level metadata.
#[derive(Debug)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub seed: u64,
    pub w_coverage: f64,
}

pub fn load_games(path: &Path) -> Result<LoadedDataset> {
    let text = fs::read_to_string(path)?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    if file.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: file.schema_version,
            expected: DATASET_SCHEMA_VERSION,
        });
    }
    if !(file.w_coverage < 0.0) {
        return Err(Error::param("w_coverage", "must be negative"));
    }
    let mut dataset = Dataset {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (index, record) in file.games.into_iter().enumerate() {
        let split = record.split.clone();
        let game = game_from_record(record, index)?;
        match split.as_str() {
            "train" => dataset.train.push(game),
            "validation" => dataset.validation.push(game),
            "test" => dataset.test.push(game),
            other => {
                return Err(Error::InvalidGameRecord {
                    index,
                    reason: format!("unknown split `{other}`"),
                })
            }
        }
    }
    Ok(LoadedDataset {
        dataset,
        seed: file.seed,
        w_coverage: file.w_coverage,
    })
}
