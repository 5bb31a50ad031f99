//! Training and evaluation.
//!
//! Two ways to fit the value model to observed attacks:
//!
//! * two-stage: minimize cross entropy between the predicted and empirical
//!   attack distributions, then (at evaluation time) optimize coverage
//!   against the fitted model;
//! * decision-focused: push gradients of the defender's expected utility
//!   through the coverage solver itself, so the model is trained on the
//!   quantity the defender actually cares about.
//!
//! The decision-focused objective needs counterfactual ground truth: what
//! the attacker would do under coverages never played historically. For the
//! subjective-utility attacker the observed distribution can be inverted in
//! closed form — `phi_i = log q_i - w * p_i` up to a constant — so each
//! training game carries a recovered attractiveness that prices any
//! alternative coverage.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffopt::DiffoptConfig;
use crate::error::{Error, Result};
use crate::game::{
    cross_entropy_loss, empirical_attack_distribution, suqr_attack_distribution, Attractiveness,
    Coverage, SecurityGame,
};
use crate::model::{
    apply_update, backward, forward, init_model, DropoutMask, OptimizerState, ParamGradients,
    ValueModel,
};
use crate::seeding::rng_for;
use crate::solver::{solve_defender, SolverConfig};

/// Fraction of training games carved off for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Starting point for both trainers: random hidden layer, zero output
/// layer. The initial policy is then exactly the no-information baseline
/// (`phi = 0`), and training moves away from it only when the observed
/// attacks support doing so.
pub fn initial_model(input_dim: usize, hidden_dim: usize, w: f64, seed: u64) -> Result<ValueModel> {
    let mut model = init_model(input_dim, hidden_dim, w, seed)?;
    model.weights_out = vec![0.0; model.hidden_dim];
    model.bias_out = 0.0;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SecurityGame>,
    pub validation: Vec<SecurityGame>,
    pub test: Vec<SecurityGame>,
}

impl Dataset {
    /// Moves `ceil(fraction * train)` games from train to validation,
    /// selected by a seeded shuffle. No-op when validation already exists or
    /// when there are too few training games to split.
    pub fn carve_validation(mut self, fraction: f64, seed: u64) -> Dataset {
        let n = self.train.len();
        if !self.validation.is_empty() || n < 2 {
            return self;
        }
        let take = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(seed, &[0x7A11]));
        let chosen: std::collections::BTreeSet<usize> = order.into_iter().take(take).collect();
        let mut train = Vec::with_capacity(n - chosen.len());
        let mut validation = Vec::with_capacity(chosen.len());
        for (i, game) in self.train.drain(..).enumerate() {
            if chosen.contains(&i) {
                validation.push(game);
            } else {
                train.push(game);
            }
        }
        Dataset {
            train,
            validation,
            test: self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub early_stopping_patience: usize,
    /// Hidden-layer dropout rate, applied by both trainers during training
    /// passes (never at evaluation).
    pub dropout_rate: f64,
    /// Additive smoothing on empirical counts before inversion;
    /// `None` means `1 / target_count` per game.
    pub smoothing_alpha: Option<f64>,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            early_stopping_patience: 10,
            dropout_rate: 0.5,
            smoothing_alpha: None,
            hidden_dim: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        if self.early_stopping_patience > self.epochs.max(1) {
            return Err(Error::param("early_stopping_patience", "exceeds epochs"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::param("dropout_rate", "must lie in [0, 1)"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::param("hidden_dim", "must be positive"));
        }
        Ok(())
    }

    fn alpha_for(&self, target_count: usize) -> f64 {
        self.smoothing_alpha
            .unwrap_or(1.0 / target_count as f64)
    }
}

/// Bookkeeping from a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Validation metric at the returned checkpoint (cross entropy for the
    /// two-stage trainer, expected utility for decision-focused).
    pub best_validation: f64,
    pub solver_failures: usize,
}

// ---------------------------------------------------------------------------
// Counterfactual recovery
// ---------------------------------------------------------------------------

/// Inverts the subjective-utility response: from an observed attack
/// distribution under a known coverage, `phi_i = log q'_i - w * p_i`
/// mean-centered, where `q'` is the smoothed empirical distribution.
///
/// With counts available the smoothing is `(q_i N + alpha) / (N + alpha T)`;
/// without, `alpha` is added directly and renormalized. `alpha = 0` requires
/// a strictly positive distribution.
pub fn recover_attractiveness(
    q_tilde: &crate::game::AttackDistribution,
    w: f64,
    historical_coverage: &Coverage,
    smoothing_alpha: f64,
    total_attacks: Option<f64>,
) -> Result<Attractiveness> {
    if !(w < 0.0) {
        return Err(Error::param("w", "coverage weight must be negative"));
    }
    if q_tilde.len() != historical_coverage.len() {
        return Err(Error::dim("recover", historical_coverage.len(), q_tilde.len()));
    }
    if smoothing_alpha < 0.0 {
        return Err(Error::param("smoothing_alpha", "must be nonnegative"));
    }
    let t = q_tilde.len() as f64;
    let smoothed: Vec<f64> = if smoothing_alpha == 0.0 {
        q_tilde.as_slice().to_vec()
    } else if let Some(n) = total_attacks {
        q_tilde
            .as_slice()
            .iter()
            .map(|&q| (q * n + smoothing_alpha) / (n + smoothing_alpha * t))
            .collect()
    } else {
        q_tilde
            .as_slice()
            .iter()
            .map(|&q| (q + smoothing_alpha) / (1.0 + smoothing_alpha * t))
            .collect()
    };
    if smoothed.iter().any(|&q| q <= 0.0) {
        return Err(Error::param(
            "q_tilde",
            "zero empirical mass requires smoothing_alpha > 0",
        ));
    }
    let values: Vec<f64> = smoothed
        .iter()
        .zip(historical_coverage.as_slice())
        .map(|(&q, &p)| q.ln() - w * p)
        .collect();
    Attractiveness::new(values)
}

/// Recovered attractiveness for one training game from its stored history.
fn recover_for_game(game: &SecurityGame, w: f64, alpha: f64) -> Result<Attractiveness> {
    let coverage = game
        .historical_coverage
        .as_ref()
        .ok_or_else(|| Error::InvalidGame("training game lacks historical coverage".into()))?;
    let counts = game
        .attack_counts
        .as_ref()
        .ok_or_else(|| Error::InvalidGame("training game lacks attack counts".into()))?;
    let q_tilde = empirical_attack_distribution(counts)?;
    let total: u64 = counts.iter().sum();
    recover_attractiveness(&q_tilde, w, coverage, alpha, Some(total as f64))
}

// ---------------------------------------------------------------------------
// Two-stage trainer
// ---------------------------------------------------------------------------

fn validation_cross_entropy(model: &ValueModel, games: &[SecurityGame]) -> Result<f64> {
    let mut total = 0.0;
    for game in games {
        let coverage = game
            .historical_coverage
            .as_ref()
            .ok_or_else(|| Error::InvalidGame("validation game lacks coverage".into()))?;
        let counts = game
            .attack_counts
            .as_ref()
            .ok_or_else(|| Error::InvalidGame("validation game lacks attack counts".into()))?;
        let phi_hat = forward(model, &game.features, None)?;
        let predicted = suqr_attack_distribution(coverage, &phi_hat, model.w_coverage)?;
        let empirical = empirical_attack_distribution(counts)?;
        total += cross_entropy_loss(&predicted, &empirical)?;
    }
    Ok(total / games.len() as f64)
}

/// Fits the model by stochastic cross-entropy descent over the training
/// games, with dropout, and returns the checkpoint with the best validation
/// cross entropy (early stopping).
pub fn train_two_stage(
    dataset: &Dataset,
    config: &TrainConfig,
    w: f64,
) -> Result<(ValueModel, TrainStats)> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptySplit { split: "train" });
    }
    if dataset.validation.is_empty() {
        return Err(Error::EmptySplit { split: "validation" });
    }
    let input_dim = dataset.train[0].feature_dim();
    let mut model = initial_model(input_dim, config.hidden_dim, w, config.seed)?;
    let mut opt = OptimizerState::new(&model);
    let mut rng = rng_for(config.seed, &[0x25_u64]);

    let mut best = model.clone();
    let mut best_metric = validation_cross_entropy(&model, &dataset.validation)?;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 1..=config.epochs {
        epochs_run = epoch;
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        order.shuffle(&mut rng);
        for &idx in &order {
            let game = &dataset.train[idx];
            let coverage = game
                .historical_coverage
                .as_ref()
                .ok_or_else(|| Error::InvalidGame("training game lacks coverage".into()))?;
            let counts = game
                .attack_counts
                .as_ref()
                .ok_or_else(|| Error::InvalidGame("training game lacks attack counts".into()))?;
            let empirical = empirical_attack_distribution(counts)?;
            let mask = if config.dropout_rate > 0.0 {
                Some(DropoutMask::sample(model.hidden_dim, config.dropout_rate, &mut rng)?)
            } else {
                None
            };
            let phi_hat = forward(&model, &game.features, mask.as_ref())?;
            let predicted = suqr_attack_distribution(coverage, &phi_hat, w)?;
            // softmax cross entropy: dCE/dphi_j = q_hat_j - q_tilde_j
            let grad_phi: Vec<f64> = predicted
                .as_slice()
                .iter()
                .zip(empirical.as_slice())
                .map(|(&qh, &qt)| qh - qt)
                .collect();
            let grads = backward(&model, &game.features, &grad_phi, mask.as_ref())?;
            let (m2, o2) = apply_update(&model, &grads, &opt, config.learning_rate)?;
            model = m2;
            opt = o2;
        }

        let metric = validation_cross_entropy(&model, &dataset.validation)?;
        if metric < best_metric {
            best_metric = metric;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stopping_patience {
                break;
            }
        }
    }

    Ok((
        best,
        TrainStats {
            epochs_run,
            best_epoch,
            best_validation: best_metric,
            solver_failures: 0,
        },
    ))
}

// ---------------------------------------------------------------------------
// Decision-focused trainer
// ---------------------------------------------------------------------------

/// Ascent gradient of the defender's counterfactual expected utility for one
/// game: forward -> solve -> differentiate through the optimum -> backward.
pub fn decision_focused_gradient(
    game: &SecurityGame,
    model: &ValueModel,
    recovered_phi: &Attractiveness,
    solver_config: &SolverConfig,
    diff_config: &DiffoptConfig,
) -> Result<(ParamGradients, bool)> {
    decision_focused_gradient_masked(game, model, recovered_phi, None, solver_config, diff_config)
}

/// As [`decision_focused_gradient`], with a dropout mask applied through the
/// whole chain: the coverage is solved for the masked attractiveness and the
/// backward pass differentiates the same masked forward.
fn decision_focused_gradient_masked(
    game: &SecurityGame,
    model: &ValueModel,
    recovered_phi: &Attractiveness,
    mask: Option<&DropoutMask>,
    solver_config: &SolverConfig,
    diff_config: &DiffoptConfig,
) -> Result<(ParamGradients, bool)> {
    let phi_hat = forward(model, &game.features, mask)?;
    let report = solve_defender(
        &phi_hat,
        model.w_coverage,
        &game.defender_values,
        game.budget,
        solver_config,
    )?;
    let converged = report.converged;
    let grad_phi = crate::diffopt::chain_gradient_at(
        &phi_hat,
        model.w_coverage,
        &report,
        recovered_phi,
        &game.defender_values,
        game.budget,
        diff_config,
    )?;
    let grads = backward(model, &game.features, &grad_phi, mask)?;
    Ok((grads, converged))
}

/// Mean counterfactual expected utility of the model's coverage across games,
/// each game priced by the supplied attractiveness.
fn mean_deu_against(
    model: &ValueModel,
    games: &[SecurityGame],
    phis: &[Attractiveness],
    solver_config: &SolverConfig,
    failures: &mut usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (game, phi_eval) in games.iter().zip(phis) {
        let phi_hat = forward(model, &game.features, None)?;
        let report = solve_defender(
            &phi_hat,
            model.w_coverage,
            &game.defender_values,
            game.budget,
            solver_config,
        )?;
        if !report.converged {
            *failures += 1;
        }
        let q_true = suqr_attack_distribution(&report.coverage, phi_eval, model.w_coverage)?;
        total += crate::game::defender_expected_utility(
            &report.coverage,
            &q_true,
            &game.defender_values,
        )?;
    }
    Ok(total / games.len().max(1) as f64)
}

/// Trains by per-game utility-ascent steps in seeded shuffled order for the
/// full epoch budget and returns the final model.
///
/// Unlike the two-stage trainer there is no checkpoint tuning: with few
/// observed attacks the validation utility (priced by recovered
/// attractiveness) is noise-dominated, and selecting checkpoints on it
/// discards genuine progress. Since nothing is selected on the validation
/// split, training uses the full train + validation pool; the validation
/// utility is still computed at the end for reporting. Model complexity is
/// controlled the same way as in the two-stage trainer, by hidden-layer
/// dropout, with the mask carried through the coverage solve so the gradient
/// differentiates exactly the objective being optimized.
pub fn train_decision_focused(
    dataset: &Dataset,
    config: &TrainConfig,
    w: f64,
    solver_config: &SolverConfig,
) -> Result<(ValueModel, TrainStats)> {
    train_decision_focused_with(dataset, config, w, solver_config, &DiffoptConfig::default())
}

pub fn train_decision_focused_with(
    dataset: &Dataset,
    config: &TrainConfig,
    w: f64,
    solver_config: &SolverConfig,
    diff_config: &DiffoptConfig,
) -> Result<(ValueModel, TrainStats)> {
    config.validate()?;
    solver_config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptySplit { split: "train" });
    }
    if dataset.validation.is_empty() {
        return Err(Error::EmptySplit { split: "validation" });
    }
    let input_dim = dataset.train[0].feature_dim();
    let mut model = initial_model(input_dim, config.hidden_dim, w, config.seed)?;
    let mut opt = OptimizerState::new(&model);
    let mut rng = rng_for(config.seed, &[0xDF_u64]);
    let mut failures = 0usize;

    let pool: Vec<&SecurityGame> = dataset.train.iter().chain(&dataset.validation).collect();
    let pool_phis: Vec<Attractiveness> = pool
        .iter()
        .map(|g| recover_for_game(g, w, config.alpha_for(g.target_count)))
        .collect::<Result<_>>()?;
    let validation_phis: Vec<Attractiveness> = dataset
        .validation
        .iter()
        .map(|g| recover_for_game(g, w, config.alpha_for(g.target_count)))
        .collect::<Result<_>>()?;

    let mut epochs_run = 0usize;
    for _ in 1..=config.epochs {
        epochs_run += 1;
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        for &idx in &order {
            let mask = if config.dropout_rate > 0.0 {
                Some(DropoutMask::sample(model.hidden_dim, config.dropout_rate, &mut rng)?)
            } else {
                None
            };
            let (mut grads, converged) = decision_focused_gradient_masked(
                pool[idx],
                &model,
                &pool_phis[idx],
                mask.as_ref(),
                solver_config,
                diff_config,
            )?;
            if !converged {
                failures += 1;
            }
            // ascent on utility = descent on its negation
            grads.scale(-1.0);
            let (m2, o2) = apply_update(&model, &grads, &opt, config.learning_rate)?;
            model = m2;
            opt = o2;
        }
    }

    let final_validation = mean_deu_against(
        &model,
        &dataset.validation,
        &validation_phis,
        solver_config,
        &mut failures,
    )?;

    Ok((
        model,
        TrainStats {
            epochs_run,
            best_epoch: epochs_run,
            best_validation: final_validation,
            solver_failures: failures,
        },
    ))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Per-game and summary expected utilities of the model's coverage on games
/// carrying an evaluation attractiveness.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub per_game: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub solver_failures: usize,
}

pub fn evaluate(
    model: &ValueModel,
    games: &[SecurityGame],
    solver_config: &SolverConfig,
) -> Result<EvalSummary> {
    if games.is_empty() {
        return Err(Error::EmptySplit { split: "test" });
    }
    let mut per_game = Vec::with_capacity(games.len());
    let mut failures = 0usize;
    for game in games {
        let phi_true = game.true_phi.as_ref().ok_or(Error::MissingEvaluationPhi)?;
        let phi_hat = forward(model, &game.features, None)?;
        let report = solve_defender(
            &phi_hat,
            model.w_coverage,
            &game.defender_values,
            game.budget,
            solver_config,
        )?;
        if !report.converged {
            failures += 1;
        }
        let q_true = suqr_attack_distribution(&report.coverage, phi_true, model.w_coverage)?;
        per_game.push(crate::game::defender_expected_utility(
            &report.coverage,
            &q_true,
            &game.defender_values,
        )?);
    }
    let mean = per_game.iter().sum::<f64>() / per_game.len() as f64;
    Ok(EvalSummary {
        median: median(&per_game),
        mean,
        per_game,
        solver_failures: failures,
    })
}

/// Median of a nonempty slice: middle element, or the mean of the middle two.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
