//! Security-game learning toolkit.
//!
//! Building blocks for defending a set of targets against a boundedly
//! rational attacker whose target preferences must be learned from observed
//! attacks:
//!
//! * [`game`] — game instances, softmax attack models, expected utility and
//!   its derivatives;
//! * [`solver`] — projected gradient ascent over the coverage budget
//!   polytope;
//! * [`diffopt`] — implicit differentiation of the solver's optimum in the
//!   attractiveness estimate;
//! * [`model`] — the feature-to-attractiveness network with hand-written
//!   forward/backward passes;
//! * [`learning`] — two-stage (cross-entropy) and decision-focused
//!   (utility-ascent) trainers, counterfactual recovery, evaluation;
//! * [`datagen`] — synthetic instance generation and dataset files;
//! * [`theory`] — closed-form two-target results verified by enumeration.

pub mod datagen;
pub mod diffopt;
pub mod error;
pub mod game;
pub mod learning;
pub mod model;
pub mod seeding;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
pub use game::{
    cross_entropy_loss, defender_expected_utility, deu_gradient, deu_hessian,
    empirical_attack_distribution, qr_attack_distribution, suqr_attack_distribution,
    AttackDistribution, Attractiveness, Coverage, SecurityGame,
};
pub use learning::{Dataset, EvalSummary, TrainConfig, TrainStats};
pub use model::ValueModel;
pub use solver::{project_feasible, solve_defender, uniform_coverage, SolveReport, SolverConfig};
