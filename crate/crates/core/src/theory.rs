//! Two-target theory checks.
//!
//! Small zero-sum games with a single defense resource admit closed forms:
//! the optimal coverage against a rational attacker equals the attacker's
//! value vector, and the spread between the best and worst defender outcomes
//! under a value estimate of fixed mean squared error has an exact ratio.
//! A companion bound quantifies how rational a quantal-response attacker must
//! be for the same estimate-error damage to appear. Everything here is
//! verified by enumeration or dense grid search, independent of the main
//! solver.

use crate::error::{Error, Result};
use crate::game::{defender_expected_utility, qr_attack_distribution, Coverage};

/// A zero-sum two-target game: attacker values `z0 >= z1 >= 0` summing to 1,
/// and an estimate error magnitude `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoTargetGame {
    pub z0: f64,
    pub z1: f64,
    pub epsilon: f64,
}

impl TwoTargetGame {
    pub fn new(z0: f64, z1: f64, epsilon: f64) -> Result<Self> {
        if !(z0 >= z1 && z1 >= 0.0) {
            return Err(Error::param("z", format!("need z0 >= z1 >= 0, got ({z0}, {z1})")));
        }
        if (z0 + z1 - 1.0).abs() > 1e-12 {
            return Err(Error::param("z", format!("z0 + z1 = {} must be 1", z0 + z1)));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::param("epsilon", "must be nonnegative"));
        }
        Ok(TwoTargetGame { z0, z1, epsilon })
    }

    /// The feasibility condition for both error configurations:
    /// `epsilon^2 <= (1 - z0)^2`, plus a nondegenerate second target.
    fn check_theorem1_domain(&self) -> Result<()> {
        if self.epsilon * self.epsilon > (1.0 - self.z0) * (1.0 - self.z0) + 1e-15 {
            return Err(Error::param(
                "epsilon",
                format!("epsilon {} exceeds 1 - z0 = {}", self.epsilon, 1.0 - self.z0),
            ));
        }
        if self.z1 <= 0.0 {
            return Err(Error::param("z1", "must be positive for the ratio"));
        }
        Ok(())
    }
}

/// Index of the rational attacker's target: argmax of `(1 - p_j) u_a(j)`.
/// Ties go to the larger value (the choice adverse to the defender at an
/// equalized optimum), then to the lower index.
pub fn rational_best_response(values: &[f64], coverage: &Coverage) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::param("values", "empty game"));
    }
    if values.len() != coverage.len() {
        return Err(Error::dim("best_response", coverage.len(), values.len()));
    }
    let mut best = 0usize;
    let mut best_payoff = (1.0 - coverage.as_slice()[0]) * values[0];
    for (i, (&v, &p)) in values.iter().zip(coverage.as_slice()).enumerate().skip(1) {
        let payoff = (1.0 - p) * v;
        if payoff > best_payoff || (payoff == best_payoff && v > values[best]) {
            best = i;
            best_payoff = payoff;
        }
    }
    Ok(best)
}

/// The payoff-equalizing optimum against a rational attacker: coverage
/// `(z0, z1)` with defender payoff `-(1 - z0) z0`.
pub fn optimal_rational_coverage(game: &TwoTargetGame) -> Result<(Coverage, f64)> {
    let coverage = Coverage::new(vec![game.z0, game.z1])?;
    Ok((coverage, -(1.0 - game.z0) * game.z0))
}

/// Ratio between the realized utilities of the two extreme estimate
/// configurations at squared error `epsilon^2`:
/// `[(1 - (z0 - eps)) z0] / [(1 - (z1 - eps)) z1] >= 1`.
pub fn theorem1_ratio(game: &TwoTargetGame) -> Result<f64> {
    game.check_theorem1_domain()?;
    let eps = game.epsilon;
    Ok(((1.0 - (game.z0 - eps)) * game.z0) / ((1.0 - (game.z1 - eps)) * game.z1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    /// Realized utility when the estimate underestimates the big target.
    pub deu_under_z0: f64,
    /// Realized utility when the estimate underestimates the small target.
    pub deu_under_z1: f64,
    pub enumerated_ratio: f64,
    pub formula_ratio: f64,
    pub discrepancy: f64,
}

/// Plays out both estimate configurations: the defender covers according to
/// the estimate, the attacker best-responds to the truth, and the resulting
/// best-to-worst utility ratio must reproduce the closed form exactly.
pub fn theorem1_verify(game: &TwoTargetGame) -> Result<Theorem1Report> {
    game.check_theorem1_domain()?;
    let eps = game.epsilon;
    let truth = [game.z0, game.z1];

    let mut realized = [0.0f64; 2];
    for (slot, estimate) in [
        [game.z0 - eps, game.z1 + eps], // underestimates z0
        [game.z0 + eps, game.z1 - eps], // underestimates z1
    ]
    .iter()
    .enumerate()
    {
        // defender's optimal coverage against the estimate is the estimate
        let coverage = Coverage::new(estimate.to_vec())?;
        let target = rational_best_response(&truth, &coverage)?;
        realized[slot] = -(1.0 - coverage.as_slice()[target]) * truth[target];
    }

    let best = realized[0].max(realized[1]);
    let worst = realized[0].min(realized[1]);
    let enumerated = worst / best;
    let formula = theorem1_ratio(game)?;
    Ok(Theorem1Report {
        deu_under_z0: realized[0],
        deu_under_z1: realized[1],
        enumerated_ratio: enumerated,
        formula_ratio: formula,
        discrepancy: (enumerated - formula).abs(),
    })
}

/// Rationality scale at which estimate error of magnitude `epsilon` already
/// costs the defender: `(2 / ((1-alpha) eps)) * log(1 / ((1-alpha) eps))`.
pub fn theorem2_lambda_bound(alpha: f64, epsilon: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha", "must lie in [0, 1]"));
    }
    let scale = (1.0 - alpha) * epsilon;
    if !(scale > 0.0 && scale < 1.0) {
        return Err(Error::param("epsilon", "(1 - alpha) * epsilon must lie in (0, 1)"));
    }
    Ok((2.0 / scale) * (1.0 / scale).ln())
}

/// Defender's best coverage of target 0 against a quantal responder with the
/// given values, by dense grid search over `p in [0, 1]` with `x = (p, 1-p)`.
/// Returns the optimal `p` and its utility. Ties go to the smaller `p`.
pub fn two_target_qr_grid(
    values: [f64; 2],
    lambda: f64,
    resolution: f64,
) -> Result<(f64, f64)> {
    if !(resolution > 0.0 && resolution < 1.0) {
        return Err(Error::param("resolution", "must lie in (0, 1)"));
    }
    let steps = (1.0 / resolution).round() as usize;
    let defender_values = [-values[0], -values[1]];
    let mut best_p = 0.0;
    let mut best_u = f64::NEG_INFINITY;
    for k in 0..=steps {
        let p = k as f64 / steps as f64;
        let coverage = Coverage::new(vec![p, 1.0 - p])?;
        let q = qr_attack_distribution(&values, &coverage, lambda)?;
        let u = defender_expected_utility(&coverage, &q, &defender_values)?;
        if u > best_u {
            best_u = u;
            best_p = p;
        }
    }
    Ok((best_p, best_u))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Report {
    pub lambda: f64,
    /// Coverage cap `1 - alpha * epsilon` the perceived optimum must respect.
    pub coverage_cap: f64,
    /// Grid optimum of the perceived game.
    pub perceived_optimal_coverage: f64,
    /// Realized loss against the true attacker, relative to the rational
    /// optimum of the true game (which is lossless here).
    pub realized_loss: f64,
    /// Guaranteed loss floor `(1 - epsilon) * alpha * epsilon`.
    pub loss_floor: f64,
    pub coverage_cap_holds: bool,
    pub loss_floor_holds: bool,
}

/// The worst-case construction behind the quantal-response bound: the truth
/// is `(1, 0)`, the estimate `(1 - eps, eps)` (squared error `eps^2`). At the
/// bound's lambda the defender who optimizes against the estimate caps her
/// coverage of target 0 at `1 - alpha * eps` and loses at least
/// `(1 - eps) alpha eps` against the true attacker.
pub fn theorem2_verify(alpha: f64, epsilon: f64, grid_resolution: f64) -> Result<Theorem2Report> {
    if !(0.5..1.0).contains(&alpha) {
        return Err(Error::param("alpha", "must lie in [0.5, 1)"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param("epsilon", "must lie in (0, 1)"));
    }
    let lambda = theorem2_lambda_bound(alpha, epsilon)?;
    let estimate = [1.0 - epsilon, epsilon];
    let (p_opt, _) = two_target_qr_grid(estimate, lambda, grid_resolution)?;

    let coverage_cap = 1.0 - alpha * epsilon;
    let coverage_cap_holds = p_opt <= coverage_cap + grid_resolution;

    // realized play: true values (1, 0), same rationality
    let coverage = Coverage::new(vec![p_opt, 1.0 - p_opt])?;
    let q_true = qr_attack_distribution(&[1.0, 0.0], &coverage, lambda)?;
    // the rational optimum of the true game is lossless (cover target 0 fully)
    let realized_loss = q_true.as_slice()[0] * (1.0 - p_opt);
    let loss_floor = (1.0 - epsilon) * alpha * epsilon;
    let loss_floor_holds = realized_loss >= loss_floor - 2.0 * grid_resolution - 1e-9;

    Ok(Theorem2Report {
        lambda,
        coverage_cap,
        perceived_optimal_coverage: p_opt,
        realized_loss,
        loss_floor,
        coverage_cap_holds,
        loss_floor_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn cov(p: &[f64]) -> Coverage {
        Coverage::new(p.to_vec()).unwrap()
    }

    #[test]
    fn best_response_cases() {
        assert_eq!(
            rational_best_response(&[0.6, 0.4], &cov(&[0.0, 0.0])).unwrap(),
            0
        );
        // equalized payoffs tie; the larger value wins
        assert_eq!(
            rational_best_response(&[0.6, 0.4], &cov(&[0.6, 0.4])).unwrap(),
            0
        );
        assert_eq!(
            rational_best_response(&[0.5, 0.5], &cov(&[0.9, 0.0])).unwrap(),
            1
        );
        assert!(rational_best_response(&[], &cov(&[0.5])).is_err());
    }

    #[test]
    fn optimal_coverage_closed_form() {
        let g = TwoTargetGame::new(0.5, 0.5, 0.0).unwrap();
        let (c, deu) = optimal_rational_coverage(&g).unwrap();
        assert_eq!(c.as_slice(), &[0.5, 0.5]);
        assert_relative_eq!(deu, -0.25, max_relative = 1e-15);

        let g = TwoTargetGame::new(0.7, 0.3, 0.0).unwrap();
        let (c, deu) = optimal_rational_coverage(&g).unwrap();
        assert_eq!(c.as_slice(), &[0.7, 0.3]);
        assert_relative_eq!(deu, -0.21, max_relative = 1e-12);

        let g = TwoTargetGame::new(1.0, 0.0, 0.0).unwrap();
        let (c, deu) = optimal_rational_coverage(&g).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 0.0]);
        assert_eq!(deu, 0.0);
    }

    #[test]
    fn ratio_worked_example_and_edges() {
        let g = TwoTargetGame::new(0.6, 0.4, 0.1).unwrap();
        let ratio = theorem1_ratio(&g).unwrap();
        assert_relative_eq!(ratio, 15.0 / 14.0, epsilon = 1e-15);
        assert_relative_eq!(ratio, 1.0714286, epsilon = 1e-7);

        // zero error: both configurations coincide
        let g = TwoTargetGame::new(0.6, 0.4, 0.0).unwrap();
        assert_eq!(theorem1_ratio(&g).unwrap(), 1.0);

        // symmetric targets: symmetric estimates
        let g = TwoTargetGame::new(0.5, 0.5, 0.2).unwrap();
        assert_eq!(theorem1_ratio(&g).unwrap(), 1.0);

        // domain: epsilon beyond 1 - z0 is rejected
        let g = TwoTargetGame::new(0.8, 0.2, 0.3).unwrap();
        assert!(theorem1_ratio(&g).is_err());
    }

    #[test]
    fn enumeration_reproduces_the_formula() {
        let g = TwoTargetGame::new(0.6, 0.4, 0.1).unwrap();
        let report = theorem1_verify(&g).unwrap();
        assert_relative_eq!(report.deu_under_z0, -0.30, epsilon = 1e-15);
        assert_relative_eq!(report.deu_under_z1, -0.28, epsilon = 1e-15);
        assert!(report.discrepancy <= 1e-12);
        assert_relative_eq!(report.enumerated_ratio, 15.0 / 14.0, epsilon = 1e-15);
    }

    #[test]
    fn enumeration_matches_formula_on_random_games() {
        let mut rng = crate::seeding::rng_for(71, &[0]);
        for _ in 0..100 {
            let z0 = rng.gen_range(0.5..0.99);
            let z1 = 1.0 - z0;
            let eps = rng.gen_range(0.0..z1);
            let g = TwoTargetGame::new(z0, z1, eps).unwrap();
            let report = theorem1_verify(&g).unwrap();
            assert!(
                report.discrepancy <= 1e-12,
                "z0={z0} eps={eps}: {} vs {}",
                report.enumerated_ratio,
                report.formula_ratio
            );
            assert!(report.formula_ratio >= 1.0 - 1e-15);
        }
    }

    #[test]
    fn lambda_bound_values() {
        let b = theorem2_lambda_bound(0.5, 0.1).unwrap();
        assert_relative_eq!(b, 40.0 * 20.0f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(b, 119.8293, epsilon = 1e-4);

        // near the domain edge the bound collapses
        let b = theorem2_lambda_bound(0.0, 0.99).unwrap();
        assert_relative_eq!(b, 0.02030, epsilon = 1e-5);

        // monotone in alpha at fixed epsilon
        let lo = theorem2_lambda_bound(0.0, 0.3).unwrap();
        let hi = theorem2_lambda_bound(0.9, 0.3).unwrap();
        assert!(hi > lo);

        assert!(theorem2_lambda_bound(1.5, 0.1).is_err());
        assert!(theorem2_lambda_bound(0.5, 0.0).is_err());
        assert!(theorem2_lambda_bound(0.0, 1.0).is_err());
    }

    #[test]
    fn theorem2_worked_example() {
        let report = theorem2_verify(0.5, 0.1, 1e-4).unwrap();
        assert!(report.coverage_cap_holds, "{report:?}");
        assert!(report.loss_floor_holds, "{report:?}");
        assert!((report.coverage_cap - 0.95).abs() <= 1e-12);
        assert!(report.perceived_optimal_coverage <= 0.95 + 1e-4);
    }

    #[test]
    fn theorem2_random_pairs() {
        let mut rng = crate::seeding::rng_for(72, &[0]);
        for _ in 0..20 {
            let alpha = rng.gen_range(0.5..0.95);
            let eps = rng.gen_range(0.02..0.4);
            let report = theorem2_verify(alpha, eps, 1e-4).unwrap();
            assert!(report.coverage_cap_holds, "alpha={alpha} eps={eps}: {report:?}");
            assert!(report.loss_floor_holds, "alpha={alpha} eps={eps}: {report:?}");
        }
    }

    #[test]
    fn high_lambda_approaches_the_rational_optimum() {
        // 10x the bound: the perceived optimum approaches coverage 1 - eps
        let eps = 0.1;
        let lambda = 10.0 * theorem2_lambda_bound(0.5, eps).unwrap();
        let (p_opt, _) = two_target_qr_grid([1.0 - eps, eps], lambda, 1e-4).unwrap();
        assert!((p_opt - (1.0 - eps)).abs() <= 1e-2, "p_opt = {p_opt}");

        // vanishing error: vanishing loss floor
        let report = theorem2_verify(0.5, 1e-3, 1e-4).unwrap();
        assert!(report.loss_floor <= 1e-3);
    }

    #[test]
    fn qr_grid_consistent_with_rational_coverage() {
        let mut rng = crate::seeding::rng_for(73, &[0]);
        for _ in 0..10 {
            let z0 = rng.gen_range(0.5..0.95);
            let g = TwoTargetGame::new(z0, 1.0 - z0, 0.0).unwrap();
            let (rational, _) = optimal_rational_coverage(&g).unwrap();
            let (p_opt, _) = two_target_qr_grid([g.z0, g.z1], 1e4, 1e-4).unwrap();
            assert!(
                (p_opt - rational.as_slice()[0]).abs() <= 1e-2,
                "z0={z0}: qr grid {p_opt} vs rational {}",
                rational.as_slice()[0]
            );
        }
    }
}
