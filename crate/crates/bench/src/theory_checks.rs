//! Named theory checks behind the `verify-theory` subcommand.

use rand::Rng;

use ssg_core::seeding::rng_for;
use ssg_core::theory::{
    optimal_rational_coverage, theorem1_ratio, theorem1_verify, theorem2_lambda_bound,
    theorem2_verify, two_target_qr_grid, TwoTargetGame,
};
use ssg_core::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy)]
pub struct TheoryConfig {
    pub seed: u64,
    pub theorem1_cases: usize,
    pub theorem2_cases: usize,
    pub grid_resolution: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            seed: 0,
            theorem1_cases: 100,
            theorem2_cases: 20,
            grid_resolution: 1e-4,
        }
    }
}

/// Compares a closed form against an independently enumerated value.
pub fn check_ratio_pair(
    name: &'static str,
    formula: f64,
    enumerated: f64,
    tolerance: f64,
) -> TheoryCheck {
    let discrepancy = (formula - enumerated).abs();
    TheoryCheck {
        name,
        passed: discrepancy <= tolerance,
        detail: format!("formula {formula} vs enumeration {enumerated} (|diff| = {discrepancy:.3e})"),
    }
}

fn worked_example() -> Result<TheoryCheck> {
    let game = TwoTargetGame::new(0.6, 0.4, 0.1)?;
    let report = theorem1_verify(&game)?;
    let mut check = check_ratio_pair(
        "theorem1_worked_example",
        report.formula_ratio,
        report.enumerated_ratio,
        1e-12,
    );
    check.passed = check.passed && (report.formula_ratio - 15.0 / 14.0).abs() <= 1e-12;
    check.detail = format!(
        "z0=0.6 z1=0.4 eps=0.1: realized utilities ({}, {}), ratio {} = 15/14",
        report.deu_under_z0, report.deu_under_z1, report.formula_ratio
    );
    Ok(check)
}

fn random_enumeration(config: &TheoryConfig) -> Result<TheoryCheck> {
    let mut rng = rng_for(config.seed, &[0x7101]);
    let mut worst: f64 = 0.0;
    let mut min_ratio = f64::INFINITY;
    for _ in 0..config.theorem1_cases {
        let z0 = rng.gen_range(0.5..0.99);
        let eps = rng.gen_range(0.0..(1.0 - z0));
        let game = TwoTargetGame::new(z0, 1.0 - z0, eps)?;
        let report = theorem1_verify(&game)?;
        worst = worst.max(report.discrepancy);
        min_ratio = min_ratio.min(theorem1_ratio(&game)?);
    }
    Ok(TheoryCheck {
        name: "theorem1_random_enumeration",
        passed: worst <= 1e-12 && min_ratio >= 1.0 - 1e-15,
        detail: format!(
            "{} cases: max |enumeration - formula| = {worst:.3e}, min ratio = {min_ratio}",
            config.theorem1_cases
        ),
    })
}

fn lambda_bound_example() -> Result<TheoryCheck> {
    let bound = theorem2_lambda_bound(0.5, 0.1)?;
    let expected = 40.0 * 20.0f64.ln();
    Ok(TheoryCheck {
        name: "theorem2_lambda_bound_example",
        passed: (bound - expected).abs() <= 1e-9,
        detail: format!("alpha=0.5 eps=0.1: lambda bound {bound:.4} (40 log 20)"),
    })
}

fn theorem2_random(config: &TheoryConfig) -> Result<TheoryCheck> {
    let mut rng = rng_for(config.seed, &[0x7102]);
    let mut failed = Vec::new();
    for _ in 0..config.theorem2_cases {
        let alpha = rng.gen_range(0.5..0.95);
        let eps = rng.gen_range(0.02..0.4);
        let report = theorem2_verify(alpha, eps, config.grid_resolution)?;
        if !(report.coverage_cap_holds && report.loss_floor_holds) {
            failed.push(format!("(alpha={alpha:.3}, eps={eps:.3})"));
        }
    }
    Ok(TheoryCheck {
        name: "theorem2_random_pairs",
        passed: failed.is_empty(),
        detail: if failed.is_empty() {
            format!(
                "{} cases at resolution {:.0e}: coverage cap and loss floor hold",
                config.theorem2_cases, config.grid_resolution
            )
        } else {
            format!("failed at {}", failed.join(", "))
        },
    })
}

fn qr_rational_consistency(config: &TheoryConfig) -> Result<TheoryCheck> {
    let mut rng = rng_for(config.seed, &[0x7103]);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let z0 = rng.gen_range(0.5..0.95);
        let game = TwoTargetGame::new(z0, 1.0 - z0, 0.0)?;
        let (rational, _) = optimal_rational_coverage(&game)?;
        let (p_opt, _) = two_target_qr_grid([game.z0, game.z1], 1e4, config.grid_resolution)?;
        worst = worst.max((p_opt - rational.as_slice()[0]).abs());
    }
    Ok(TheoryCheck {
        name: "qr_rational_consistency",
        passed: worst <= 1e-2,
        detail: format!("max |qr grid - rational coverage| = {worst:.3e} at lambda = 1e4"),
    })
}

/// Runs every check; any failure should surface as a nonzero exit status.
pub fn run_theory_checks(config: &TheoryConfig) -> Result<Vec<TheoryCheck>> {
    Ok(vec![
        worked_example()?,
        random_enumeration(config)?,
        lambda_bound_example()?,
        theorem2_random(config)?,
        qr_rational_consistency(config)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_run_passes_everything() {
        let checks = run_theory_checks(&TheoryConfig::default()).unwrap();
        assert_eq!(checks.len(), 5);
        for check in &checks {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
        // the worked example is part of the report
        assert!(checks
            .iter()
            .any(|c| c.name == "theorem1_worked_example" && c.detail.contains("15/14")));
    }

    #[test]
    fn injected_wrong_formula_is_named() {
        // simulate a broken closed form; the failure must name theorem1
        let game = TwoTargetGame::new(0.6, 0.4, 0.1).unwrap();
        let report = theorem1_verify(&game).unwrap();
        let wrong_formula = report.formula_ratio + 0.01;
        let check = check_ratio_pair(
            "theorem1_worked_example",
            wrong_formula,
            report.enumerated_ratio,
            1e-12,
        );
        assert!(!check.passed);
        assert!(check.name.contains("theorem1"));
    }
}
