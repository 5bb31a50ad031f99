//! Differentiating the solver's local optimum in the attractiveness estimate.
//!
//! Around a strict local optimum the coverage problem behaves like an
//! equality-pinned quadratic program: active box and budget constraints are
//! held as equalities, the curvature is the (negated, positive-definite)
//! objective Hessian, and implicit differentiation of the stationarity
//! conditions yields `dx*/dphi` from one bordered linear solve. That
//! Jacobian is what lets training gradients flow through the defender's
//! optimization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{deu_cross_phi, deu_gradient, deu_hessian, Attractiveness, Coverage};
use crate::model::{forward, ValueModel};
use crate::solver::SolveReport;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffoptConfig {
    /// Distance from a bound within which a constraint counts as active.
    pub activity_tolerance: f64,
    /// Minimum eigenvalue enforced on the negated-objective Hessian.
    pub strictness_floor: f64,
    /// Pivot threshold when pruning dependent active-constraint rows.
    pub pivot_tolerance: f64,
}

impl Default for DiffoptConfig {
    fn default() -> Self {
        DiffoptConfig {
            activity_tolerance: 1e-6,
            strictness_floor: 1e-6,
            pivot_tolerance: 1e-10,
        }
    }
}

/// Which constraints bind at the reported optimum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
    pub budget: bool,
}

/// The pieces of the equality-pinned quadratic model at the optimum.
#[derive(Debug, Clone)]
pub struct KktSystem {
    /// Negated-objective Hessian, shifted to be positive definite.
    pub hessian: DMatrix<f64>,
    /// Rows are gradients of the retained active constraints.
    pub active_constraints: DMatrix<f64>,
    /// Mixed second derivative of the negated objective, `d²(-DEU)/dx dphi`.
    pub cross_term: DMatrix<f64>,
    /// Least-squares multipliers for the retained rows.
    pub duals: DVector<f64>,
    pub active_set: ActiveSet,
    /// True when the Hessian needed an eigenvalue shift.
    pub regularized: bool,
}

/// Classifies each coverage entry against its bounds and the budget.
/// A coordinate within tolerance of both bounds is degenerate and rejected.
pub fn detect_active_set(report: &SolveReport, budget: f64, activity_tolerance: f64) -> Result<ActiveSet> {
    let p = report.coverage.as_slice();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for (i, &pi) in p.iter().enumerate() {
        let at_lower = pi <= activity_tolerance;
        let at_upper = pi >= 1.0 - activity_tolerance;
        if at_lower && at_upper {
            return Err(Error::DegenerateActiveSet { target: i });
        }
        if at_lower {
            lower.push(i);
        }
        if at_upper {
            upper.push(i);
        }
    }
    let budget_active = report.coverage.total() >= budget - activity_tolerance;
    Ok(ActiveSet {
        lower,
        upper,
        budget: budget_active,
    })
}

/// Shifts a symmetric matrix so its smallest eigenvalue is at least `floor`.
/// Returns the (possibly) adjusted matrix and whether a shift was applied.
pub fn ensure_strict(hessian: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let eigen = hessian.clone().symmetric_eigen();
    let min_eig = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig >= floor {
        return (hessian.clone(), false);
    }
    let shift = floor - min_eig;
    let n = hessian.nrows();
    let shifted = hessian + DMatrix::identity(n, n) * shift;
    (shifted, true)
}

/// Smallest eigenvalue of `h` restricted to the null space of the active
/// rows. Strictness of the pinned optimum lives there: the full-space
/// spectrum may be indefinite at a face optimum without invalidating the
/// quadratic model. `+inf` when the constraints pin every direction.
fn restricted_min_eigenvalue(h: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    let m = a.nrows();
    if m == 0 {
        let eigen = h.clone().symmetric_eigen();
        return eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    }
    if m >= n {
        return f64::INFINITY;
    }
    let at = a.transpose();
    let gram_inv = (a * &at)
        .try_inverse()
        .expect("pruned active rows are linearly independent");
    let projector = DMatrix::identity(n, n) - &at * gram_inv * a;
    // lift the constraint directions above any restricted eigenvalue so
    // the minimum of the lifted spectrum is the restricted minimum
    let lift = 1.0 + h.iter().map(|v| v.abs()).sum::<f64>();
    let lifted = &projector * h * &projector
        + (DMatrix::identity(n, n) - &projector) * lift;
    let symmetrized = (&lifted + lifted.transpose()) * 0.5;
    let eigen = symmetrized.symmetric_eigen();
    eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Greedy Gram-Schmidt rank filter: keeps rows whose residual against the
/// span of the rows already kept exceeds the pivot tolerance.
fn prune_dependent_rows(rows: Vec<DVector<f64>>, pivot_tolerance: f64) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for row in rows {
        let mut residual = row.clone();
        for b in &basis {
            let coeff = residual.dot(b);
            residual -= b * coeff;
        }
        let norm = residual.norm();
        if norm > pivot_tolerance {
            basis.push(residual / norm);
            kept.push(row);
        }
    }
    kept
}

/// Assembles the quadratic model at `(coverage, phi_hat)`.
///
/// Constraint rows are ordered lower-box, upper-box, budget; redundant rows
/// (e.g. the budget row when every target is box-pinned) are pruned.
pub fn build_kkt_system(
    coverage: &Coverage,
    phi_hat: &Attractiveness,
    w: f64,
    defender_values: &[f64],
    budget: f64,
    report: &SolveReport,
    config: &DiffoptConfig,
) -> Result<KktSystem> {
    let n = coverage.len();
    let active_set = detect_active_set(report, budget, config.activity_tolerance)?;

    let h_deu = deu_hessian(coverage, phi_hat, w, defender_values)?;
    let mut h_min = DMatrix::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            h_min[(k, l)] = -h_deu[k][l];
        }
    }

    let mut rows: Vec<DVector<f64>> = Vec::new();
    for &i in active_set.lower.iter().chain(&active_set.upper) {
        let mut row = DVector::zeros(n);
        row[i] = 1.0;
        rows.push(row);
    }
    if active_set.budget {
        rows.push(DVector::from_element(n, 1.0));
    }
    let kept = prune_dependent_rows(rows, config.pivot_tolerance);
    let m = kept.len();
    let mut a = DMatrix::zeros(m, n);
    for (r, row) in kept.iter().enumerate() {
        a.set_row(r, &row.transpose());
    }

    // strictness is judged on the feasible directions; shifting by the
    // identity moves the restricted spectrum one-for-one
    let restricted_min = restricted_min_eigenvalue(&h_min, &a);
    let (hessian, regularized) = if restricted_min >= config.strictness_floor {
        (h_min, false)
    } else {
        let shift = config.strictness_floor - restricted_min;
        (h_min + DMatrix::identity(n, n) * shift, true)
    };

    let c_deu = deu_cross_phi(coverage, phi_hat, w, defender_values)?;
    let mut cross = DMatrix::zeros(n, n);
    for k in 0..n {
        for j in 0..n {
            cross[(k, j)] = -c_deu[k][j];
        }
    }

    // stationarity residual splits across the active normals:
    // duals = argmin || grad(-DEU) + A^T lambda ||
    let g = deu_gradient(coverage, phi_hat, w, defender_values)?;
    let grad_min = DVector::from_iterator(n, g.iter().map(|v| -v));
    let duals = if m > 0 {
        let at = a.transpose();
        let gram = &a * &at;
        gram.lu()
            .solve(&(&a * &grad_min * -1.0))
            .unwrap_or_else(|| DVector::zeros(m))
    } else {
        DVector::zeros(0)
    };

    Ok(KktSystem {
        hessian,
        active_constraints: a,
        cross_term: cross,
        duals,
        active_set,
        regularized,
    })
}

/// Solves the bordered system
/// `[H A^T; A 0] [dx; dl] = [-cross; 0]` column by column, giving the
/// Jacobian `dx*/dphi`. Coordinates pinned by active box constraints get
/// zero rows; columns stay in the null space of the active rows.
pub fn solution_jacobian(system: &KktSystem) -> Result<DMatrix<f64>> {
    let n = system.hessian.nrows();
    let m = system.active_constraints.nrows();
    let dim = n + m;
    let mut k = DMatrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(&system.hessian);
    if m > 0 {
        k.view_mut((0, n), (n, m))
            .copy_from(&system.active_constraints.transpose());
        k.view_mut((n, 0), (m, n)).copy_from(&system.active_constraints);
    }

    let svd = k.clone().svd(true, true);
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let s_min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(s_min > s_max * 1e-12) {
        return Err(Error::SingularSystem {
            condition: if s_min > 0.0 { s_max / s_min } else { f64::INFINITY },
        });
    }

    let mut rhs = DMatrix::zeros(dim, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-&system.cross_term));
    let solution = svd
        .solve(&rhs, 0.0)
        .map_err(|_| Error::SingularSystem { condition: s_max / s_min })?;
    Ok(solution.view((0, 0), (n, n)).into_owned())
}

/// Chain rule through the optimum: gradient of the true expected utility at
/// `x*(phi_hat)` with respect to the model's attractiveness output,
/// `g^T J` with `g = dDEU(x*; phi_true)/dx` and `J = dx*/dphi_hat`.
pub fn chain_gradient(
    features: &[Vec<f64>],
    model: &ValueModel,
    report: &SolveReport,
    true_phi: &Attractiveness,
    defender_values: &[f64],
    budget: f64,
    config: &DiffoptConfig,
) -> Result<Vec<f64>> {
    let phi_hat = forward(model, features, None)?;
    chain_gradient_at(
        &phi_hat,
        model.w_coverage,
        report,
        true_phi,
        defender_values,
        budget,
        config,
    )
}

/// The same chain rule for a caller-supplied attractiveness estimate (the
/// training loop passes its dropout-masked forward output here).
pub fn chain_gradient_at(
    phi_hat: &Attractiveness,
    w: f64,
    report: &SolveReport,
    true_phi: &Attractiveness,
    defender_values: &[f64],
    budget: f64,
    config: &DiffoptConfig,
) -> Result<Vec<f64>> {
    let system = build_kkt_system(
        &report.coverage,
        phi_hat,
        w,
        defender_values,
        budget,
        report,
        config,
    )?;
    let jac = solution_jacobian(&system)?;
    let g = deu_gradient(&report.coverage, true_phi, w, defender_values)?;
    let gv = DVector::from_vec(g);
    let grad_phi = jac.transpose() * gv;
    Ok(grad_phi.iter().cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::deu_under_suqr;
    use crate::solver::{solve_defender, solve_from, SolverConfig};
    use rand::Rng;

    fn phi(v: &[f64]) -> Attractiveness {
        Attractiveness::new(v.to_vec()).unwrap()
    }

    fn tight_config() -> SolverConfig {
        SolverConfig {
            stationarity_tolerance: 1e-10,
            max_iterations: 5000,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn active_set_detection_cases() {
        let cfg = SolverConfig::default();
        // budget face only
        let r = solve_defender(&phi(&[0.0, 0.0]), -4.0, &[-1.0, -1.0], 1.0, &cfg).unwrap();
        let s = detect_active_set(&r, 1.0, 1e-6).unwrap();
        assert!(s.budget && s.lower.is_empty() && s.upper.is_empty());

        // hand-built corner report: (1, 0) under budget 1
        let corner = SolveReport {
            coverage: Coverage::new(vec![1.0, 0.0]).unwrap(),
            objective: 0.0,
            stationarity_residual: 0.0,
            active_lower: vec![1],
            active_upper: vec![0],
            budget_active: true,
            restarts_used: 1,
            best_restart_index: 0,
            converged: true,
        };
        let s = detect_active_set(&corner, 1.0, 1e-6).unwrap();
        assert_eq!(s.lower, vec![1]);
        assert_eq!(s.upper, vec![0]);
        assert!(s.budget);

        // interior point of a loose budget
        let loose = SolveReport {
            coverage: Coverage::new(vec![0.2, 0.3]).unwrap(),
            objective: 0.0,
            stationarity_residual: 0.0,
            active_lower: vec![],
            active_upper: vec![],
            budget_active: false,
            restarts_used: 1,
            best_restart_index: 0,
            converged: true,
        };
        let s = detect_active_set(&loose, 1.0, 1e-6).unwrap();
        assert!(!s.budget && s.lower.is_empty() && s.upper.is_empty());
    }

    #[test]
    fn budget_row_pruned_when_spanned_by_box_rows() {
        // (1, 0) with budget 1: e0, e1 active and the budget row e0 + e1 is
        // dependent, so only the two box rows survive.
        let report = SolveReport {
            coverage: Coverage::new(vec![1.0, 0.0]).unwrap(),
            objective: 0.0,
            stationarity_residual: 0.0,
            active_lower: vec![1],
            active_upper: vec![0],
            budget_active: true,
            restarts_used: 1,
            best_restart_index: 0,
            converged: true,
        };
        let system = build_kkt_system(
            &report.coverage,
            &phi(&[0.5, -0.5]),
            -4.0,
            &[-1.0, -2.0],
            1.0,
            &report,
            &DiffoptConfig::default(),
        )
        .unwrap();
        assert_eq!(system.active_constraints.nrows(), 2);
        // the Jacobian of a fully pinned solution is zero
        let jac = solution_jacobian(&system).unwrap();
        assert!(jac.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn ensure_strict_cases() {
        let id = DMatrix::<f64>::identity(2, 2);
        let (out, flagged) = ensure_strict(&id, 1e-6);
        assert_eq!(out, id);
        assert!(!flagged);

        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let (out, flagged) = ensure_strict(&h, 1e-6);
        assert!(flagged);
        let eigen = out.clone().symmetric_eigen();
        let min_eig = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min_eig - 1e-6).abs() <= 1e-12);
        assert!((out[(0, 0)] - (1.5 + 1e-6)).abs() <= 1e-12);

        let zero = DMatrix::<f64>::zeros(3, 3);
        let (out, flagged) = ensure_strict(&zero, 1e-6);
        assert!(flagged);
        for i in 0..3 {
            assert!((out[(i, i)] - 1e-6).abs() <= 1e-15);
        }

        // the shift is a nonnegative multiple of the identity
        let diff = &out - &zero;
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert!(diff[(i, j)] >= 0.0);
                } else {
                    assert_eq!(diff[(i, j)], 0.0);
                }
            }
        }
    }

    fn random_stable_instance(
        rng: &mut impl Rng,
        n: usize,
    ) -> (Attractiveness, f64, Vec<f64>, f64) {
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = -rng.gen_range(2.0..5.0);
        let u: Vec<f64> = (0..n).map(|_| -rng.gen_range(2.0..8.0)).collect();
        let budget = 0.5 * n as f64;
        (phi(&f), w, u, budget)
    }

    /// Basin-tracked finite differences of the solver's optimum.
    fn fd_jacobian(
        f: &Attractiveness,
        w: f64,
        u: &[f64],
        budget: f64,
        base: &Coverage,
        h: f64,
    ) -> DMatrix<f64> {
        let n = f.len();
        let cfg = tight_config();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut hi = f.as_slice().to_vec();
            let mut lo = hi.clone();
            hi[j] += h;
            lo[j] -= h;
            let rhi = solve_from(base, &Attractiveness::new(hi).unwrap(), w, u, budget, &cfg).unwrap();
            let rlo = solve_from(base, &Attractiveness::new(lo).unwrap(), w, u, budget, &cfg).unwrap();
            for k in 0..n {
                jac[(k, j)] =
                    (rhi.coverage.as_slice()[k] - rlo.coverage.as_slice()[k]) / (2.0 * h);
            }
        }
        jac
    }

    #[test]
    fn jacobian_matches_basin_tracked_finite_differences() {
        let mut rng = crate::seeding::rng_for(51, &[0]);
        let cfg = tight_config();
        let mut checked = 0;
        for trial in 0..12 {
            let n = 2 + trial % 3;
            let (f, w, u, budget) = random_stable_instance(&mut rng, n);
            let report = solve_defender(&f, w, &u, budget, &cfg).unwrap();
            let set = detect_active_set(&report, budget, 1e-6).unwrap();
            // only budget-face optima: box activity under perturbation is
            // where strict complementarity can fail
            if !(set.lower.is_empty() && set.upper.is_empty()) {
                continue;
            }
            let system = build_kkt_system(
                &report.coverage,
                &f,
                w,
                &u,
                budget,
                &report,
                &DiffoptConfig::default(),
            )
            .unwrap();
            let jac = solution_jacobian(&system).unwrap();
            let fd = fd_jacobian(&f, w, &u, budget, &report.coverage, 1e-4);
            for k in 0..n {
                for j in 0..n {
                    let a = jac[(k, j)];
                    let b = fd[(k, j)];
                    if a.abs() > 1e-6 || b.abs() > 1e-6 {
                        assert!(
                            (a - b).abs() / a.abs().max(b.abs()) <= 1e-3,
                            "trial {trial} J[{k}][{j}]: kkt {a} vs fd {b}"
                        );
                    }
                }
            }
            checked += 1;
        }
        assert!(checked >= 5, "only {checked} instances were face-interior");
    }

    #[test]
    fn jacobian_columns_respect_constraints_and_gauge() {
        let mut rng = crate::seeding::rng_for(52, &[0]);
        let cfg = tight_config();
        for _ in 0..8 {
            let n = 2 + rng.gen_range(0..3);
            let (f, w, u, budget) = random_stable_instance(&mut rng, n);
            let report = solve_defender(&f, w, &u, budget, &cfg).unwrap();
            let system = build_kkt_system(
                &report.coverage,
                &f,
                w,
                &u,
                budget,
                &report,
                &DiffoptConfig::default(),
            )
            .unwrap();
            let jac = solution_jacobian(&system).unwrap();

            // columns lie in the null space of the active rows
            let residual = &system.active_constraints * &jac;
            assert!(residual.iter().all(|v| v.abs() <= 1e-8));

            // budget face: every column sums to zero
            if system.active_set.budget {
                for j in 0..n {
                    let col_sum: f64 = (0..n).map(|k| jac[(k, j)]).sum();
                    assert!(col_sum.abs() <= 1e-8);
                }
            }

            // gauge: a constant shift of phi does not move the optimum
            let ones = DVector::from_element(n, 1.0);
            let moved = &jac * ones;
            assert!(moved.iter().all(|v| v.abs() <= 1e-8));
        }
    }

    #[test]
    fn chain_gradient_vanishes_at_the_true_optimum() {
        let cfg = tight_config();
        let f = phi(&[0.6, -0.2, -0.4]);
        let u = [-3.0, -5.0, -2.0];
        // at phi_hat = phi_true the optimum's utility gradient is a
        // combination of active normals, which the Jacobian annihilates
        let report = solve_defender(&f, -4.0, &u, 1.5, &cfg).unwrap();
        let system = build_kkt_system(
            &report.coverage,
            &f,
            -4.0,
            &u,
            1.5,
            &report,
            &DiffoptConfig::default(),
        )
        .unwrap();
        let jac = solution_jacobian(&system).unwrap();
        let g = deu_gradient(&report.coverage, &f, -4.0, &u).unwrap();
        let chain = jac.transpose() * DVector::from_vec(g);
        assert!(
            chain.iter().all(|v| v.abs() <= 1e-5),
            "stationary chain gradient: {chain:?}"
        );
    }

    #[test]
    fn chain_gradient_zero_values_is_zero() {
        let cfg = SolverConfig::default();
        let features = vec![vec![0.4], vec![-0.4]];
        let model = crate::model::init_model(1, 4, -4.0, 3).unwrap();
        let f_hat = forward(&model, &features, None).unwrap();
        let report = solve_defender(&f_hat, -4.0, &[0.0, 0.0], 1.0, &cfg).unwrap();
        let g = chain_gradient(
            &features,
            &model,
            &report,
            &phi(&[0.1, -0.1]),
            &[0.0, 0.0],
            1.0,
            &DiffoptConfig::default(),
        )
        .unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn chain_gradient_matches_finite_differences_of_true_deu() {
        let mut rng = crate::seeding::rng_for(53, &[0]);
        let cfg = tight_config();
        let mut checked = 0;
        for trial in 0..10 {
            let n = 3;
            let (f_true, w, u, budget) = random_stable_instance(&mut rng, n);
            let f_hat_raw: Vec<f64> = f_true
                .as_slice()
                .iter()
                .map(|v| v + rng.gen_range(-0.3..0.3))
                .collect();
            let f_hat = Attractiveness::new(f_hat_raw).unwrap();
            let report = solve_defender(&f_hat, w, &u, budget, &cfg).unwrap();
            let set = detect_active_set(&report, budget, 1e-6).unwrap();
            if !(set.lower.is_empty() && set.upper.is_empty()) {
                continue;
            }
            let system = build_kkt_system(
                &report.coverage,
                &f_hat,
                w,
                &u,
                budget,
                &report,
                &DiffoptConfig::default(),
            )
            .unwrap();
            let jac = solution_jacobian(&system).unwrap();
            let g = deu_gradient(&report.coverage, &f_true, w, &u).unwrap();
            let chain = jac.transpose() * DVector::from_vec(g);

            let h = 1e-4;
            for j in 0..n {
                let mut hi = f_hat.as_slice().to_vec();
                let mut lo = hi.clone();
                hi[j] += h;
                lo[j] -= h;
                let true_deu = |fh: Vec<f64>| -> f64 {
                    let r = solve_from(
                        &report.coverage,
                        &Attractiveness::new(fh).unwrap(),
                        w,
                        &u,
                        budget,
                        &cfg,
                    )
                    .unwrap();
                    deu_under_suqr(&r.coverage, &f_true, w, &u).unwrap()
                };
                let fd = (true_deu(hi) - true_deu(lo)) / (2.0 * h);
                let a = chain[j];
                if a.abs() > 1e-6 || fd.abs() > 1e-6 {
                    assert!(
                        (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3) <= 1e-3,
                        "trial {trial} phi_{j}: chain {a} vs fd {fd}"
                    );
                }
            }
            checked += 1;
        }
        assert!(checked >= 4, "only {checked} stable instances");
    }

    #[test]
    fn degenerate_bound_pair_is_an_error() {
        let report = SolveReport {
            coverage: Coverage::new(vec![0.5]).unwrap(),
            objective: 0.0,
            stationarity_residual: 0.0,
            active_lower: vec![],
            active_upper: vec![],
            budget_active: false,
            restarts_used: 1,
            best_restart_index: 0,
            converged: true,
        };
        // activity tolerance wide enough to pin both bounds at once
        assert!(matches!(
            detect_active_set(&report, 1.0, 0.6),
            Err(Error::DegenerateActiveSet { target: 0 })
        ));
    }
}
