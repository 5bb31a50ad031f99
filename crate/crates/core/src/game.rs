//! Core game types and the attack/utility math.
//!
//! A security game pits a defender, who spreads a coverage budget over a set
//! of targets, against an attacker who picks a target to hit. The attacker
//! models here are softmax responders: the subjective-utility variant scores
//! each target by `w * p_i + phi_i` (coverage weight `w < 0` plus a learned
//! per-target attractiveness), the classic quantal-response variant by
//! `lambda * (1 - p_i) * u_a(i)`. The defender's expected utility and its
//! first two derivatives in coverage are available in closed form, which is
//! what the solver and the end-to-end trainer build on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability-mass tolerance for validating distributions.
pub const DIST_TOL: f64 = 1e-12;

/// Tolerance below which an attractiveness vector counts as mean-centered.
pub const GAUGE_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// One game instance: targets with features, defender values, a coverage
/// budget, and (for training games) the observed history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityGame {
    pub target_count: usize,
    /// Per-target feature rows, `target_count x feature_dim`.
    pub features: Vec<Vec<f64>>,
    /// Defender value of a successful attack on each target; all `<= 0`.
    /// A defended attack pays zero to both players.
    pub defender_values: Vec<f64>,
    /// Number of defense resources; `0 < budget <= target_count`.
    pub budget: f64,
    /// Coverage that was in force when the attacks were observed.
    pub historical_coverage: Option<Coverage>,
    /// Observed attack counts per target.
    pub attack_counts: Option<Vec<u64>>,
    /// Ground-truth attractiveness, attached to test games for evaluation.
    pub true_phi: Option<Attractiveness>,
}

impl SecurityGame {
    pub fn new(
        features: Vec<Vec<f64>>,
        defender_values: Vec<f64>,
        budget: f64,
        historical_coverage: Option<Coverage>,
        attack_counts: Option<Vec<u64>>,
        true_phi: Option<Attractiveness>,
    ) -> Result<Self> {
        let target_count = features.len();
        if target_count == 0 {
            return Err(Error::InvalidGame("game has no targets".into()));
        }
        let feature_dim = features[0].len();
        if features.iter().any(|row| row.len() != feature_dim) {
            return Err(Error::InvalidGame("ragged feature matrix".into()));
        }
        if defender_values.len() != target_count {
            return Err(Error::dim(
                "defender_values",
                target_count,
                defender_values.len(),
            ));
        }
        if defender_values.iter().any(|&u| u > 0.0 || !u.is_finite()) {
            return Err(Error::InvalidGame(
                "defender values must be finite and <= 0".into(),
            ));
        }
        if !(budget > 0.0) || budget > target_count as f64 {
            return Err(Error::InvalidGame(format!(
                "budget {budget} outside (0, {target_count}]"
            )));
        }
        if attack_counts.is_some() && historical_coverage.is_none() {
            return Err(Error::InvalidGame(
                "attack counts require a historical coverage".into(),
            ));
        }
        if let Some(cov) = &historical_coverage {
            if cov.len() != target_count {
                return Err(Error::dim("historical_coverage", target_count, cov.len()));
            }
            if !cov.is_feasible(budget, 1e-9) {
                return Err(Error::InvalidGame(
                    "historical coverage violates the budget".into(),
                ));
            }
        }
        if let Some(counts) = &attack_counts {
            if counts.len() != target_count {
                return Err(Error::dim("attack_counts", target_count, counts.len()));
            }
        }
        if let Some(phi) = &true_phi {
            if phi.len() != target_count {
                return Err(Error::dim("true_phi", target_count, phi.len()));
            }
        }
        Ok(SecurityGame {
            target_count,
            features,
            defender_values,
            budget,
            historical_coverage,
            attack_counts,
            true_phi,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }
}

/// A marginal coverage vector: each entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage(Vec<f64>);

impl Coverage {
    /// Validates entries into `[0, 1]` (1e-9 slack, then clamped exactly).
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::param("coverage", "empty vector"));
        }
        let mut p = probabilities;
        for v in &mut p {
            if !v.is_finite() || *v < -1e-9 || *v > 1.0 + 1e-9 {
                return Err(Error::param("coverage", format!("entry {v} outside [0,1]")));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Coverage(p))
    }

    pub fn uniform(target_count: usize, budget: f64) -> Result<Self> {
        if target_count == 0 {
            return Err(Error::param("target_count", "zero targets"));
        }
        Coverage::new(vec![budget / target_count as f64; target_count])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Box and budget feasibility within `tol`.
    pub fn is_feasible(&self, budget: f64, tol: f64) -> bool {
        self.0.iter().all(|&p| (-tol..=1.0 + tol).contains(&p)) && self.total() <= budget + tol
    }
}

/// A probability vector over targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackDistribution(Vec<f64>);

impl AttackDistribution {
    /// Validates nonnegativity and unit mass (within [`DIST_TOL`] scaled by
    /// the vector length). Zero entries are allowed: empirical distributions
    /// may contain them, while softmax outputs are strictly positive by
    /// construction.
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::param("distribution", "empty vector"));
        }
        if probabilities.iter().any(|&q| !q.is_finite() || q < 0.0) {
            return Err(Error::param(
                "distribution",
                "entries must be finite and nonnegative",
            ));
        }
        let sum: f64 = probabilities.iter().sum();
        let tol = DIST_TOL * probabilities.len().max(1) as f64;
        if (sum - 1.0).abs() > tol {
            return Err(Error::param(
                "distribution",
                format!("mass {sum} is not 1 within {tol:e}"),
            ));
        }
        Ok(AttackDistribution(probabilities))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-target attractiveness in the canonical mean-centered gauge.
///
/// The softmax attacker is invariant to adding a constant to every entry, so
/// attractiveness is identifiable only up to a shift; storing the centered
/// representative makes round trips and comparisons exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attractiveness(Vec<f64>);

impl Attractiveness {
    /// Centers `values` to mean zero and wraps them.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("attractiveness", "empty vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("attractiveness", "entries must be finite"));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Ok(Attractiveness(values.iter().map(|v| v - mean).collect()))
    }

    /// Wraps values that are already centered; rejects a violated gauge.
    /// Unlike [`Attractiveness::new`] the entries are kept bit-for-bit, so
    /// persisted vectors survive a load unchanged.
    pub fn from_centered(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("attractiveness", "empty vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("attractiveness", "entries must be finite"));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if mean.abs() > GAUGE_TOL {
            return Err(Error::param(
                "attractiveness",
                format!("mean {mean:e} exceeds the centering tolerance"),
            ));
        }
        Ok(Attractiveness(values))
    }

    pub fn zeros(target_count: usize) -> Self {
        Attractiveness(vec![0.0; target_count])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

// ---------------------------------------------------------------------------
// Attack models
// ---------------------------------------------------------------------------

/// Softmax with max-subtraction; finite and normalized for any finite scores.
fn stable_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Subjective-utility attack distribution: `q_i ∝ exp(w * p_i + phi_i)`.
pub fn suqr_attack_distribution(
    coverage: &Coverage,
    phi: &Attractiveness,
    w: f64,
) -> Result<AttackDistribution> {
    if !(w < 0.0) {
        return Err(Error::param("w", format!("coverage weight {w} must be < 0")));
    }
    if coverage.len() != phi.len() {
        return Err(Error::dim("suqr", coverage.len(), phi.len()));
    }
    let scores: Vec<f64> = coverage
        .as_slice()
        .iter()
        .zip(phi.as_slice())
        .map(|(&p, &f)| w * p + f)
        .collect();
    AttackDistribution::new(stable_softmax(&scores))
}

/// Quantal-response attack distribution: `q_i ∝ exp(lambda * (1 - p_i) * u_a(i))`.
pub fn qr_attack_distribution(
    attacker_values: &[f64],
    coverage: &Coverage,
    lambda: f64,
) -> Result<AttackDistribution> {
    if !(lambda > 0.0) {
        return Err(Error::param(
            "lambda",
            format!("rationality {lambda} must be > 0"),
        ));
    }
    if attacker_values.len() != coverage.len() {
        return Err(Error::dim("qr", coverage.len(), attacker_values.len()));
    }
    let scores: Vec<f64> = attacker_values
        .iter()
        .zip(coverage.as_slice())
        .map(|(&u, &p)| lambda * (1.0 - p) * u)
        .collect();
    AttackDistribution::new(stable_softmax(&scores))
}

/// Normalizes observed attack counts into a distribution. Zeros are fine;
/// an all-zero count vector is not.
pub fn empirical_attack_distribution(attack_counts: &[u64]) -> Result<AttackDistribution> {
    let total: u64 = attack_counts.iter().sum();
    if total == 0 {
        return Err(Error::param("attack_counts", "no attacks observed"));
    }
    AttackDistribution::new(
        attack_counts
            .iter()
            .map(|&c| c as f64 / total as f64)
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Defender utility and derivatives
// ---------------------------------------------------------------------------

/// Defender expected utility `Σ_i (1 - p_i) q_i u_d(i)`.
pub fn defender_expected_utility(
    coverage: &Coverage,
    q: &AttackDistribution,
    defender_values: &[f64],
) -> Result<f64> {
    if q.len() != coverage.len() {
        return Err(Error::dim("deu q", coverage.len(), q.len()));
    }
    if defender_values.len() != coverage.len() {
        return Err(Error::dim("deu u_d", coverage.len(), defender_values.len()));
    }
    Ok(coverage
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .zip(defender_values)
        .map(|((&p, &qi), &u)| (1.0 - p) * qi * u)
        .sum())
}

/// Shorthand: expected utility under the subjective-utility attacker.
pub fn deu_under_suqr(
    coverage: &Coverage,
    phi: &Attractiveness,
    w: f64,
    defender_values: &[f64],
) -> Result<f64> {
    let q = suqr_attack_distribution(coverage, phi, w)?;
    defender_expected_utility(coverage, &q, defender_values)
}

/// Exact gradient of `DEU(p; q(p, phi))` in coverage, with `phi` held fixed.
///
/// The attack distribution moves with the coverage, so the product rule
/// couples every target:
/// `∂DEU/∂p_k = -q_k u_k + w q_k [ (1 - p_k) u_k - DEU ]`.
pub fn deu_gradient(
    coverage: &Coverage,
    phi: &Attractiveness,
    w: f64,
    defender_values: &[f64],
) -> Result<Vec<f64>> {
    let q = suqr_attack_distribution(coverage, phi, w)?;
    if defender_values.len() != coverage.len() {
        return Err(Error::dim(
            "deu_gradient u_d",
            coverage.len(),
            defender_values.len(),
        ));
    }
    let deu = defender_expected_utility(coverage, &q, defender_values)?;
    Ok(coverage
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .zip(defender_values)
        .map(|((&p, &qk), &u)| -qk * u + w * qk * ((1.0 - p) * u - deu))
        .collect())
}

/// Exact Hessian of `DEU` in coverage; symmetric by construction:
/// `H_kl = w [ δ_kl (g_k - q_k u_k) - q_l g_k - q_k g_l ]`.
pub fn deu_hessian(
    coverage: &Coverage,
    phi: &Attractiveness,
    w: f64,
    defender_values: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let q = suqr_attack_distribution(coverage, phi, w)?;
    let g = deu_gradient(coverage, phi, w, defender_values)?;
    let n = coverage.len();
    let qs = q.as_slice();
    let mut h = vec![vec![0.0; n]; n];
    for k in 0..n {
        for l in 0..n {
            let mut v = -qs[l] * g[k] - qs[k] * g[l];
            if k == l {
                v += g[k] - qs[k] * defender_values[k];
            }
            h[k][l] = w * v;
        }
    }
    Ok(h)
}

/// Mixed second derivative `∂²DEU/∂p_k ∂phi_j`, used when differentiating
/// the solver's optimum in the attractiveness estimate:
/// `C_kj = (δ_kj - q_j) g_k - w q_k q_j m_j` with `m_j = (1 - p_j) u_j - DEU`.
pub fn deu_cross_phi(
    coverage: &Coverage,
    phi: &Attractiveness,
    w: f64,
    defender_values: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let q = suqr_attack_distribution(coverage, phi, w)?;
    let g = deu_gradient(coverage, phi, w, defender_values)?;
    let deu = defender_expected_utility(coverage, &q, defender_values)?;
    let n = coverage.len();
    let qs = q.as_slice();
    let ps = coverage.as_slice();
    let m: Vec<f64> = (0..n)
        .map(|j| (1.0 - ps[j]) * defender_values[j] - deu)
        .collect();
    let mut c = vec![vec![0.0; n]; n];
    for k in 0..n {
        for j in 0..n {
            let delta = if k == j { 1.0 } else { 0.0 };
            c[k][j] = (delta - qs[j]) * g[k] - w * qs[k] * qs[j] * m[j];
        }
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Cross entropy `-Σ_i q̃_i log q̂_i` of a predicted distribution against an
/// empirical one. A zero prediction under nonzero empirical mass is an error
/// rather than infinity.
pub fn cross_entropy_loss(
    predicted: &AttackDistribution,
    empirical: &AttackDistribution,
) -> Result<f64> {
    if predicted.len() != empirical.len() {
        return Err(Error::dim("cross_entropy", empirical.len(), predicted.len()));
    }
    let mut loss = 0.0;
    for (&q_hat, &q_tilde) in predicted.as_slice().iter().zip(empirical.as_slice()) {
        if q_tilde == 0.0 {
            continue;
        }
        if q_hat <= 0.0 {
            return Err(Error::param(
                "predicted",
                "zero predicted probability under nonzero empirical mass",
            ));
        }
        loss -= q_tilde * q_hat.ln();
    }
    Ok(loss.max(0.0))
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(dist: &AttackDistribution) -> f64 {
    dist.as_slice()
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.ln())
        .sum()
}
