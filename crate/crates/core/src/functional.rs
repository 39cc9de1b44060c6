//! Probability functionals, their influence functions, and the derivative
//! machinery built on them.
//!
//! A functional `J` maps a [`ProbVector`] to an extended real. Its influence
//! function `Ψ_μ` represents the Gâteaux differential at `μ`:
//!
//! ```text
//! d/dε J(μ + ε(ν − μ)) |_{ε=0}  =  ⟨Ψ_μ, ν − μ⟩
//! ```
//!
//! Because `ν − μ` has zero mass, `Ψ_μ` is only determined up to an additive
//! constant. Every comparison in this module respects that.

use std::fmt::Debug;
use std::sync::Arc;

use rand::Rng;

use crate::error::{PfdError, ProbeSide, Result};
use crate::space::{dot, random_dirichlet, sample, softmax, LogitParam, ProbVector};

/// Finite-difference step for Gâteaux quotients.
pub const GATEAUX_STEP: f64 = 1e-5;

/// Number of Dirichlet probes used by [`probe_set`] by default.
pub const DEFAULT_PROBES: usize = 100;

/// A real function on the points of a finite space, read as an influence
/// function estimate. Defined modulo additive constants.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceVector(pub Vec<f64>);

impl InfluenceVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Subtracts `E_μ[ψ]` so the result has zero mean under μ.
    pub fn centered(&self, mu: &ProbVector) -> InfluenceVector {
        let mean = mu.expect(&self.0);
        InfluenceVector(self.0.iter().map(|v| v - mean).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A functional on probability measures over a finite space.
pub trait ProbabilityFunctional: Debug + Send + Sync {
    fn name(&self) -> &str;

    /// Number of points in the underlying space.
    fn dim(&self) -> usize;

    /// `J(μ)`; may be `+inf`.
    fn value(&self, mu: &ProbVector) -> f64;

    /// Whether [`ProbabilityFunctional::influence`] is implemented.
    fn has_influence(&self) -> bool {
        false
    }

    /// Exact influence function at μ.
    fn influence(&self, _mu: &ProbVector) -> Result<InfluenceVector> {
        Err(PfdError::Unsupported(format!("{} has no exact influence function", self.name())))
    }

    fn is_convex(&self) -> bool {
        false
    }
}

/// Shared, immutable handle to a functional.
pub type FunctionalHandle = Arc<dyn ProbabilityFunctional>;

/// The linear functional `μ ↦ ⟨c, μ⟩`, whose influence is `c` itself.
#[derive(Debug, Clone)]
pub struct LinearFunctional {
    pub coefficients: Vec<f64>,
}

impl ProbabilityFunctional for LinearFunctional {
    fn name(&self) -> &str {
        "linear"
    }
    fn dim(&self) -> usize {
        self.coefficients.len()
    }
    fn value(&self, mu: &ProbVector) -> f64 {
        mu.expect(&self.coefficients)
    }
    fn has_influence(&self) -> bool {
        true
    }
    fn influence(&self, _mu: &ProbVector) -> Result<InfluenceVector> {
        Ok(InfluenceVector(self.coefficients.clone()))
    }
    fn is_convex(&self) -> bool {
        true
    }
}

fn finite_or(side: ProbeSide, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(PfdError::NonFiniteProbe(side))
    }
}

/// Finite-difference Gâteaux derivative of `J` at `μ` in direction `ν − μ`.
///
/// Uses the central quotient when `μ − εχ` stays in the simplex and the
/// one-sided quotient otherwise.
pub fn gateaux_fd(
    j: &dyn ProbabilityFunctional,
    mu: &ProbVector,
    nu: &ProbVector,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(PfdError::Domain(format!("finite-difference step {eps} must be positive")));
    }
    if mu.len() != nu.len() {
        return Err(PfdError::DimensionMismatch { expected: mu.len(), got: nu.len() });
    }
    let plus: Vec<f64> = mu
        .as_slice()
        .iter()
        .zip(nu.as_slice())
        .map(|(m, n)| m + eps * (n - m))
        .collect();
    let minus: Vec<f64> = mu
        .as_slice()
        .iter()
        .zip(nu.as_slice())
        .map(|(m, n)| m - eps * (n - m))
        .collect();
    let plus = ProbVector::new(plus)?;
    let j_plus = finite_or(ProbeSide::Plus, j.value(&plus))?;

    if minus.iter().all(|&v| v >= 0.0) {
        let minus = ProbVector::new(minus)?;
        let j_minus = finite_or(ProbeSide::Minus, j.value(&minus))?;
        Ok((j_plus - j_minus) / (2.0 * eps))
    } else {
        let j0 = finite_or(ProbeSide::Base, j.value(mu))?;
        Ok((j_plus - j0) / eps)
    }
}

/// Probe measures for residual checks: `count` flat-Dirichlet draws followed
/// by the `n` vertex-pulled mixtures `0.9·μ + 0.1·δ_i`.
pub fn probe_set<R: Rng + ?Sized>(mu: &ProbVector, rng: &mut R, count: usize) -> Vec<ProbVector> {
    let n = mu.len();
    let mut probes: Vec<ProbVector> = (0..count).map(|_| random_dirichlet(n, rng)).collect();
    for i in 0..n {
        let pulled = mu
            .as_slice()
            .iter()
            .enumerate()
            .map(|(k, m)| 0.9 * m + if k == i { 0.1 } else { 0.0 })
            .collect();
        probes.push(ProbVector::new(pulled).expect("mixture of probabilities"));
    }
    probes
}

/// Largest discrepancy between the finite-difference Gâteaux derivative and
/// the linear form `⟨ψ, ν − μ⟩` over the probe set.
pub fn influence_residual(
    j: &dyn ProbabilityFunctional,
    psi: &InfluenceVector,
    mu: &ProbVector,
    probes: &[ProbVector],
    eps: f64,
) -> Result<f64> {
    if probes.is_empty() {
        return Err(PfdError::Domain("influence residual needs at least one probe".into()));
    }
    if psi.len() != mu.len() {
        return Err(PfdError::DimensionMismatch { expected: mu.len(), got: psi.len() });
    }
    let mut worst = 0.0_f64;
    for nu in probes {
        let fd = gateaux_fd(j, mu, nu, eps)?;
        let chi: Vec<f64> = nu.as_slice().iter().zip(mu.as_slice()).map(|(a, b)| a - b).collect();
        let predicted = dot(psi.as_slice(), &chi);
        worst = worst.max((fd - predicted).abs());
    }
    Ok(worst)
}

/// The von Mises linearization `ν ↦ J(μ₀) + ⟨Ψ_{μ₀}, ν − μ₀⟩`.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub base: ProbVector,
    pub base_value: f64,
    pub influence: InfluenceVector,
}

impl Linearization {
    pub fn eval(&self, nu: &ProbVector) -> f64 {
        let chi: Vec<f64> = nu
            .as_slice()
            .iter()
            .zip(self.base.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        self.base_value + dot(self.influence.as_slice(), &chi)
    }
}

pub fn linearize(j: &dyn ProbabilityFunctional, mu0: &ProbVector) -> Result<Linearization> {
    if !j.has_influence() {
        return Err(PfdError::Unsupported(format!("{} has no exact influence function", j.name())));
    }
    Ok(Linearization {
        base: mu0.clone(),
        base_value: j.value(mu0),
        influence: j.influence(mu0)?,
    })
}

/// Exact gradient of `θ ↦ E_{softmax(θ)}[ψ̂]` with `ψ̂` frozen:
/// component `k` is `p_k (ψ̂_k − E_p[ψ̂])`.
pub fn chain_rule_grad(psi_hat: &InfluenceVector, theta: &LogitParam) -> Vec<f64> {
    chain_rule_grad_slice(psi_hat.as_slice(), theta.as_slice())
}

pub(crate) fn chain_rule_grad_slice(psi: &[f64], theta: &[f64]) -> Vec<f64> {
    let p = crate::space::softmax_slice(theta);
    let mean = dot(&p, psi);
    p.iter().zip(psi).map(|(pk, sk)| if *pk > 0.0 { pk * (sk - mean) } else { 0.0 }).collect()
}

/// Score-function Monte Carlo estimate together with per-coordinate
/// standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

/// Score-function (log-derivative) estimate of [`chain_rule_grad`]:
/// the average of `ψ̂(x) ∇_θ log μ_θ(x)` over draws `x ∼ μ_θ`.
pub fn score_function_estimate<R: Rng + ?Sized>(
    psi_hat: &InfluenceVector,
    theta: &LogitParam,
    rng: &mut R,
    samples: usize,
) -> Result<ScoreEstimate> {
    if samples == 0 {
        return Err(PfdError::Domain("score-function estimator needs at least one sample".into()));
    }
    let p = softmax(theta);
    let n = p.len();
    let draws = sample(&p, rng, samples);
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for x in draws {
        let w = psi_hat.0[x];
        for k in 0..n {
            // ∇_θk log p_x = 1{k = x} − p_k
            let g = w * ((k == x) as u8 as f64 - p[k]);
            sum[k] += g;
            sum_sq[k] += g * g;
        }
    }
    let m = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let std_err = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| {
            if samples < 2 {
                f64::INFINITY
            } else {
                let var = ((sq / m) - mu * mu).max(0.0) * m / (m - 1.0);
                (var / m).sqrt()
            }
        })
        .collect();
    Ok(ScoreEstimate { mean, std_err })
}

pub fn score_function_grad<R: Rng + ?Sized>(
    psi_hat: &InfluenceVector,
    theta: &LogitParam,
    rng: &mut R,
    samples: usize,
) -> Result<Vec<f64>> {
    Ok(score_function_estimate(psi_hat, theta, rng, samples)?.mean)
}
