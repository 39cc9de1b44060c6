//! Finite sample spaces and the measures that live on them.
//!
//! Every measure here is a plain vector of masses indexed by point. Sums go
//! through [`compensated_sum`] so that identities checked at 1e-12 do not
//! drown in accumulation error.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PfdError, Result};

/// Tolerance on the total mass of a [`ProbVector`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Floor applied when a log of a mass is required downstream.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// The random number generator used throughout the crate.
///
/// ChaCha8 is a counter-based stream cipher generator, so a given seed yields
/// the same stream on every platform.
pub type PfdRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> PfdRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Neumaier-compensated summation.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(PfdError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// A finite set of `n` points, optionally labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSpace {
    n: usize,
    labels: Option<Vec<String>>,
}

impl FiniteSpace {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(PfdError::Domain("a finite space needs at least one point".into()));
        }
        Ok(Self { n, labels: None })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let mut space = Self::new(labels.len())?;
        space.labels = Some(labels);
        Ok(space)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => i.to_string(),
        }
    }
}

/// A probability measure on a finite space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates nonnegativity and unit mass (within [`MASS_TOLERANCE`]).
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(PfdError::InvalidProbability("empty vector".into()));
        }
        if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(PfdError::InvalidProbability(format!("entry {i} is {v}")));
        }
        let total = compensated_sum(p.iter().copied());
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(PfdError::InvalidProbability(format!("entries sum to {total}")));
        }
        Ok(Self(p))
    }

    /// Normalizes nonnegative weights with positive total.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(PfdError::InvalidProbability(format!("weight {i} is {v}")));
        }
        let total = compensated_sum(w.iter().copied());
        if !(total > 0.0) {
            return Err(PfdError::InvalidProbability("weights have zero total".into()));
        }
        Self::new(w.iter().map(|v| v / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, i: usize) -> Self {
        let mut p = vec![0.0; n];
        p[i] = 1.0;
        Self(p)
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

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// True when every point carries strictly positive mass.
    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|&v| v > 0.0)
    }

    /// Index of the first point without mass, if any.
    pub fn first_zero(&self) -> Option<usize> {
        self.0.iter().position(|&v| v <= 0.0)
    }

    /// E_μ[f].
    pub fn expect(&self, f: &[f64]) -> f64 {
        dot(&self.0, f)
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A signed measure; admissible perturbation directions have zero total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedVector(pub Vec<f64>);

impl SignedVector {
    /// The direction χ = ν − μ.
    pub fn direction(mu: &ProbVector, nu: &ProbVector) -> Result<Self> {
        check_dims(mu.len(), nu.len())?;
        Ok(Self(nu.0.iter().zip(&mu.0).map(|(b, a)| b - a).collect()))
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.0.iter().copied())
    }

    pub fn is_admissible(&self) -> bool {
        self.total_mass().abs() <= MASS_TOLERANCE
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Unconstrained logits parameterizing a measure through [`softmax`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogitParam(pub Vec<f64>);

impl LogitParam {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
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

/// Softmax of a logit slice; entries equal to `-inf` receive zero mass.
pub fn softmax_slice(theta: &[f64]) -> Vec<f64> {
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = theta.iter().map(|t| (t - max).exp()).collect();
    let total = compensated_sum(exps.iter().copied());
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax(theta: &LogitParam) -> ProbVector {
    ProbVector(softmax_slice(&theta.0))
}

/// The mixture (1−ε)·μ + ε·ν.
pub fn mix(mu: &ProbVector, nu: &ProbVector, eps: f64) -> Result<ProbVector> {
    check_dims(mu.len(), nu.len())?;
    if !(0.0..=1.0).contains(&eps) {
        return Err(PfdError::Domain(format!("mixing weight {eps} outside [0, 1]")));
    }
    if eps == 0.0 {
        return Ok(mu.clone());
    }
    if eps == 1.0 {
        return Ok(nu.clone());
    }
    Ok(ProbVector(
        mu.0.iter().zip(&nu.0).map(|(a, b)| (1.0 - eps) * a + eps * b).collect(),
    ))
}

/// Total-variation distance, half the ℓ1 distance.
pub fn tv_distance(mu: &ProbVector, nu: &ProbVector) -> Result<f64> {
    check_dims(mu.len(), nu.len())?;
    Ok(0.5 * compensated_sum(mu.0.iter().zip(&nu.0).map(|(a, b)| (a - b).abs())))
}

/// Draws `count` i.i.d. point indices from μ.
pub fn sample<R: Rng + ?Sized>(mu: &ProbVector, rng: &mut R, count: usize) -> Vec<usize> {
    let dist = WeightedIndex::new(mu.as_slice()).expect("probability vector has positive mass");
    (0..count).map(|_| dist.sample(rng)).collect()
}

/// Draws a single index from unnormalized nonnegative weights by inversion.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last_positive
}

/// Uniform draw from the simplex (a flat Dirichlet).
pub fn random_dirichlet<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ProbVector {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    ProbVector::from_weights(&w).expect("exponential draws are positive")
}

/// Random measure bounded away from the boundary: weights uniform on [0.1, 1].
pub fn random_interior<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ProbVector {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    ProbVector::from_weights(&w).expect("weights are positive")
}
