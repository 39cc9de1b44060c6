//! Jensen–Shannon, reverse Kullback–Leibler and variational-inference
//! objectives, with their influence functions.
//!
//! All logarithms are natural.

use rand::Rng;

use crate::error::{PfdError, Result};
use crate::functional::{InfluenceVector, ProbabilityFunctional};
use crate::space::{compensated_sum, random_dirichlet, ProbVector};

fn same_len(a: &ProbVector, b: &ProbVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(PfdError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    Ok(())
}

/// `p log(p / q)` with `0 log 0 = 0` and `+inf` when `q = 0 < p`.
fn xlogx_over(p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else if q <= 0.0 {
        f64::INFINITY
    } else {
        p * (p / q).ln()
    }
}

pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    same_len(p, q)?;
    let terms: Vec<f64> = p.as_slice().iter().zip(q.as_slice()).map(|(&a, &b)| xlogx_over(a, b)).collect();
    if terms.iter().any(|t| t.is_infinite()) {
        return Ok(f64::INFINITY);
    }
    Ok(compensated_sum(terms).max(0.0))
}

/// Jensen–Shannon divergence `½KL(μ‖m) + ½KL(ν‖m)` with `m = (μ+ν)/2`.
pub fn js_value(mu: &ProbVector, nu: &ProbVector) -> Result<f64> {
    same_len(mu, nu)?;
    let terms = mu.as_slice().iter().zip(nu.as_slice()).map(|(&p, &q)| {
        let m = 0.5 * (p + q);
        0.5 * xlogx_over(p, m) + 0.5 * xlogx_over(q, m)
    });
    Ok(compensated_sum(terms).max(0.0))
}

/// `½ log(μ / (μ + ν))` pointwise.
pub fn js_influence(mu: &ProbVector, nu: &ProbVector) -> Result<InfluenceVector> {
    same_len(mu, nu)?;
    if let Some(index) = mu.first_zero() {
        return Err(PfdError::Boundary { index, what: "the Jensen-Shannon influence" });
    }
    Ok(InfluenceVector(
        mu.as_slice().iter().zip(nu.as_slice()).map(|(&p, &q)| 0.5 * (p / (p + q)).ln()).collect(),
    ))
}

/// Upper bound on a feasible Jensen–Shannon dual potential.
pub fn js_dual_ceiling() -> f64 {
    0.5 * std::f64::consts::LN_2
}

/// Convex conjugate of `J_JS(·) = D_JS(· ‖ ν)` extended to nonnegative
/// measures by the same integral:
///
/// `J*(φ) = −½ E_ν[log(2 − e^{2φ})]`, finite iff `φ < ½ log 2` on the
/// support of ν and `φ ≤ ½ log 2` off it.
pub fn js_conjugate(phi: &InfluenceVector, nu: &ProbVector) -> f64 {
    let ceiling = js_dual_ceiling();
    let mut terms = Vec::with_capacity(nu.len());
    for (&f, &q) in phi.as_slice().iter().zip(nu.as_slice()) {
        if q > 0.0 {
            let slack = 2.0 - (2.0 * f).exp();
            if !(slack > 0.0) {
                return f64::INFINITY;
            }
            terms.push(-0.5 * q * slack.ln());
        } else if f > ceiling {
            return f64::INFINITY;
        }
    }
    compensated_sum(terms)
}

/// Gradient of [`js_conjugate`] in φ at a feasible point.
pub fn js_conjugate_grad(phi: &InfluenceVector, nu: &ProbVector) -> Vec<f64> {
    phi.as_slice()
        .iter()
        .zip(nu.as_slice())
        .map(|(&f, &q)| {
            let e = (2.0 * f).exp();
            q * e / (2.0 - e)
        })
        .collect()
}

/// Reverse KL `KL(μ‖ν)`.
pub fn ns_value(mu: &ProbVector, nu: &ProbVector) -> Result<f64> {
    kl_divergence(mu, nu)
}

/// `log(μ / ν)` pointwise.
pub fn ns_influence(mu: &ProbVector, nu: &ProbVector) -> Result<InfluenceVector> {
    same_len(mu, nu)?;
    if let Some(index) = mu.first_zero() {
        return Err(PfdError::Boundary { index, what: "the reverse-KL influence" });
    }
    if let Some(index) = nu.first_zero() {
        return Err(PfdError::Boundary { index, what: "the reverse-KL influence" });
    }
    Ok(InfluenceVector(
        mu.as_slice().iter().zip(nu.as_slice()).map(|(&p, &q)| (p / q).ln()).collect(),
    ))
}

/// Bayesian model over a finite latent space for one fixed observation:
/// a prior `p(z)` and the likelihood `p(x_obs | z)` per latent value.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    prior: ProbVector,
    likelihood: Vec<f64>,
}

impl LatentModel {
    pub fn new(prior: ProbVector, likelihood: Vec<f64>) -> Result<Self> {
        if likelihood.len() != prior.len() {
            return Err(PfdError::DimensionMismatch { expected: prior.len(), got: likelihood.len() });
        }
        if let Some((i, v)) = likelihood.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(PfdError::Domain(format!("likelihood entry {i} is {v}")));
        }
        let model = Self { prior, likelihood };
        if !(model.evidence() > 0.0) {
            return Err(PfdError::Domain("model evidence is zero".into()));
        }
        Ok(model)
    }

    /// Prior drawn from a flat Dirichlet, likelihoods uniform on [0.05, 1].
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let prior = random_dirichlet(n, rng);
        let likelihood = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        Self::new(prior, likelihood).expect("positive likelihoods")
    }

    pub fn len(&self) -> usize {
        self.prior.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn prior(&self) -> &ProbVector {
        &self.prior
    }

    pub fn likelihood(&self) -> &[f64] {
        &self.likelihood
    }

    /// Unnormalized posterior `p(x|z) p(z)`.
    pub fn joint(&self) -> Vec<f64> {
        self.likelihood.iter().zip(self.prior.as_slice()).map(|(l, p)| l * p).collect()
    }

    /// `p(x) = Σ_z p(x|z) p(z)`.
    pub fn evidence(&self) -> f64 {
        compensated_sum(self.joint())
    }

    pub fn log_evidence(&self) -> f64 {
        self.evidence().ln()
    }

    pub fn posterior(&self) -> ProbVector {
        ProbVector::from_weights(&self.joint()).expect("evidence is positive")
    }

    /// `E_q[log(p(x|z) p(z) / q(z))]`; `-inf` if q charges a zero-joint point.
    pub fn elbo(&self, q: &ProbVector) -> Result<f64> {
        same_len(q, &self.prior)?;
        let mut terms = Vec::with_capacity(q.len());
        for (&qz, joint) in q.as_slice().iter().zip(self.joint()) {
            if qz <= 0.0 {
                continue;
            }
            if joint <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            terms.push(qz * (joint.ln() - qz.ln()));
        }
        Ok(compensated_sum(terms))
    }
}

/// `KL(q ‖ p(z|x))`, computed as `log p(x) − ELBO(q)`.
pub fn vi_value(q: &ProbVector, model: &LatentModel) -> Result<f64> {
    let elbo = model.elbo(q)?;
    if elbo == f64::NEG_INFINITY {
        return Ok(f64::INFINITY);
    }
    Ok((model.log_evidence() - elbo).max(0.0))
}

/// `log q(z) − log(p(x|z) p(z))` pointwise.
pub fn vi_influence(q: &ProbVector, model: &LatentModel) -> Result<InfluenceVector> {
    same_len(q, &model.prior)?;
    if let Some(index) = q.first_zero() {
        return Err(PfdError::Boundary { index, what: "the variational influence" });
    }
    let joint = model.joint();
    if let Some(index) = joint.iter().position(|&v| v <= 0.0) {
        return Err(PfdError::Boundary { index, what: "the variational influence" });
    }
    Ok(InfluenceVector(
        q.as_slice().iter().zip(&joint).map(|(&qz, &pj)| qz.ln() - pj.ln()).collect(),
    ))
}

/// `μ ↦ D_JS(μ ‖ ν)`.
#[derive(Debug, Clone)]
pub struct JensenShannon {
    pub target: ProbVector,
}

impl ProbabilityFunctional for JensenShannon {
    fn name(&self) -> &str {
        "jensen_shannon"
    }
    fn dim(&self) -> usize {
        self.target.len()
    }
    fn value(&self, mu: &ProbVector) -> f64 {
        js_value(mu, &self.target).unwrap_or(f64::NAN)
    }
    fn has_influence(&self) -> bool {
        true
    }
    fn influence(&self, mu: &ProbVector) -> Result<InfluenceVector> {
        js_influence(mu, &self.target)
    }
    fn is_convex(&self) -> bool {
        true
    }
}

/// `μ ↦ KL(μ ‖ ν)`.
#[derive(Debug, Clone)]
pub struct ReverseKl {
    pub target: ProbVector,
}

impl ProbabilityFunctional for ReverseKl {
    fn name(&self) -> &str {
        "reverse_kl"
    }
    fn dim(&self) -> usize {
        self.target.len()
    }
    fn value(&self, mu: &ProbVector) -> f64 {
        ns_value(mu, &self.target).unwrap_or(f64::NAN)
    }
    fn has_influence(&self) -> bool {
        true
    }
    fn influence(&self, mu: &ProbVector) -> Result<InfluenceVector> {
        ns_influence(mu, &self.target)
    }
    fn is_convex(&self) -> bool {
        true
    }
}

/// `q ↦ KL(q ‖ p(z|x))`.
#[derive(Debug, Clone)]
pub struct VariationalKl {
    pub model: LatentModel,
}

impl ProbabilityFunctional for VariationalKl {
    fn name(&self) -> &str {
        "variational_kl"
    }
    fn dim(&self) -> usize {
        self.model.len()
    }
    fn value(&self, q: &ProbVector) -> f64 {
        vi_value(q, &self.model).unwrap_or(f64::NAN)
    }
    fn has_influence(&self) -> bool {
        true
    }
    fn influence(&self, q: &ProbVector) -> Result<InfluenceVector> {
        vi_influence(q, &self.model)
    }
    fn is_convex(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{gateaux_fd, influence_residual, linearize, probe_set, GATEAUX_STEP};
    use crate::space::{dot, random_interior, rng_from_seed};
    use std::f64::consts::LN_2;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn js_examples() {
        let mu = pv(&[0.5, 0.5]);
        let nu = pv(&[0.25, 0.75]);
        assert_eq!(js_value(&mu, &mu).unwrap(), 0.0);
        assert!((js_value(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap() - LN_2).abs() < 1e-15);
        // term-by-term oracle
        let m = [0.375, 0.625];
        let oracle = 0.5 * (0.5 * (0.5f64 / m[0]).ln() + 0.5 * (0.5f64 / m[1]).ln())
            + 0.5 * (0.25 * (0.25f64 / m[0]).ln() + 0.75 * (0.75f64 / m[1]).ln());
        assert!((js_value(&mu, &nu).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn js_influence_properties() {
        let mu = pv(&[0.2, 0.3, 0.5]);
        let psi = js_influence(&mu, &mu).unwrap();
        assert!(psi.as_slice().iter().all(|v| (v + 0.5 * LN_2).abs() < 1e-15));

        let nu = pv(&[0.6, 0.3, 0.1]);
        let psi = js_influence(&mu, &nu).unwrap();
        for i in 0..3 {
            let d_star = nu[i] / (mu[i] + nu[i]);
            assert!((psi.0[i] - 0.5 * (1.0 - d_star).ln()).abs() < 1e-15);
        }
        assert!(matches!(
            js_influence(&pv(&[0.0, 1.0]), &pv(&[0.5, 0.5])),
            Err(PfdError::Boundary { index: 0, .. })
        ));
    }

    #[test]
    fn js_gateaux_matches_influence() {
        let mu = pv(&[0.5, 0.5]);
        let nu = pv(&[0.25, 0.75]);
        let j = JensenShannon { target: nu.clone() };
        let fd = gateaux_fd(&j, &mu, &nu, GATEAUX_STEP).unwrap();
        let psi = js_influence(&mu, &nu).unwrap();
        let chi = [nu[0] - mu[0], nu[1] - mu[1]];
        assert!((fd - dot(psi.as_slice(), &chi)).abs() < 1e-6);
    }

    #[test]
    fn js_conjugate_zero_and_infeasible() {
        let nu = pv(&[0.1, 0.4, 0.5]);
        assert_eq!(js_conjugate(&InfluenceVector(vec![0.0; 3]), &nu), 0.0);
        assert_eq!(js_conjugate(&InfluenceVector(vec![0.0, 0.4, 0.0]), &nu), f64::INFINITY);
        // off the support of ν the bound is not strict
        let nu0 = pv(&[0.0, 1.0]);
        assert!(js_conjugate(&InfluenceVector(vec![js_dual_ceiling(), 0.0]), &nu0).is_finite());
        assert_eq!(js_conjugate(&InfluenceVector(vec![0.4, 0.0]), &nu0), f64::INFINITY);
    }

    #[test]
    fn js_fenchel_young_and_stationarity() {
        let mut rng = rng_from_seed(12);
        for _ in 0..20 {
            let mu = random_interior(5, &mut rng);
            let nu = random_interior(5, &mut rng);
            let j = js_value(&mu, &nu).unwrap();
            for _ in 0..100 {
                let phi: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..0.34)).collect();
                let phi = InfluenceVector(phi);
                let lower = mu.expect(phi.as_slice()) - js_conjugate(&phi, &nu);
                assert!(lower <= j + 1e-12);
            }
            let star = InfluenceVector(
                js_influence(&mu, &nu).unwrap().0.iter().map(|v| v + 0.5 * LN_2).collect(),
            );
            let tight = mu.expect(star.as_slice()) - js_conjugate(&star, &nu);
            assert!((tight - j).abs() < 1e-8);
        }
    }

    /// Per-coordinate integrand of the extended JS functional.
    fn js_integrand(p: f64, q: f64) -> f64 {
        let m = 0.5 * (p + q);
        0.5 * xlogx_over(p, m) + 0.5 * xlogx_over(q, m)
    }

    #[test]
    fn js_conjugate_matches_grid_maximization() {
        // J*(φ) = sup_{p ≥ 0} Σ_i [φ_i p_i − f(p_i, q_i)], maximized on a 2-D grid
        // of nonnegative measures and refined by a finer local grid.
        let nu = pv(&[0.3, 0.7]);
        let mut rng = rng_from_seed(8);
        for _ in 0..5 {
            let phi = [rng.gen_range(-1.0..0.25), rng.gen_range(-1.0..0.25)];
            let objective = |p0: f64, p1: f64| {
                phi[0] * p0 + phi[1] * p1 - js_integrand(p0, nu[0]) - js_integrand(p1, nu[1])
            };
            let (mut best, mut b0, mut b1) = (f64::NEG_INFINITY, 0.0, 0.0);
            let steps = 600;
            let top = 6.0;
            for a in 0..=steps {
                for b in 0..=steps {
                    let (p0, p1) = (top * a as f64 / steps as f64, top * b as f64 / steps as f64);
                    let v = objective(p0, p1);
                    if v > best {
                        best = v;
                        b0 = p0;
                        b1 = p1;
                    }
                }
            }
            let h = top / steps as f64;
            for a in 0..=400 {
                for b in 0..=400 {
                    let p0 = (b0 - h + 2.0 * h * a as f64 / 400.0).max(0.0);
                    let p1 = (b1 - h + 2.0 * h * b as f64 / 400.0).max(0.0);
                    best = best.max(objective(p0, p1));
                }
            }
            let closed = js_conjugate(&InfluenceVector(phi.to_vec()), &nu);
            assert!((best - closed).abs() < 1e-6, "grid {best} vs closed form {closed}");
        }
    }

    #[test]
    fn js_conjugate_gradient_matches_fd() {
        let nu = pv(&[0.2, 0.5, 0.3]);
        let phi = InfluenceVector(vec![-0.4, 0.1, -1.2]);
        let g = js_conjugate_grad(&phi, &nu);
        for k in 0..3 {
            let mut p = phi.clone();
            let mut m = phi.clone();
            p.0[k] += 1e-6;
            m.0[k] -= 1e-6;
            let fd = (js_conjugate(&p, &nu) - js_conjugate(&m, &nu)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn ns_examples() {
        let mu = pv(&[0.5, 0.5]);
        let nu = pv(&[0.25, 0.75]);
        assert_eq!(ns_value(&mu, &mu).unwrap(), 0.0);
        let oracle = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((ns_value(&mu, &nu).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.14384).abs() < 1e-5);
        assert_eq!(ns_value(&mu, &pv(&[1.0, 0.0])).unwrap(), f64::INFINITY);
        assert_eq!(ns_value(&pv(&[1.0, 0.0]), &mu).unwrap(), LN_2);
    }

    #[test]
    fn ns_influence_properties() {
        let mu = pv(&[0.3, 0.3, 0.4]);
        assert!(ns_influence(&mu, &mu).unwrap().0.iter().all(|v| v.abs() < 1e-15));
        let nu = pv(&[0.1, 0.6, 0.3]);
        let psi = ns_influence(&mu, &nu).unwrap();
        for i in 0..3 {
            let d = nu[i] / (mu[i] + nu[i]);
            assert!((psi.0[i] - ((1.0 - d) / d).ln()).abs() < 1e-14);
        }
        assert!(ns_influence(&mu, &pv(&[0.0, 0.5, 0.5])).is_err());
        assert!(ns_influence(&pv(&[0.0, 0.5, 0.5]), &nu).is_err());
    }

    #[test]
    fn vi_identities() {
        let mut rng = rng_from_seed(21);
        for _ in 0..50 {
            let model = LatentModel::random(6, &mut rng);
            let q = random_dirichlet(6, &mut rng);
            let post = model.posterior();
            // direct KL(q‖posterior) as the independent summation
            let direct: f64 = q
                .as_slice()
                .iter()
                .zip(post.as_slice())
                .map(|(a, b)| a * (a / b).ln())
                .sum();
            let v = vi_value(&q, &model).unwrap();
            assert!((v - direct).abs() < 1e-12);
            assert!((v + model.elbo(&q).unwrap() - model.log_evidence()).abs() < 1e-12);
            let psi = vi_influence(&q, &model).unwrap();
            assert!((q.expect(psi.as_slice()) + model.elbo(&q).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn vi_at_posterior() {
        let model = LatentModel::new(pv(&[0.2, 0.3, 0.5]), vec![0.9, 0.1, 0.4]).unwrap();
        let post = model.posterior();
        assert!(vi_value(&post, &model).unwrap().abs() < 1e-15);
        let psi = vi_influence(&post, &model).unwrap();
        assert!(psi.0.iter().all(|v| (v + model.log_evidence()).abs() < 1e-14));
    }

    #[test]
    fn vi_zero_likelihood_is_infinite() {
        let model = LatentModel::new(pv(&[0.5, 0.5]), vec![0.0, 1.0]).unwrap();
        assert_eq!(vi_value(&pv(&[1.0, 0.0]), &model).unwrap(), f64::INFINITY);
        assert!(vi_influence(&pv(&[0.5, 0.5]), &model).is_err());
        assert!(LatentModel::new(pv(&[1.0, 0.0]), vec![0.0, 1.0]).is_err());
        assert!(LatentModel::new(pv(&[0.5, 0.5]), vec![1.0]).is_err());
    }

    #[test]
    fn influences_pass_residual() {
        let mut rng = rng_from_seed(99);
        for _ in 0..30 {
            let n = rng.gen_range(2..=10);
            let mu = random_interior(n, &mut rng);
            let nu = random_interior(n, &mut rng);
            let model = LatentModel::random(n, &mut rng);
            let probes = probe_set(&mu, &mut rng, 100);
            let handles: Vec<Box<dyn ProbabilityFunctional>> = vec![
                Box::new(JensenShannon { target: nu.clone() }),
                Box::new(ReverseKl { target: nu.clone() }),
                Box::new(VariationalKl { model }),
            ];
            for j in &handles {
                let psi = j.influence(&mu).unwrap();
                let r = influence_residual(j.as_ref(), &psi, &mu, &probes, GATEAUX_STEP).unwrap();
                assert!(r <= 1e-5, "{} residual {r}", j.name());
            }
        }
    }

    #[test]
    fn divergences_vanish_only_on_the_diagonal() {
        let mut rng = rng_from_seed(4);
        for _ in 0..50 {
            let mu = random_interior(6, &mut rng);
            let nu = random_interior(6, &mut rng);
            assert!(js_value(&mu, &nu).unwrap() > 1e-10);
            assert!(ns_value(&mu, &nu).unwrap() > 1e-10);
            assert!(js_value(&mu, &mu).unwrap().abs() <= 1e-10);
            let model = LatentModel::random(6, &mut rng);
            assert!(vi_value(&mu, &model).unwrap() > 1e-10);
        }
    }

    #[test]
    fn reverse_kl_linearization_underestimates() {
        let mut rng = rng_from_seed(17);
        let nu = random_interior(5, &mut rng);
        let j = ReverseKl { target: nu };
        let mu0 = random_interior(5, &mut rng);
        let lin = linearize(&j, &mu0).unwrap();
        assert!((lin.eval(&mu0) - j.value(&mu0)).abs() < 1e-15);
        for _ in 0..100 {
            let nu = random_dirichlet(5, &mut rng);
            assert!(j.value(&nu) - lin.eval(&nu) >= -1e-10);
        }
    }
}
