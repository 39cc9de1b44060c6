//! Influence-function estimators for the differentiation step.
//!
//! Every estimator returns an influence vector centered to zero mean under
//! the current measure. The inner optimizers are full-batch gradient
//! methods on tabular parameters that reject a step and halve the learning
//! rate whenever their objective regresses.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{PfdError, Result};
use crate::functional::{InfluenceVector, ProbabilityFunctional};
use crate::mdp::{rollout_return, Policy, TabularMdp};
use crate::space::{compensated_sum, dot, ProbVector};
use crate::transport::{c_transform, lipschitz_projection, MetricSpace};

/// Consecutive rejected steps after which an inner loop reports divergence.
pub const MAX_REGRESSIONS: usize = 50;

const PROJECTION_SWEEPS: usize = 20_000;
const PROJECTION_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Exact,
    DualAscent,
    Classifier,
    /// Monte Carlo `Q̂`; for RL the influence estimate is `−Q̂/(1−γ)`.
    McQ,
    /// Monte Carlo `Q̂` followed by a tabular least-squares `V̂`; the
    /// influence estimate is the scaled negative advantage.
    LsqV,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Exact,
        EstimatorKind::DualAscent,
        EstimatorKind::Classifier,
        EstimatorKind::McQ,
        EstimatorKind::LsqV,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Exact => "exact",
            EstimatorKind::DualAscent => "dual_ascent",
            EstimatorKind::Classifier => "classifier",
            EstimatorKind::McQ => "mc_q",
            EstimatorKind::LsqV => "lsq_v",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = PfdError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PfdError::Config(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub inner_steps: usize,
    pub learning_rate: f64,
    /// Rollouts per state-action pair (mc_q, lsq_v) or draws (score function).
    pub samples: usize,
    /// Target accuracy; also sets the Monte Carlo truncation horizon.
    pub tolerance: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { kind: EstimatorKind::Exact, inner_steps: 100, learning_rate: 0.1, samples: 100, tolerance: 1e-6 }
    }
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 {
            return Err(PfdError::Config("inner_steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(PfdError::Config(format!("estimator learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.tolerance > 0.0) {
            return Err(PfdError::Config(format!("tolerance {} must be positive", self.tolerance)));
        }
        if matches!(self.kind, EstimatorKind::McQ | EstimatorKind::LsqV) && self.samples == 0 {
            return Err(PfdError::Config("Monte Carlo estimators need at least one sample".into()));
        }
        Ok(())
    }
}

/// `ψ − E_μ[ψ]`.
pub fn center(psi: &InfluenceVector, mu: &ProbVector) -> InfluenceVector {
    psi.centered(mu)
}

pub fn estimate_exact(j: &dyn ProbabilityFunctional, mu: &ProbVector) -> Result<InfluenceVector> {
    if !j.has_influence() {
        return Err(PfdError::Unsupported(format!("{} has no exact influence function", j.name())));
    }
    Ok(center(&j.influence(mu)?, mu))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maximization problem `φ ↦ ⟨φ, μ⟩ − J*(φ)` for a convex functional with a
/// computable conjugate.
#[derive(Debug, Clone)]
pub enum DualProblem {
    /// `J = D_JS(· ‖ ν)`. Parameterized by logits `u` with
    /// `φ = ½ log(2σ(u))`, which keeps `φ < ½ log 2` by construction.
    JensenShannon { target: ProbVector },
    /// `J = W₁(·, ν)`; `J*(φ) = ⟨φ, ν⟩` on 1-Lipschitz `φ`, `+∞` otherwise.
    /// Parameters are `φ` itself, kept feasible by projection.
    Wasserstein { target: ProbVector, metric: MetricSpace },
}

impl DualProblem {
    pub fn dim(&self) -> usize {
        match self {
            DualProblem::JensenShannon { target } => target.len(),
            DualProblem::Wasserstein { target, .. } => target.len(),
        }
    }

    pub fn initial_params(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// The dual potential `φ` encoded by the parameters.
    pub fn potential(&self, params: &[f64]) -> Vec<f64> {
        match self {
            DualProblem::JensenShannon { .. } => {
                params.iter().map(|&u| 0.5 * (std::f64::consts::LN_2 - softplus(-u))).collect()
            }
            DualProblem::Wasserstein { .. } => params.to_vec(),
        }
    }

    /// `⟨φ, μ⟩ − J*(φ)` at the parameters.
    pub fn objective(&self, params: &[f64], mu: &ProbVector) -> f64 {
        match self {
            DualProblem::JensenShannon { target } => {
                let terms = params
                    .iter()
                    .zip(mu.as_slice().iter().zip(target.as_slice()))
                    .map(|(&u, (&m, &n))| -(m * softplus(-u) + n * softplus(u)));
                std::f64::consts::LN_2 + 0.5 * compensated_sum(terms)
            }
            DualProblem::Wasserstein { target, .. } => {
                compensated_sum(params.iter().zip(mu.as_slice().iter().zip(target.as_slice())).map(|(p, (m, n))| p * (m - n)))
            }
        }
    }

    fn gradient(&self, params: &[f64], mu: &ProbVector) -> Vec<f64> {
        match self {
            DualProblem::JensenShannon { target } => params
                .iter()
                .zip(mu.as_slice().iter().zip(target.as_slice()))
                .map(|(&u, (&m, &n))| 0.5 * (m * sigmoid(-u) - n * sigmoid(u)))
                .collect(),
            DualProblem::Wasserstein { target, .. } => {
                mu.as_slice().iter().zip(target.as_slice()).map(|(m, n)| m - n).collect()
            }
        }
    }

    fn ascend(&self, params: &[f64], grad: &[f64], lr: f64) -> Vec<f64> {
        let raw: Vec<f64> = params.iter().zip(grad).map(|(p, g)| p + lr * g).collect();
        match self {
            DualProblem::JensenShannon { .. } => raw,
            DualProblem::Wasserstein { metric, .. } => {
                lipschitz_projection(&raw, metric, PROJECTION_SWEEPS, PROJECTION_TOLERANCE).0
            }
        }
    }

    /// Objective noise below which a regression is not counted.
    fn noise_floor(&self) -> f64 {
        match self {
            DualProblem::JensenShannon { .. } => 1e-15,
            // the projection is only accurate to its stopping tolerance
            DualProblem::Wasserstein { .. } => 1e3 * PROJECTION_TOLERANCE,
        }
    }

    fn finish(&self, params: Vec<f64>) -> Vec<f64> {
        match self {
            DualProblem::JensenShannon { .. } => params,
            // removes the projection's residual constraint violations
            DualProblem::Wasserstein { metric, .. } => c_transform(&params, metric).0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualEstimate {
    /// The centered maximizer.
    pub psi: InfluenceVector,
    /// `⟨φ, μ⟩ − J*(φ)` at the returned potential; a lower bound on `J(μ)`.
    pub achieved: f64,
    pub steps: usize,
    pub final_learning_rate: f64,
}

/// Result of one guarded ascent/descent loop.
#[derive(Debug)]
struct InnerRun {
    params: Vec<f64>,
    objective: f64,
    lr: f64,
}

/// Gradient steps with rejection and halving on regression. `sign` is +1
/// for ascent, −1 for descent.
fn guarded_loop(
    params: Vec<f64>,
    steps: usize,
    lr: f64,
    sign: f64,
    noise: f64,
    objective: impl Fn(&[f64]) -> f64,
    gradient: impl Fn(&[f64]) -> Vec<f64>,
    step: impl Fn(&[f64], &[f64], f64) -> Vec<f64>,
) -> Result<InnerRun> {
    let mut params = params;
    let mut value = objective(&params);
    if !value.is_finite() {
        return Err(PfdError::Numerical("inner objective is not finite at the starting point".into()));
    }
    let mut lr = lr;
    let mut regressions = 0;
    for t in 0..steps {
        let g: Vec<f64> = gradient(&params).into_iter().map(|x| sign * x).collect();
        let candidate = step(&params, &g, lr);
        let next = objective(&candidate);
        let slack = noise * (1.0 + value.abs());
        let regressed = !next.is_finite() || sign * (next - value) < -slack;
        if regressed {
            regressions += 1;
            if regressions >= MAX_REGRESSIONS {
                return Err(PfdError::Divergence { steps: t + 1, regressions });
            }
            lr *= 0.5;
            continue;
        }
        regressions = 0;
        params = candidate;
        value = next;
    }
    Ok(InnerRun { params, objective: value, lr })
}

/// Warm-startable dual ascent.
#[derive(Debug, Clone)]
pub struct DualAscent {
    pub problem: DualProblem,
    params: Vec<f64>,
}

impl DualAscent {
    pub fn new(problem: DualProblem) -> Self {
        let params = problem.initial_params();
        Self { problem, params }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn estimate(&mut self, mu: &ProbVector, cfg: &EstimatorConfig) -> Result<DualEstimate> {
        cfg.validate()?;
        if mu.len() != self.problem.dim() {
            return Err(PfdError::DimensionMismatch { expected: self.problem.dim(), got: mu.len() });
        }
        let problem = &self.problem;
        let run = guarded_loop(
            self.params.clone(),
            cfg.inner_steps,
            cfg.learning_rate,
            1.0,
            problem.noise_floor(),
            |p| problem.objective(p, mu),
            |p| problem.gradient(p, mu),
            |p, g, lr| problem.ascend(p, g, lr),
        )?;
        let finished = problem.finish(run.params);
        let achieved = problem.objective(&finished, mu);
        let phi = InfluenceVector(problem.potential(&finished));
        self.params = finished;
        Ok(DualEstimate { psi: center(&phi, mu), achieved, steps: cfg.inner_steps, final_learning_rate: run.lr })
    }
}

/// Cold-started dual ascent.
pub fn estimate_dual_ascent(problem: &DualProblem, mu: &ProbVector, cfg: &EstimatorConfig) -> Result<DualEstimate> {
    DualAscent::new(problem.clone()).estimate(mu, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEstimate {
    /// `D(x)`, the predicted probability that `x` came from ν.
    pub d: Vec<f64>,
    /// Centered `log((1 − D)/D)`, an estimate of `log(μ/ν)`.
    pub log_ratio: InfluenceVector,
    pub loss: f64,
}

/// `−½ E_ν[log D] − ½ E_μ[log(1 − D)]` with `D = σ(w)`.
pub fn classifier_loss(w: &[f64], mu: &ProbVector, nu: &ProbVector) -> f64 {
    let terms = w
        .iter()
        .zip(mu.as_slice().iter().zip(nu.as_slice()))
        .map(|(&x, (&m, &n))| n * softplus(-x) + m * softplus(x));
    0.5 * compensated_sum(terms)
}

fn classifier_gradient(w: &[f64], mu: &ProbVector, nu: &ProbVector) -> Vec<f64> {
    w.iter()
        .zip(mu.as_slice().iter().zip(nu.as_slice()))
        .map(|(&x, (&m, &n))| 0.5 * (m * sigmoid(x) - n * sigmoid(-x)))
        .collect()
}

/// Warm-startable tabular logistic discriminator between μ (label 0) and ν
/// (label 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    logits: Vec<f64>,
}

impl Classifier {
    pub fn new(n: usize) -> Self {
        Self { logits: vec![0.0; n] }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn estimate(&mut self, mu: &ProbVector, nu: &ProbVector, cfg: &EstimatorConfig) -> Result<ClassifierEstimate> {
        cfg.validate()?;
        if mu.len() != self.logits.len() || nu.len() != self.logits.len() {
            return Err(PfdError::DimensionMismatch { expected: self.logits.len(), got: mu.len().max(nu.len()) });
        }
        if let Some(index) = mu.first_zero().or(nu.first_zero()) {
            return Err(PfdError::Boundary { index, what: "the classifier likelihood ratio" });
        }
        let run = guarded_loop(
            self.logits.clone(),
            cfg.inner_steps,
            cfg.learning_rate,
            -1.0,
            1e-15,
            |w| classifier_loss(w, mu, nu),
            |w| classifier_gradient(w, mu, nu),
            |w, g, lr| w.iter().zip(g).map(|(x, gx)| x + lr * gx).collect(),
        )?;
        self.logits = run.params;
        let d = self.logits.iter().map(|&x| sigmoid(x)).collect();
        // log((1 − σ(w)) / σ(w)) = −w
        let ratio = InfluenceVector(self.logits.iter().map(|x| -x).collect());
        Ok(ClassifierEstimate { d, log_ratio: center(&ratio, mu), loss: run.objective })
    }
}

pub fn estimate_classifier(mu: &ProbVector, nu: &ProbVector, cfg: &EstimatorConfig) -> Result<ClassifierEstimate> {
    Classifier::new(mu.len()).estimate(mu, nu, cfg)
}

/// Rollout length `T` with `γ^T R_max / (1−γ) ≤ tolerance`, at least 1.
pub fn mc_horizon(gamma: f64, max_abs_reward: f64, tolerance: f64) -> usize {
    if gamma == 0.0 || max_abs_reward == 0.0 {
        return 1;
    }
    let t = ((tolerance * (1.0 - gamma) / max_abs_reward).ln() / gamma.ln()).ceil();
    if t.is_finite() && t >= 1.0 {
        t as usize
    } else {
        1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McQEstimate {
    /// `Q̂(s,a)` at `s * A + a`.
    pub q: Vec<f64>,
    pub std_err: Vec<f64>,
    pub horizon: usize,
    /// `γ^T R_max / (1−γ)`, the largest possible truncation bias.
    pub truncation_bound: f64,
}

/// Averages `cfg.samples` truncated discounted returns started at each
/// state-action pair.
pub fn estimate_mc_q<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    rng: &mut R,
    cfg: &EstimatorConfig,
) -> Result<McQEstimate> {
    if cfg.samples == 0 {
        return Err(PfdError::Config("Monte Carlo Q needs at least one rollout per pair".into()));
    }
    if policy.states() != mdp.states() || policy.actions() != mdp.actions() {
        return Err(PfdError::DimensionMismatch {
            expected: mdp.states() * mdp.actions(),
            got: policy.states() * policy.actions(),
        });
    }
    let horizon = mc_horizon(mdp.gamma(), mdp.max_abs_reward(), cfg.tolerance);
    let truncation_bound = if mdp.gamma() == 0.0 {
        0.0
    } else {
        mdp.gamma().powi(horizon as i32) * mdp.max_abs_reward() / (1.0 - mdp.gamma())
    };
    let probs = policy.probs();
    let m = cfg.samples as f64;
    let mut q = Vec::with_capacity(mdp.states() * mdp.actions());
    let mut std_err = Vec::with_capacity(q.capacity());
    for s in 0..mdp.states() {
        for a in 0..mdp.actions() {
            let returns: Vec<f64> =
                (0..cfg.samples).map(|_| rollout_return(mdp, &probs, s, a, horizon, rng)).collect();
            // shifted mean: exact when every return is identical
            let first = returns[0];
            let mean = first + compensated_sum(returns.iter().map(|r| r - first)) / m;
            let se = if cfg.samples < 2 {
                f64::INFINITY
            } else {
                let var = compensated_sum(returns.iter().map(|r| (r - mean) * (r - mean))) / (m - 1.0);
                (var / m).sqrt()
            };
            q.push(mean);
            std_err.push(se);
        }
    }
    Ok(McQEstimate { q, std_err, horizon, truncation_bound })
}

/// Tabular weighted least-squares fit of `V(s)` to `E_{π(a|s)}[Q̂(s,a)]`.
/// At tabular capacity the fit interpolates; states with zero weight carry
/// no information and come back as `None`.
pub fn estimate_lsq_v(
    mdp: &TabularMdp,
    policy: &Policy,
    q_hat: &[f64],
    weights: &ProbVector,
) -> Result<Vec<Option<f64>>> {
    let (ns, na) = (mdp.states(), mdp.actions());
    if q_hat.len() != ns * na {
        return Err(PfdError::DimensionMismatch { expected: ns * na, got: q_hat.len() });
    }
    if weights.len() != ns {
        return Err(PfdError::DimensionMismatch { expected: ns, got: weights.len() });
    }
    Ok((0..ns)
        .map(|s| {
            (weights[s] > 0.0).then(|| dot(&policy.action_probs(s), &q_hat[s * na..(s + 1) * na]))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::{js_conjugate, js_influence, js_value, ns_influence, JensenShannon, ReverseKl};
    use crate::functional::{influence_residual, probe_set, GATEAUX_STEP};
    use crate::mdp::{discounted_occupancy, policy_eval};
    use crate::space::{random_interior, rng_from_seed};
    use crate::transport::{lipschitz_constant, w1_distance, w1_solve, Wasserstein};
    use proptest::prelude::*;
    use rand::Rng;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn dual_cfg(steps: usize, lr: f64) -> EstimatorConfig {
        EstimatorConfig { kind: EstimatorKind::DualAscent, inner_steps: steps, learning_rate: lr, ..Default::default() }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.as_str().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("exactly".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EstimatorConfig::default().validate().is_ok());
        assert!(EstimatorConfig { inner_steps: 0, ..Default::default() }.validate().is_err());
        assert!(EstimatorConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(EstimatorConfig { learning_rate: f64::NAN, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn centering() {
        let mu = pv(&[0.2, 0.3, 0.5]);
        let c = center(&InfluenceVector(vec![1.0, 2.0, 4.0]), &mu);
        assert!(mu.expect(c.as_slice()).abs() < 1e-15);
        for (a, b) in center(&c, &mu).as_slice().iter().zip(c.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        let k = center(&InfluenceVector(vec![3.0; 3]), &mu);
        assert!(k.as_slice().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn exact_pass_through() {
        let nu = pv(&[0.2, 0.3, 0.5]);
        let psi = estimate_exact(&ReverseKl { target: nu.clone() }, &nu).unwrap();
        assert!(psi.as_slice().iter().all(|x| x.abs() < 1e-15));
        let mut rng = rng_from_seed(3);
        let mu = random_interior(5, &mut rng);
        let nu = random_interior(5, &mut rng);
        let j = JensenShannon { target: nu };
        let psi = estimate_exact(&j, &mu).unwrap();
        let probes = probe_set(&mu, &mut rng, 100);
        assert!(influence_residual(&j, &psi, &mu, &probes, GATEAUX_STEP).unwrap() <= 1e-5);

        #[derive(Debug)]
        struct Opaque;
        impl ProbabilityFunctional for Opaque {
            fn name(&self) -> &str {
                "opaque"
            }
            fn dim(&self) -> usize {
                2
            }
            fn value(&self, _: &ProbVector) -> f64 {
                0.0
            }
        }
        assert!(matches!(estimate_exact(&Opaque, &ProbVector::uniform(2)), Err(PfdError::Unsupported(_))));
    }

    #[test]
    fn js_parameterization_matches_conjugate() {
        let mut rng = rng_from_seed(4);
        let mu = random_interior(6, &mut rng);
        let nu = random_interior(6, &mut rng);
        let problem = DualProblem::JensenShannon { target: nu.clone() };
        for _ in 0..20 {
            let u: Vec<f64> = (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let phi = InfluenceVector(problem.potential(&u));
            assert!(phi.as_slice().iter().all(|f| *f < 0.5 * std::f64::consts::LN_2));
            let direct = dot(phi.as_slice(), mu.as_slice()) - js_conjugate(&phi, &nu);
            assert!((direct - problem.objective(&u, &mu)).abs() < 1e-12);
            let g = problem.gradient(&u, &mu);
            for k in 0..6 {
                let mut up = u.clone();
                let mut um = u.clone();
                up[k] += 1e-6;
                um[k] -= 1e-6;
                let fd = (problem.objective(&up, &mu) - problem.objective(&um, &mu)) / 2e-6;
                assert!((fd - g[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn js_dual_at_target_is_flat() {
        let nu = pv(&[0.1, 0.2, 0.3, 0.4]);
        let est = estimate_dual_ascent(
            &DualProblem::JensenShannon { target: nu.clone() },
            &nu,
            &dual_cfg(100, 0.1),
        )
        .unwrap();
        assert!(est.psi.as_slice().iter().all(|x| x.abs() < 1e-15));
        assert!(est.achieved.abs() < 1e-15);
    }

    #[test]
    fn js_dual_reaches_the_divergence() {
        let mut rng = rng_from_seed(5);
        for _ in 0..20 {
            let mu = random_interior(8, &mut rng);
            let nu = random_interior(8, &mut rng);
            let est = estimate_dual_ascent(
                &DualProblem::JensenShannon { target: nu.clone() },
                &mu,
                &dual_cfg(20_000, 4.0),
            )
            .unwrap();
            let j = js_value(&mu, &nu).unwrap();
            assert!(est.achieved <= j + 1e-9);
            assert!(j - est.achieved <= 1e-4, "gap {}", j - est.achieved);
            let exact = center(&js_influence(&mu, &nu).unwrap(), &mu);
            for (a, b) in est.psi.as_slice().iter().zip(exact.as_slice()) {
                assert!((a - b).abs() <= 1e-3);
            }
        }
    }

    #[test]
    fn w_dual_on_two_points() {
        let metric = MetricSpace::line(2);
        let mu = pv(&[1.0, 0.0]);
        let nu = pv(&[0.0, 1.0]);
        let est = estimate_dual_ascent(
            &DualProblem::Wasserstein { target: nu.clone(), metric: metric.clone() },
            &mu,
            &dual_cfg(100, 0.5),
        )
        .unwrap();
        let phi = est.psi.as_slice();
        assert!(((phi[0] - phi[1]) - 1.0).abs() < 1e-12);
        assert!((est.achieved - 1.0).abs() < 1e-12);
        let sol = w1_solve(&mu, &nu, &metric).unwrap();
        let pot = sol.potential.as_slice();
        assert!(((pot[0] - pot[1]) - (phi[0] - phi[1])).abs() < 1e-12);
    }

    #[test]
    fn w_dual_reaches_the_distance() {
        let mut rng = rng_from_seed(6);
        for _ in 0..20 {
            let metric = MetricSpace::random_planar(6, &mut rng);
            let mu = random_interior(6, &mut rng);
            let nu = random_interior(6, &mut rng);
            let est = estimate_dual_ascent(
                &DualProblem::Wasserstein { target: nu.clone(), metric: metric.clone() },
                &mu,
                &dual_cfg(500, 1.0),
            )
            .unwrap();
            let w = w1_distance(&mu, &nu, &metric).unwrap();
            assert!(est.achieved <= w + 1e-9);
            assert!(w - est.achieved <= 1e-4, "gap {}", w - est.achieved);
            assert!(lipschitz_constant(est.psi.as_slice(), &metric) <= 1.0 + 1e-9);
            let exact = center(&Wasserstein { target: nu, metric }.influence(&mu).unwrap(), &mu);
            for (a, b) in est.psi.as_slice().iter().zip(exact.as_slice()) {
                assert!((a - b).abs() <= 1e-3, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn dual_ascent_warm_start_keeps_progress() {
        let mut rng = rng_from_seed(7);
        let mu = random_interior(5, &mut rng);
        let nu = random_interior(5, &mut rng);
        let mut est = DualAscent::new(DualProblem::JensenShannon { target: nu.clone() });
        let mut last = f64::NEG_INFINITY;
        for _ in 0..5 {
            let e = est.estimate(&mu, &dual_cfg(50, 1.0)).unwrap();
            assert!(e.achieved >= last - 1e-15);
            last = e.achieved;
        }
    }

    #[test]
    fn divergence_is_reported() {
        // a NaN-producing objective regresses on every step
        let err = guarded_loop(
            vec![0.0],
            1000,
            1.0,
            1.0,
            1e-15,
            |p| if p[0] == 0.0 { 0.0 } else { f64::NAN },
            |_| vec![1.0],
            |p, g, lr| vec![p[0] + lr * g[0]],
        )
        .unwrap_err();
        assert_eq!(err, PfdError::Divergence { steps: MAX_REGRESSIONS, regressions: MAX_REGRESSIONS });
    }

    #[test]
    fn classifier_on_equal_measures() {
        let mu = pv(&[0.25, 0.25, 0.5]);
        let est = estimate_classifier(&mu, &mu, &EstimatorConfig::new(EstimatorKind::Classifier)).unwrap();
        assert!(est.d.iter().all(|d| *d == 0.5));
        assert!(est.log_ratio.as_slice().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn classifier_recovers_optimal_discriminator() {
        let mut rng = rng_from_seed(8);
        let cfg = EstimatorConfig {
            kind: EstimatorKind::Classifier,
            inner_steps: 20_000,
            learning_rate: 4.0,
            ..Default::default()
        };
        for _ in 0..20 {
            let mu = random_interior(8, &mut rng);
            let nu = random_interior(8, &mut rng);
            let est = estimate_classifier(&mu, &nu, &cfg).unwrap();
            for k in 0..8 {
                assert!((est.d[k] - nu[k] / (mu[k] + nu[k])).abs() <= 1e-4);
            }
            let exact = center(&ns_influence(&mu, &nu).unwrap(), &mu);
            for (a, b) in est.log_ratio.as_slice().iter().zip(exact.as_slice()) {
                assert!((a - b).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn classifier_rejects_boundary_measures() {
        let mu = pv(&[1.0, 0.0]);
        let nu = pv(&[0.5, 0.5]);
        assert!(matches!(
            estimate_classifier(&mu, &nu, &EstimatorConfig::default()),
            Err(PfdError::Boundary { index: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn classifier_loss_swaps_with_labels(
            w in prop::collection::vec(-5.0f64..5.0, 4),
            a in prop::collection::vec(0.1f64..1.0, 4),
            b in prop::collection::vec(0.1f64..1.0, 4),
        ) {
            let mu = ProbVector::from_weights(&a).unwrap();
            let nu = ProbVector::from_weights(&b).unwrap();
            let flipped: Vec<f64> = w.iter().map(|x| -x).collect();
            let l1 = classifier_loss(&w, &mu, &nu);
            let l2 = classifier_loss(&flipped, &nu, &mu);
            prop_assert!((l1 - l2).abs() <= 1e-12);
            for (x, y) in w.iter().zip(&flipped) {
                prop_assert!((sigmoid(*x) - (1.0 - sigmoid(*y))).abs() <= 1e-10);
            }
        }

        #[test]
        fn centering_is_idempotent(
            v in prop::collection::vec(-10.0f64..10.0, 5),
            a in prop::collection::vec(0.05f64..1.0, 5),
        ) {
            let mu = ProbVector::from_weights(&a).unwrap();
            let once = center(&InfluenceVector(v), &mu);
            prop_assert!(mu.expect(once.as_slice()).abs() <= 1e-12);
            let twice = center(&once, &mu);
            for (x, y) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn trained_classifiers_swap_entrywise() {
        let mut rng = rng_from_seed(9);
        let mu = random_interior(5, &mut rng);
        let nu = random_interior(5, &mut rng);
        let cfg = EstimatorConfig { inner_steps: 300, learning_rate: 1.0, ..EstimatorConfig::new(EstimatorKind::Classifier) };
        let a = estimate_classifier(&mu, &nu, &cfg).unwrap();
        let b = estimate_classifier(&nu, &mu, &cfg).unwrap();
        for (x, y) in a.d.iter().zip(&b.d) {
            assert!((x - (1.0 - y)).abs() <= 1e-10);
        }
    }

    #[test]
    fn horizon_rule() {
        assert_eq!(mc_horizon(0.0, 1.0, 1e-6), 1);
        let t = mc_horizon(0.9, 1.0, 1e-6);
        assert!(0.9f64.powi(t as i32) / 0.1 <= 1e-6);
        assert!(0.9f64.powi(t as i32 - 1) / 0.1 > 1e-6);
        assert_eq!(mc_horizon(0.9, 0.0, 1e-6), 1);
    }

    #[test]
    fn mc_q_single_state_geometric_series() {
        let mdp = TabularMdp::new(1, 1, ProbVector::uniform(1), vec![1.0], vec![1.0], 0.9).unwrap();
        let cfg = EstimatorConfig { samples: 3, tolerance: 1e-8, ..EstimatorConfig::new(EstimatorKind::McQ) };
        let est = estimate_mc_q(&mdp, &Policy::uniform(1, 1), &mut rng_from_seed(1), &cfg).unwrap();
        assert!((est.q[0] - 10.0).abs() <= est.truncation_bound);
        assert!(est.truncation_bound <= 1e-8);
    }

    #[test]
    fn mc_q_myopic_is_exact() {
        let mut rng = rng_from_seed(10);
        let mdp = TabularMdp::random(3, 2, 0.0, &mut rng);
        let cfg = EstimatorConfig { samples: 5, ..EstimatorConfig::new(EstimatorKind::McQ) };
        let est = estimate_mc_q(&mdp, &Policy::uniform(3, 2), &mut rng, &cfg).unwrap();
        assert_eq!(est.horizon, 1);
        assert_eq!(est.q, mdp.rewards().to_vec());
    }

    #[test]
    fn mc_q_is_unbiased() {
        let mut rng = rng_from_seed(11);
        let mdp = TabularMdp::random(3, 2, 0.8, &mut rng);
        let policy = Policy::from_logits(3, 2, vec![0.3, -0.2, 1.0, 0.0, -0.5, 0.5]).unwrap();
        let cfg = EstimatorConfig { samples: 20_000, tolerance: 1e-10, ..EstimatorConfig::new(EstimatorKind::McQ) };
        let est = estimate_mc_q(&mdp, &policy, &mut rng, &cfg).unwrap();
        let exact = policy_eval(&mdp, &policy).unwrap().q;
        for k in 0..6 {
            assert!((est.q[k] - exact[k]).abs() <= 3.0 * est.std_err[k] + est.truncation_bound);
        }
    }

    #[test]
    fn lsq_v_interpolates() {
        let mut rng = rng_from_seed(12);
        let mdp = TabularMdp::random(4, 3, 0.9, &mut rng);
        let policy = Policy::from_logits(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let vf = policy_eval(&mdp, &policy).unwrap();
        let d = discounted_occupancy(&mdp, &policy).unwrap().d;
        let a = estimate_lsq_v(&mdp, &policy, &vf.q, &d).unwrap();
        let b = estimate_lsq_v(&mdp, &policy, &vf.q, &ProbVector::uniform(4)).unwrap();
        assert_eq!(a, b);
        for (v, exact) in a.iter().zip(&vf.v) {
            assert!((v.unwrap() - exact).abs() <= 1e-10);
        }
        let partial = estimate_lsq_v(&mdp, &policy, &vf.q, &pv(&[0.5, 0.0, 0.5, 0.0])).unwrap();
        assert!(partial[1].is_none() && partial[3].is_none() && partial[0].is_some());
    }

    #[test]
    fn lsq_v_constant_rewards() {
        let mut rng = rng_from_seed(13);
        let base = TabularMdp::random(3, 2, 0.75, &mut rng);
        let mdp = TabularMdp::new(
            3,
            2,
            base.initial().clone(),
            (0..6).flat_map(|k| base.transition(k / 2, k % 2).to_vec()).collect(),
            vec![2.0; 6],
            0.75,
        )
        .unwrap();
        let policy = Policy::uniform(3, 2);
        let q = policy_eval(&mdp, &policy).unwrap().q;
        for v in estimate_lsq_v(&mdp, &policy, &q, &ProbVector::uniform(3)).unwrap() {
            assert!((v.unwrap() - 8.0).abs() < 1e-12);
        }
    }
}
