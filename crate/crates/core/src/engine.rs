//! The descent loop: alternate an influence estimate with a descent step on
//! `θ ↦ E_{μ_θ}[Ψ̂]`, recording a trace.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::divergences::{JensenShannon, LatentModel, ReverseKl, VariationalKl};
use crate::error::{PfdError, Result};
use crate::estimators::{
    center, estimate_exact, estimate_lsq_v, estimate_mc_q, Classifier, DualAscent, DualProblem, EstimatorConfig,
    EstimatorKind,
};
use crate::functional::{
    chain_rule_grad_slice, influence_residual, probe_set, score_function_estimate, FunctionalHandle, InfluenceVector,
    ScoreEstimate, DEFAULT_PROBES, GATEAUX_STEP,
};
use crate::mdp::{
    bellman_apply, dac_value_gradient, discounted_occupancy, j_rl, rl_influence, Policy, RlObjective,
    StateReference, TabularMdp,
};
use crate::space::{rng_from_seed, sample_index, softmax, softmax_slice, tv_distance, LogitParam, PfdRng, ProbVector};
use crate::transport::{MetricSpace, Wasserstein};

/// The functional being minimized together with its problem data.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `D_JS(μ ‖ ν)`.
    JensenShannon { target: ProbVector },
    /// `KL(μ ‖ ν)`, the non-saturating GAN objective.
    ReverseKl { target: ProbVector },
    Wasserstein { target: ProbVector, metric: MetricSpace },
    /// `KL(q ‖ p(z | x))`.
    Variational { model: LatentModel },
    /// Negated expected discounted return of a policy.
    Reinforcement { mdp: TabularMdp, reference: StateReference },
}

impl Objective {
    pub fn id(&self) -> FunctionalId {
        match self {
            Objective::JensenShannon { .. } => FunctionalId::JensenShannon,
            Objective::ReverseKl { .. } => FunctionalId::ReverseKl,
            Objective::Wasserstein { .. } => FunctionalId::Wasserstein,
            Objective::Variational { .. } => FunctionalId::Variational,
            Objective::Reinforcement { .. } => FunctionalId::Reinforcement,
        }
    }

    /// Size of the sample space the measure lives on (`S·A` for RL).
    pub fn dim(&self) -> usize {
        match self {
            Objective::JensenShannon { target } | Objective::ReverseKl { target } => target.len(),
            Objective::Wasserstein { target, .. } => target.len(),
            Objective::Variational { model } => model.len(),
            Objective::Reinforcement { mdp, .. } => mdp.states() * mdp.actions(),
        }
    }

    pub fn functional(&self) -> FunctionalHandle {
        match self {
            Objective::JensenShannon { target } => Arc::new(JensenShannon { target: target.clone() }),
            Objective::ReverseKl { target } => Arc::new(ReverseKl { target: target.clone() }),
            Objective::Wasserstein { target, metric } => {
                Arc::new(Wasserstein { target: target.clone(), metric: metric.clone() })
            }
            Objective::Variational { model } => Arc::new(VariationalKl { model: model.clone() }),
            Objective::Reinforcement { mdp, .. } => Arc::new(RlObjective { mdp: mdp.clone() }),
        }
    }

    /// The known minimizer, when it is a single measure: the GAN target or
    /// the exact posterior.
    pub fn minimizer(&self) -> Option<ProbVector> {
        match self {
            Objective::JensenShannon { target } | Objective::ReverseKl { target } => Some(target.clone()),
            Objective::Wasserstein { target, .. } => Some(target.clone()),
            Objective::Variational { model } => Some(model.posterior()),
            Objective::Reinforcement { .. } => None,
        }
    }

    pub fn mdp(&self) -> Option<&TabularMdp> {
        match self {
            Objective::Reinforcement { mdp, .. } => Some(mdp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FunctionalId {
    JensenShannon,
    ReverseKl,
    Wasserstein,
    Variational,
    Reinforcement,
}

impl FunctionalId {
    pub const ALL: [FunctionalId; 5] = [
        FunctionalId::JensenShannon,
        FunctionalId::ReverseKl,
        FunctionalId::Wasserstein,
        FunctionalId::Variational,
        FunctionalId::Reinforcement,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FunctionalId::JensenShannon => "jensen_shannon",
            FunctionalId::ReverseKl => "reverse_kl",
            FunctionalId::Wasserstein => "wasserstein",
            FunctionalId::Variational => "variational_kl",
            FunctionalId::Reinforcement => "reinforcement_learning",
        }
    }
}

impl fmt::Display for FunctionalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FunctionalId {
    type Err = PfdError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PfdError::Config(format!("unknown functional '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradKind {
    ExactChainRule,
    ScoreFunction { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Descent {
    /// `θ ← θ − lr · ∇_θ E_{μ_θ}[Ψ̂]`.
    Gradient { learning_rate: f64, grad_kind: GradKind },
    /// All mass on the minimizer of `Ψ̂` (per state for policies).
    GlobalMin,
    /// Simultaneous optimistic gradient steps on the joint occupancy logits
    /// (ascent) and the tabular value function (descent) of the dual
    /// actor-critic saddle objective.
    SaddleDescentAscent { policy_lr: f64, value_lr: f64 },
}

/// Optional per-record diagnostics. Both are off by default; wall time is
/// nondeterministic and would break trace reproducibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Diagnostics {
    pub influence_residual: bool,
    pub wall_time: bool,
}

#[derive(Debug, Clone)]
pub struct PfdConfig {
    pub objective: Objective,
    pub estimator: EstimatorConfig,
    pub descent: Descent,
    pub outer_steps: usize,
    pub seed: u64,
    /// Starting measure for simplex models; uniform when absent.
    pub initial: Option<ProbVector>,
    /// Measure to report TV distance against.
    pub target: Option<ProbVector>,
    /// Halves the descent learning rate every this many outer steps;
    /// constant when absent.
    pub lr_half_life: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl PfdConfig {
    /// A configuration with default estimator settings whose TV target is
    /// the objective's known minimizer.
    pub fn new(objective: Objective, estimator: EstimatorConfig, descent: Descent, outer_steps: usize) -> Self {
        let target = objective.minimizer();
        Self {
            objective,
            estimator,
            descent,
            outer_steps,
            seed: 0,
            initial: None,
            target,
            lr_half_life: None,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        let n = self.objective.dim();
        let is_rl = matches!(self.objective, Objective::Reinforcement { .. });
        match self.descent {
            Descent::Gradient { learning_rate, grad_kind } => {
                if !(learning_rate > 0.0) || !learning_rate.is_finite() {
                    return Err(PfdError::Config(format!("learning rate {learning_rate} must be positive")));
                }
                if grad_kind == (GradKind::ScoreFunction { samples: 0 }) {
                    return Err(PfdError::Config("score-function descent needs at least one sample".into()));
                }
            }
            Descent::GlobalMin => {}
            Descent::SaddleDescentAscent { policy_lr, value_lr } => {
                if !is_rl {
                    return Err(PfdError::Config("saddle descent-ascent needs a reinforcement-learning objective".into()));
                }
                if !(policy_lr > 0.0 && value_lr > 0.0) || !policy_lr.is_finite() || !value_lr.is_finite() {
                    return Err(PfdError::Config("saddle learning rates must be positive".into()));
                }
            }
        }
        if !matches!(self.descent, Descent::SaddleDescentAscent { .. }) {
            let supported = match (self.estimator.kind, self.objective.id()) {
                (EstimatorKind::Exact, _) => true,
                (EstimatorKind::DualAscent, FunctionalId::JensenShannon | FunctionalId::Wasserstein) => true,
                (
                    EstimatorKind::Classifier,
                    FunctionalId::JensenShannon | FunctionalId::ReverseKl | FunctionalId::Variational,
                ) => true,
                (EstimatorKind::McQ | EstimatorKind::LsqV, FunctionalId::Reinforcement) => true,
                _ => false,
            };
            if !supported {
                return Err(PfdError::Config(format!(
                    "estimator {} does not apply to {}",
                    self.estimator.kind,
                    self.objective.id()
                )));
            }
        }
        if let Some(h) = self.lr_half_life {
            if !(h > 0.0) || !h.is_finite() {
                return Err(PfdError::Config(format!("learning-rate half-life {h} must be positive")));
            }
        }
        if let Some(init) = &self.initial {
            if is_rl {
                return Err(PfdError::Config("an initial measure applies only to simplex models".into()));
            }
            if init.len() != n {
                return Err(PfdError::DimensionMismatch { expected: n, got: init.len() });
            }
            if !init.is_interior() {
                return Err(PfdError::Config("the initial measure must be strictly positive".into()));
            }
        }
        if let Some(t) = &self.target {
            if t.len() != n {
                return Err(PfdError::DimensionMismatch { expected: n, got: t.len() });
            }
        }
        Ok(())
    }
}

/// One row of the trace. Record 0 describes the initial measure; record `k`
/// the measure after step `k`, with `grad_norm` and `influence_residual`
/// describing the estimate and gradient used by that step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub j_value: f64,
    pub grad_norm: Option<f64>,
    pub influence_residual: Option<f64>,
    pub tv_to_target: Option<f64>,
    pub wall_ms: Option<f64>,
}

pub const TRACE_HEADER: [&str; 6] = ["step", "j_value", "grad_norm", "influence_residual", "tv_to_target", "wall_ms"];

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trace_csv<W: Write>(records: &[TraceRecord], out: W) -> Result<()> {
    let io = |e: csv::Error| PfdError::Numerical(format!("cannot write trace: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER).map_err(io)?;
    let opt = |x: Option<f64>| x.map(format_float).unwrap_or_default();
    for r in records {
        w.write_record([
            r.step.to_string(),
            format_float(r.j_value),
            opt(r.grad_norm),
            opt(r.influence_residual),
            opt(r.tv_to_target),
            opt(r.wall_ms),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| PfdError::Numerical(format!("cannot write trace: {e}")))?;
    Ok(())
}

pub fn trace_csv_bytes(records: &[TraceRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace_csv(records, &mut buf).expect("writing to memory cannot fail");
    buf
}

#[derive(Debug, Clone)]
pub struct PfdOutcome {
    /// Final measure: μ for simplex models, the joint state-action measure
    /// for policies.
    pub measure: ProbVector,
    /// Final logits (of μ, of the policy, or of the joint for the saddle).
    pub logits: Vec<f64>,
    pub policy: Option<Policy>,
    /// Tabular value function of the saddle method.
    pub values: Option<Vec<f64>>,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Error)]
#[error("run failed at step {step}: {error}")]
pub struct RunFailure {
    pub step: usize,
    pub error: PfdError,
    /// Records completed before the failure.
    pub trace: Vec<TraceRecord>,
}

/// One gradient step on `θ ↦ E_{softmax(θ)}[ψ̂]` with `ψ̂` frozen.
pub fn descent_gradient_step<R: Rng + ?Sized>(
    theta: &LogitParam,
    psi_hat: &InfluenceVector,
    lr: f64,
    grad_kind: GradKind,
    rng: &mut R,
) -> Result<LogitParam> {
    let g = descent_gradient(theta, psi_hat, grad_kind, rng)?;
    Ok(LogitParam(theta.0.iter().zip(&g).map(|(t, gk)| t - lr * gk).collect()))
}

fn descent_gradient<R: Rng + ?Sized>(
    theta: &LogitParam,
    psi_hat: &InfluenceVector,
    grad_kind: GradKind,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if theta.len() != psi_hat.len() {
        return Err(PfdError::DimensionMismatch { expected: theta.len(), got: psi_hat.len() });
    }
    match grad_kind {
        GradKind::ExactChainRule => Ok(chain_rule_grad_slice(psi_hat.as_slice(), theta.as_slice())),
        GradKind::ScoreFunction { samples } => Ok(score_function_estimate(psi_hat, theta, rng, samples)?.mean),
    }
}

/// Per state, all conditional mass on `argmin_a Ψ̂(s,a)`, lowest index on ties.
pub fn descent_global_min(psi_hat: &InfluenceVector, policy: &Policy) -> Result<Policy> {
    let (ns, na) = (policy.states(), policy.actions());
    if psi_hat.len() != ns * na {
        return Err(PfdError::DimensionMismatch { expected: ns * na, got: psi_hat.len() });
    }
    if !psi_hat.is_finite() {
        return Err(PfdError::Numerical("influence estimate is not finite".into()));
    }
    let choice: Vec<usize> = (0..ns).map(|s| argmin(&psi_hat.as_slice()[s * na..(s + 1) * na])).collect();
    Ok(Policy::deterministic(na, &choice))
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k] < v[best] {
            best = k;
        }
    }
    best
}

/// Exact gradient of `θ ↦ E_{d^π π_θ}[Ψ̂]` over per-state policy logits with
/// `Ψ̂` frozen and per-state centered: `d(s) π(a|s) (Ψ̂(s,a) − E_π Ψ̂(s,·))`.
pub fn policy_chain_rule_grad(psi_hat: &InfluenceVector, policy: &Policy, d: &ProbVector) -> Vec<f64> {
    let na = policy.actions();
    (0..policy.states())
        .flat_map(|s| {
            let g = chain_rule_grad_slice(&psi_hat.as_slice()[s * na..(s + 1) * na], policy.state_logits(s));
            let w = d[s];
            g.into_iter().map(move |x| w * x)
        })
        .collect()
}

/// Score-function estimate of [`policy_chain_rule_grad`]: draws
/// `(s,a) ∼ joint` and averages `Ψ̂(s,a) ∇_θ log π(a|s)`.
pub fn policy_score_estimate<R: Rng + ?Sized>(
    psi_hat: &InfluenceVector,
    policy: &Policy,
    joint: &ProbVector,
    rng: &mut R,
    samples: usize,
) -> Result<ScoreEstimate> {
    if samples == 0 {
        return Err(PfdError::Domain("score-function estimator needs at least one sample".into()));
    }
    let (ns, na) = (policy.states(), policy.actions());
    let probs = policy.probs();
    let mut sum = vec![0.0; ns * na];
    let mut sum_sq = vec![0.0; ns * na];
    for _ in 0..samples {
        let k = sample_index(joint.as_slice(), rng);
        let s = k / na;
        let w = psi_hat.0[k];
        for b in 0..na {
            let g = w * ((s * na + b == k) as u8 as f64 - probs[s * na + b]);
            sum[s * na + b] += g;
            sum_sq[s * na + b] += g * g;
        }
    }
    let m = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|x| x / m).collect();
    let std_err = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| {
            if samples < 2 {
                f64::INFINITY
            } else {
                ((((sq / m) - mu * mu).max(0.0) * m / (m - 1.0)) / m).sqrt()
            }
        })
        .collect();
    Ok(ScoreEstimate { mean, std_err })
}

/// Influence estimate for a policy from Monte Carlo `Q̂`, optionally
/// advantage-centered by a least-squares `V̂` fitted under `d^π`.
pub fn estimate_rl_influence<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    d: &ProbVector,
    with_baseline: bool,
    cfg: &EstimatorConfig,
    rng: &mut R,
) -> Result<InfluenceVector> {
    let q = estimate_mc_q(mdp, policy, rng, cfg)?.q;
    let na = mdp.actions();
    let baseline = if with_baseline {
        estimate_lsq_v(mdp, policy, &q, d)?.into_iter().map(|v| v.unwrap_or(0.0)).collect()
    } else {
        vec![0.0; mdp.states()]
    };
    let scale = -1.0 / (1.0 - mdp.gamma());
    Ok(InfluenceVector(q.iter().enumerate().map(|(k, qk)| scale * (qk - baseline[k / na])).collect()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

enum EstimatorState {
    Stateless,
    Dual(DualAscent),
    Classifier(Classifier),
}

struct Runner<'a> {
    cfg: &'a PfdConfig,
    functional: FunctionalHandle,
    rng: PfdRng,
    diag_rng: PfdRng,
    state: EstimatorState,
    started: Instant,
    trace: Vec<TraceRecord>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a PfdConfig) -> Self {
        let mut diag_rng = rng_from_seed(cfg.seed);
        diag_rng.set_stream(1);
        let state = match (&cfg.descent, cfg.estimator.kind, &cfg.objective) {
            (Descent::SaddleDescentAscent { .. }, _, _) => EstimatorState::Stateless,
            (_, EstimatorKind::DualAscent, Objective::JensenShannon { target }) => {
                EstimatorState::Dual(DualAscent::new(DualProblem::JensenShannon { target: target.clone() }))
            }
            (_, EstimatorKind::DualAscent, Objective::Wasserstein { target, metric }) => EstimatorState::Dual(
                DualAscent::new(DualProblem::Wasserstein { target: target.clone(), metric: metric.clone() }),
            ),
            (_, EstimatorKind::Classifier, obj) => EstimatorState::Classifier(Classifier::new(obj.dim())),
            _ => EstimatorState::Stateless,
        };
        Self {
            cfg,
            functional: cfg.objective.functional(),
            rng: PfdRng::seed_from_u64(cfg.seed),
            diag_rng,
            state,
            started: Instant::now(),
            trace: Vec::with_capacity(cfg.outer_steps + 1),
        }
    }

    /// Descent learning rate for outer step `step` (1-based).
    fn learning_rate(&self, base: f64, step: usize) -> f64 {
        match self.cfg.lr_half_life {
            Some(h) => base * 0.5f64.powf((step - 1) as f64 / h),
            None => base,
        }
    }

    fn fail(&mut self, step: usize, error: PfdError) -> RunFailure {
        RunFailure { step, error, trace: std::mem::take(&mut self.trace) }
    }

    fn record(
        &mut self,
        step: usize,
        j_value: f64,
        measure: &ProbVector,
        grad_norm: Option<f64>,
        residual: Option<f64>,
    ) -> std::result::Result<(), RunFailure> {
        if !j_value.is_finite() {
            return Err(self.fail(step, PfdError::Numerical(format!("objective is not finite ({j_value})"))));
        }
        let tv = self.cfg.target.as_ref().map(|t| tv_distance(measure, t).unwrap_or(f64::NAN));
        let wall = self.cfg.diagnostics.wall_time.then(|| self.started.elapsed().as_secs_f64() * 1e3);
        self.trace.push(TraceRecord { step, j_value, grad_norm, influence_residual: residual, tv_to_target: tv, wall_ms: wall });
        Ok(())
    }

    fn residual(&mut self, psi: &InfluenceVector, mu: &ProbVector) -> Option<f64> {
        if !self.cfg.diagnostics.influence_residual {
            return None;
        }
        let probes = probe_set(mu, &mut self.diag_rng, DEFAULT_PROBES);
        Some(influence_residual(self.functional.as_ref(), psi, mu, &probes, GATEAUX_STEP).unwrap_or(f64::NAN))
    }

    /// Differentiation step for simplex models.
    fn estimate_simplex(&mut self, mu: &ProbVector) -> Result<InfluenceVector> {
        let cfg = &self.cfg.estimator;
        let psi = match (&mut self.state, &self.cfg.objective) {
            (EstimatorState::Dual(dual), _) => dual.estimate(mu, cfg)?.psi,
            (EstimatorState::Classifier(c), Objective::JensenShannon { target }) => {
                let est = c.estimate(mu, target, cfg)?;
                // ½ log(μ/(μ+ν)) = ½ log(1 − D*)
                InfluenceVector(est.d.iter().map(|d| 0.5 * (-d).ln_1p()).collect())
            }
            (EstimatorState::Classifier(c), Objective::ReverseKl { target }) => c.estimate(mu, target, cfg)?.log_ratio,
            (EstimatorState::Classifier(c), Objective::Variational { model }) => {
                // log(q/p(z)) from discriminating q against the prior
                let f = c.estimate(mu, model.prior(), cfg)?.log_ratio;
                InfluenceVector(f.0.iter().zip(model.likelihood()).map(|(fz, l)| fz - l.ln()).collect())
            }
            _ => estimate_exact(self.functional.as_ref(), mu)?,
        };
        Ok(center(&psi, mu))
    }

    fn run_simplex(&mut self) -> std::result::Result<PfdOutcome, RunFailure> {
        let n = self.cfg.objective.dim();
        let mut theta = match &self.cfg.initial {
            Some(mu0) => LogitParam(mu0.as_slice().iter().map(|p| p.ln()).collect()),
            None => LogitParam::zeros(n),
        };
        let mut mu = softmax(&theta);
        let j0 = self.functional.value(&mu);
        self.record(0, j0, &mu, None, None)?;
        for step in 1..=self.cfg.outer_steps {
            let psi = self.estimate_simplex(&mu).map_err(|e| self.fail(step, e))?;
            if !psi.is_finite() {
                return Err(self.fail(step, PfdError::Numerical("influence estimate is not finite".into())));
            }
            let residual = self.residual(&psi, &mu);
            let grad_norm = match self.cfg.descent {
                Descent::Gradient { learning_rate, grad_kind } => {
                    let g = descent_gradient(&theta, &psi, grad_kind, &mut self.rng).map_err(|e| self.fail(step, e))?;
                    let lr = self.learning_rate(learning_rate, step);
                    theta = LogitParam(theta.0.iter().zip(&g).map(|(t, gk)| t - lr * gk).collect());
                    Some(norm2(&g))
                }
                Descent::GlobalMin => {
                    let k = argmin(psi.as_slice());
                    theta = LogitParam((0..n).map(|i| if i == k { 0.0 } else { f64::NEG_INFINITY }).collect());
                    None
                }
                Descent::SaddleDescentAscent { .. } => unreachable!("rejected by validation"),
            };
            if theta.0.iter().any(|t| t.is_nan() || *t == f64::INFINITY) {
                return Err(self.fail(step, PfdError::Numerical("parameters are not finite".into())));
            }
            mu = softmax(&theta);
            let j = self.functional.value(&mu);
            self.record(step, j, &mu, grad_norm, residual)?;
        }
        Ok(PfdOutcome { measure: mu, logits: theta.0, policy: None, values: None, trace: std::mem::take(&mut self.trace) })
    }

    fn run_policy(&mut self, mdp: &TabularMdp, reference: &StateReference) -> std::result::Result<PfdOutcome, RunFailure> {
        let (ns, na) = (mdp.states(), mdp.actions());
        let mut policy = Policy::uniform(ns, na);
        let mut occ = discounted_occupancy(mdp, &policy).map_err(|e| self.fail(0, e))?;
        let j0 = j_rl(mdp, &policy).map_err(|e| self.fail(0, e))?;
        self.record(0, j0, &occ.joint, None, None)?;
        for step in 1..=self.cfg.outer_steps {
            let psi = match self.cfg.estimator.kind {
                EstimatorKind::McQ | EstimatorKind::LsqV => estimate_rl_influence(
                    mdp,
                    &policy,
                    &occ.d,
                    self.cfg.estimator.kind == EstimatorKind::LsqV,
                    &self.cfg.estimator,
                    &mut self.rng,
                ),
                _ => rl_influence(mdp, &policy, reference),
            }
            .map(|p| center(&p, &occ.joint))
            .map_err(|e| self.fail(step, e))?;
            if !psi.is_finite() {
                return Err(self.fail(step, PfdError::Numerical("influence estimate is not finite".into())));
            }
            let residual = self.residual(&psi, &occ.joint);
            let grad_norm = match self.cfg.descent {
                Descent::Gradient { learning_rate, grad_kind } => {
                    let g = match grad_kind {
                        GradKind::ExactChainRule => policy_chain_rule_grad(&psi, &policy, &occ.d),
                        GradKind::ScoreFunction { samples } => {
                            policy_score_estimate(&psi, &policy, &occ.joint, &mut self.rng, samples)
                                .map_err(|e| self.fail(step, e))?
                                .mean
                        }
                    };
                    let lr = self.learning_rate(learning_rate, step);
                    for (t, gk) in policy.logits_mut().iter_mut().zip(&g) {
                        *t -= lr * gk;
                    }
                    Some(norm2(&g))
                }
                Descent::GlobalMin => {
                    policy = descent_global_min(&psi, &policy).map_err(|e| self.fail(step, e))?;
                    None
                }
                Descent::SaddleDescentAscent { .. } => unreachable!("handled by run_saddle"),
            };
            if policy.logits().iter().any(|t| t.is_nan() || *t == f64::INFINITY) {
                return Err(self.fail(step, PfdError::Numerical("policy logits are not finite".into())));
            }
            occ = discounted_occupancy(mdp, &policy).map_err(|e| self.fail(step, e))?;
            let j = j_rl(mdp, &policy).map_err(|e| self.fail(step, e))?;
            self.record(step, j, &occ.joint, grad_norm, residual)?;
        }
        Ok(PfdOutcome {
            measure: occ.joint,
            logits: policy.logits().to_vec(),
            policy: Some(policy),
            values: None,
            trace: std::mem::take(&mut self.trace),
        })
    }

    fn run_saddle(&mut self, mdp: &TabularMdp, policy_lr: f64, value_lr: f64) -> std::result::Result<PfdOutcome, RunFailure> {
        let (ns, na) = (mdp.states(), mdp.actions());
        let mut theta = vec![0.0; ns * na];
        let mut v = vec![0.0; ns];
        let mut joint = ProbVector::uniform(ns * na);
        let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
        let j0 = j_rl(mdp, &Policy::from_joint(ns, na, joint.as_slice())).map_err(|e| self.fail(0, e))?;
        self.record(0, j0, &joint, None, None)?;
        for step in 1..=self.cfg.outer_steps {
            // Ψ̂ = −A V: descending E_joint[Ψ̂] ascends the saddle objective.
            let psi = InfluenceVector(bellman_apply(mdp, &v).into_iter().map(|x| -x).collect());
            let psi = center(&psi, &joint);
            let residual = self.residual(&psi, &joint);
            let g_theta = chain_rule_grad_slice(psi.as_slice(), &theta);
            let g_v = dac_value_gradient(mdp, &joint);
            // optimistic correction 2g_t − g_{t−1}; plain simultaneous steps cycle
            let (p_theta, p_v) = previous.take().unwrap_or_else(|| (g_theta.clone(), g_v.clone()));
            for ((t, g), p) in theta.iter_mut().zip(&g_theta).zip(&p_theta) {
                *t -= policy_lr * (2.0 * g - p);
            }
            for ((x, g), p) in v.iter_mut().zip(&g_v).zip(&p_v) {
                *x -= value_lr * (2.0 * g - p);
            }
            let grad_norm = norm2(&g_theta);
            previous = Some((g_theta, g_v));
            if theta.iter().chain(&v).any(|x| !x.is_finite()) {
                return Err(self.fail(step, PfdError::Numerical("saddle iterates are not finite".into())));
            }
            joint = ProbVector::new(softmax_slice(&theta)).map_err(|e| self.fail(step, e))?;
            let j = j_rl(mdp, &Policy::from_joint(ns, na, joint.as_slice())).map_err(|e| self.fail(step, e))?;
            self.record(step, j, &joint, Some(grad_norm), residual)?;
        }
        Ok(PfdOutcome {
            policy: Some(Policy::from_joint(ns, na, joint.as_slice())),
            measure: joint,
            logits: theta,
            values: Some(v),
            trace: std::mem::take(&mut self.trace),
        })
    }
}

/// Runs the descent loop for `cfg.outer_steps` iterations. Deterministic
/// given the configuration and seed.
pub fn pfd_run(cfg: &PfdConfig) -> std::result::Result<PfdOutcome, RunFailure> {
    cfg.validate().map_err(|error| RunFailure { step: 0, error, trace: Vec::new() })?;
    let mut runner = Runner::new(cfg);
    match (&cfg.objective, cfg.descent) {
        (Objective::Reinforcement { mdp, .. }, Descent::SaddleDescentAscent { policy_lr, value_lr }) => {
            runner.run_saddle(mdp, policy_lr, value_lr)
        }
        (Objective::Reinforcement { mdp, reference }, _) => runner.run_policy(mdp, reference),
        _ => runner.run_simplex(),
    }
}
