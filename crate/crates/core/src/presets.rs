//! The nine named algorithms as configurations of one descent loop.

use std::fmt;
use std::str::FromStr;

use crate::divergences::LatentModel;
use crate::engine::{pfd_run, Descent, GradKind, Objective, PfdConfig, RunFailure, TraceRecord};
use crate::error::{PfdError, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind};
use crate::mdp::{dac_objective, Policy, StateReference, TabularMdp};
use crate::space::ProbVector;
use crate::transport::MetricSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PresetName {
    MinimaxGan,
    NonsaturatingGan,
    WassersteinGan,
    Bbvi,
    Avb,
    PolicyIteration,
    PolicyGradient,
    ActorCritic,
    DualActorCritic,
}

impl PresetName {
    pub const ALL: [PresetName; 9] = [
        PresetName::MinimaxGan,
        PresetName::NonsaturatingGan,
        PresetName::WassersteinGan,
        PresetName::Bbvi,
        PresetName::Avb,
        PresetName::PolicyIteration,
        PresetName::PolicyGradient,
        PresetName::ActorCritic,
        PresetName::DualActorCritic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::MinimaxGan => "minimax_gan",
            PresetName::NonsaturatingGan => "nonsaturating_gan",
            PresetName::WassersteinGan => "wasserstein_gan",
            PresetName::Bbvi => "bbvi",
            PresetName::Avb => "avb",
            PresetName::PolicyIteration => "policy_iteration",
            PresetName::PolicyGradient => "policy_gradient",
            PresetName::ActorCritic => "actor_critic",
            PresetName::DualActorCritic => "dual_actor_critic",
        }
    }

    pub fn family(&self) -> ProblemKind {
        match self {
            PresetName::MinimaxGan | PresetName::NonsaturatingGan | PresetName::WassersteinGan => ProblemKind::Gan,
            PresetName::Bbvi | PresetName::Avb => ProblemKind::Vi,
            _ => ProblemKind::Rl,
        }
    }

    /// One-line description of the wiring.
    pub fn summary(&self) -> &'static str {
        match self {
            PresetName::MinimaxGan => "Jensen-Shannon, dual-ascent discriminator, gradient descent",
            PresetName::NonsaturatingGan => "reverse KL, classifier log-ratio, gradient descent",
            PresetName::WassersteinGan => "Wasserstein-1, Lipschitz-projected dual ascent, gradient descent",
            PresetName::Bbvi => "variational KL, exact influence, gradient descent",
            PresetName::Avb => "variational KL, classifier against the prior, gradient descent",
            PresetName::PolicyIteration => "RL, exact influence, global minimization",
            PresetName::PolicyGradient => "RL, Monte Carlo Q, score-function gradient",
            PresetName::ActorCritic => "RL, Monte Carlo Q with least-squares V baseline, gradient descent",
            PresetName::DualActorCritic => "RL, saddle descent-ascent on occupancy and value function",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = PfdError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| PfdError::Config(format!("unknown preset '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Gan,
    Vi,
    Rl,
}

impl ProblemKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemKind::Gan => "gan",
            ProblemKind::Vi => "vi",
            ProblemKind::Rl => "rl",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = PfdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gan" => Ok(ProblemKind::Gan),
            "vi" => Ok(ProblemKind::Vi),
            "rl" => Ok(ProblemKind::Rl),
            _ => Err(PfdError::Config(format!("unknown problem kind '{s}'"))),
        }
    }
}

/// Problem data a preset is wired against.
#[derive(Debug, Clone)]
pub enum ProblemContext {
    /// Fit μ to a target ν; the metric is used by the Wasserstein preset and
    /// defaults to `|i − j|`.
    Gan { target: ProbVector, initial: Option<ProbVector>, metric: Option<MetricSpace> },
    Vi { model: LatentModel },
    Rl { mdp: TabularMdp },
}

impl ProblemContext {
    pub fn kind(&self) -> ProblemKind {
        match self {
            ProblemContext::Gan { .. } => ProblemKind::Gan,
            ProblemContext::Vi { .. } => ProblemKind::Vi,
            ProblemContext::Rl { .. } => ProblemKind::Rl,
        }
    }
}

fn estimator(kind: EstimatorKind, inner_steps: usize, learning_rate: f64) -> EstimatorConfig {
    EstimatorConfig { kind, inner_steps, learning_rate, ..EstimatorConfig::default() }
}

fn gradient(learning_rate: f64) -> Descent {
    Descent::Gradient { learning_rate, grad_kind: GradKind::ExactChainRule }
}

/// Builds the configuration for a named algorithm, with step sizes and
/// budgets that reach the known optimum on desk-scale instances.
pub fn build_preset(name: PresetName, ctx: &ProblemContext) -> Result<PfdConfig> {
    if name.family() != ctx.kind() {
        return Err(PfdError::Config(format!(
            "preset {name} needs a {} problem, got {}",
            name.family(),
            ctx.kind()
        )));
    }
    let mut cfg = match (name, ctx) {
        (PresetName::MinimaxGan, ProblemContext::Gan { target, .. }) => PfdConfig::new(
            Objective::JensenShannon { target: target.clone() },
            estimator(EstimatorKind::DualAscent, 20, 4.0),
            gradient(5.0),
            5000,
        ),
        (PresetName::NonsaturatingGan, ProblemContext::Gan { target, .. }) => PfdConfig::new(
            Objective::ReverseKl { target: target.clone() },
            estimator(EstimatorKind::Classifier, 20, 4.0),
            gradient(1.0),
            5000,
        ),
        (PresetName::WassersteinGan, ProblemContext::Gan { target, metric, .. }) => {
            let metric = metric.clone().unwrap_or_else(|| MetricSpace::line(target.len()));
            let mut cfg = PfdConfig::new(
                Objective::Wasserstein { target: target.clone(), metric },
                estimator(EstimatorKind::DualAscent, 20, 2.0),
                gradient(0.5),
                5000,
            );
            // W₁ is piecewise linear, so constant steps oscillate around ν
            cfg.lr_half_life = Some(250.0);
            cfg
        }
        (PresetName::Bbvi, ProblemContext::Vi { model }) => PfdConfig::new(
            Objective::Variational { model: model.clone() },
            estimator(EstimatorKind::Exact, 1, 0.1),
            gradient(1.0),
            5000,
        ),
        (PresetName::Avb, ProblemContext::Vi { model }) => PfdConfig::new(
            Objective::Variational { model: model.clone() },
            estimator(EstimatorKind::Classifier, 20, 4.0),
            gradient(1.0),
            5000,
        ),
        (PresetName::PolicyIteration, ProblemContext::Rl { mdp }) => PfdConfig::new(
            rl(mdp),
            estimator(EstimatorKind::Exact, 1, 0.1),
            Descent::GlobalMin,
            mdp.states() * mdp.actions(),
        ),
        (PresetName::PolicyGradient, ProblemContext::Rl { mdp }) => PfdConfig::new(
            rl(mdp),
            EstimatorConfig { samples: 10, ..estimator(EstimatorKind::McQ, 1, 0.1) },
            Descent::Gradient { learning_rate: 0.1, grad_kind: GradKind::ScoreFunction { samples: 100 } },
            1000,
        ),
        (PresetName::ActorCritic, ProblemContext::Rl { mdp }) => PfdConfig::new(
            rl(mdp),
            EstimatorConfig { samples: 10, ..estimator(EstimatorKind::LsqV, 1, 0.1) },
            gradient(0.1),
            1000,
        ),
        (PresetName::DualActorCritic, ProblemContext::Rl { mdp }) => PfdConfig::new(
            rl(mdp),
            estimator(EstimatorKind::Exact, 1, 0.1),
            Descent::SaddleDescentAscent { policy_lr: 0.1, value_lr: 0.5 },
            50_000,
        ),
        _ => unreachable!("family checked above"),
    };
    if let ProblemContext::Gan { initial: Some(init), .. } = ctx {
        cfg.initial = Some(init.clone());
    }
    Ok(cfg)
}

fn rl(mdp: &TabularMdp) -> Objective {
    Objective::Reinforcement { mdp: mdp.clone(), reference: StateReference::Occupancy }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DacConfig {
    pub outer_steps: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
}

impl Default for DacConfig {
    fn default() -> Self {
        Self { outer_steps: 50_000, policy_lr: 0.1, value_lr: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct DacOutcome {
    /// `joint(s,a) / Σ_a joint(s,a)`.
    pub policy: Policy,
    pub values: Vec<f64>,
    pub joint: ProbVector,
    /// Saddle objective at the final iterate.
    pub objective: f64,
    pub trace: Vec<TraceRecord>,
}

pub fn run_dual_actor_critic(mdp: &TabularMdp, cfg: &DacConfig) -> std::result::Result<DacOutcome, RunFailure> {
    let run = PfdConfig::new(
        rl(mdp),
        estimator(EstimatorKind::Exact, 1, 0.1),
        Descent::SaddleDescentAscent { policy_lr: cfg.policy_lr, value_lr: cfg.value_lr },
        cfg.outer_steps,
    );
    let out = pfd_run(&run)?;
    let values = out.values.expect("saddle runs return a value function");
    let objective = dac_objective(mdp, &out.measure, &values);
    if !objective.is_finite() {
        return Err(RunFailure {
            step: cfg.outer_steps,
            error: PfdError::Numerical("saddle objective is not finite".into()),
            trace: out.trace,
        });
    }
    Ok(DacOutcome {
        policy: out.policy.expect("saddle runs return a policy"),
        values,
        joint: out.measure,
        objective,
        trace: out.trace,
    })
}
