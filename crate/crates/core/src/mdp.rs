//! Tabular Markov decision processes.
//!
//! Rewards enter only through their conditional mean `R(s,a)`. Infinite
//! horizons are handled by exact linear solves; truncation appears only in
//! the Monte Carlo rollouts used by the estimators.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{PfdError, Result};
use crate::functional::{InfluenceVector, ProbabilityFunctional};
use crate::space::{compensated_sum, random_dirichlet, sample_index, softmax_slice, ProbVector};

const TRANSITION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    states: usize,
    actions: usize,
    p0: ProbVector,
    /// `P(s' | s, a)` at `(s * A + a) * S + s'`.
    transitions: Vec<f64>,
    /// `R(s, a)` at `s * A + a`.
    rewards: Vec<f64>,
    gamma: f64,
}

impl TabularMdp {
    pub fn new(
        states: usize,
        actions: usize,
        p0: ProbVector,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if states == 0 || actions == 0 {
            return Err(PfdError::Domain("an MDP needs at least one state and one action".into()));
        }
        if p0.len() != states {
            return Err(PfdError::DimensionMismatch { expected: states, got: p0.len() });
        }
        if transitions.len() != states * actions * states {
            return Err(PfdError::DimensionMismatch { expected: states * actions * states, got: transitions.len() });
        }
        if rewards.len() != states * actions {
            return Err(PfdError::DimensionMismatch { expected: states * actions, got: rewards.len() });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(PfdError::Domain(format!("discount {gamma} outside [0, 1)")));
        }
        if let Some(k) = rewards.iter().position(|r| !r.is_finite()) {
            return Err(PfdError::Domain(format!("reward at (s={}, a={}) is not finite", k / actions, k % actions)));
        }
        for (k, row) in transitions.chunks(states).enumerate() {
            let total = compensated_sum(row.iter().copied());
            if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > TRANSITION_TOLERANCE {
                return Err(PfdError::Domain(format!(
                    "P(.|s={}, a={}) is not a probability vector",
                    k / actions,
                    k % actions
                )));
            }
        }
        Ok(Self { states, actions, p0, transitions, rewards, gamma })
    }

    /// Random instance: flat-Dirichlet initial and transition distributions,
    /// rewards uniform on [0, 1].
    pub fn random<R: Rng + ?Sized>(states: usize, actions: usize, gamma: f64, rng: &mut R) -> Self {
        let p0 = random_dirichlet(states, rng);
        let mut transitions = Vec::with_capacity(states * actions * states);
        for _ in 0..states * actions {
            transitions.extend(random_dirichlet(states, rng).into_vec());
        }
        let rewards = (0..states * actions).map(|_| rng.gen::<f64>()).collect();
        Self::new(states, actions, p0, transitions, rewards, gamma).expect("random MDP is valid")
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &ProbVector {
        &self.p0
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let k = (s * self.actions + a) * self.states;
        &self.transitions[k..k + self.states]
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Parses the plain-text instance format:
    ///
    /// ```text
    /// S A gamma
    /// p0(0) ... p0(S-1)
    /// s a R(s,a) P(0|s,a) ... P(S-1|s,a)      (S·A rows)
    /// ```
    ///
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let bad = |line: usize, msg: String| PfdError::Config(format!("line {line}: {msg}"));
        let nums = |line: usize, l: &str| -> Result<Vec<f64>> {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(line, format!("'{t}' is not a number"))))
                .collect()
        };

        let (hl, header) = lines.next().ok_or_else(|| bad(1, "missing header 'S A gamma'".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 {
            return Err(bad(hl, "header must be 'S A gamma'".into()));
        }
        let states: usize = h[0].parse().map_err(|_| bad(hl, format!("bad state count '{}'", h[0])))?;
        let actions: usize = h[1].parse().map_err(|_| bad(hl, format!("bad action count '{}'", h[1])))?;
        let gamma: f64 = h[2].parse().map_err(|_| bad(hl, format!("bad discount '{}'", h[2])))?;

        let (pl, p0_line) = lines.next().ok_or_else(|| bad(hl + 1, "missing initial distribution row".into()))?;
        let p0 = nums(pl, p0_line)?;
        if p0.len() != states {
            return Err(bad(pl, format!("initial distribution has {} entries, expected {states}", p0.len())));
        }
        let p0 = ProbVector::new(p0).map_err(|e| bad(pl, e.to_string()))?;

        let mut transitions = vec![f64::NAN; states * actions * states];
        let mut rewards = vec![f64::NAN; states * actions];
        let mut seen = vec![false; states * actions];
        for _ in 0..states * actions {
            let (ln, row) = lines.next().ok_or_else(|| bad(pl, "missing transition rows".into()))?;
            let v = nums(ln, row)?;
            if v.len() != 3 + states {
                return Err(bad(ln, format!("expected {} fields, found {}", 3 + states, v.len())));
            }
            let (s, a) = (v[0] as usize, v[1] as usize);
            if v[0] != s as f64 || v[1] != a as f64 || s >= states || a >= actions {
                return Err(bad(ln, format!("bad state/action pair ({}, {})", v[0], v[1])));
            }
            if seen[s * actions + a] {
                return Err(bad(ln, format!("duplicate row for ({s}, {a})")));
            }
            seen[s * actions + a] = true;
            rewards[s * actions + a] = v[2];
            transitions[(s * actions + a) * states..(s * actions + a + 1) * states].copy_from_slice(&v[3..]);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(bad(ln, "unexpected trailing content".into()));
        }
        Self::new(states, actions, p0, transitions, rewards, gamma).map_err(|e| PfdError::Config(e.to_string()))
    }

    /// Writes the instance format read by [`TabularMdp::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {:?}", self.states, self.actions, self.gamma);
        let p0: Vec<String> = self.p0.as_slice().iter().map(|p| format!("{p:?}")).collect();
        let _ = writeln!(out, "{}", p0.join(" "));
        for s in 0..self.states {
            for a in 0..self.actions {
                let _ = write!(out, "{s} {a} {:?}", self.reward(s, a));
                for p in self.transition(s, a) {
                    let _ = write!(out, " {p:?}");
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Stochastic policy given by per-state softmax logits. `-inf` logits give
/// deterministic or restricted policies.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    states: usize,
    actions: usize,
    logits: Vec<f64>,
}

impl Policy {
    pub fn from_logits(states: usize, actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != states * actions {
            return Err(PfdError::DimensionMismatch { expected: states * actions, got: logits.len() });
        }
        for s in 0..states {
            let row = &logits[s * actions..(s + 1) * actions];
            if row.iter().any(|l| l.is_nan() || *l == f64::INFINITY) || row.iter().all(|l| *l == f64::NEG_INFINITY) {
                return Err(PfdError::Domain(format!("policy logits for state {s} do not define a distribution")));
            }
        }
        Ok(Self { states, actions, logits })
    }

    pub fn uniform(states: usize, actions: usize) -> Self {
        Self { states, actions, logits: vec![0.0; states * actions] }
    }

    /// Deterministic policy choosing `choice[s]` in state `s`.
    pub fn deterministic(actions: usize, choice: &[usize]) -> Self {
        let states = choice.len();
        let mut logits = vec![f64::NEG_INFINITY; states * actions];
        for (s, &a) in choice.iter().enumerate() {
            logits[s * actions + a] = 0.0;
        }
        Self { states, actions, logits }
    }

    /// Policy with the given conditional probabilities (rows must sum to 1).
    pub fn from_probabilities(states: usize, actions: usize, probs: &[f64]) -> Result<Self> {
        if probs.len() != states * actions {
            return Err(PfdError::DimensionMismatch { expected: states * actions, got: probs.len() });
        }
        for s in 0..states {
            ProbVector::new(probs[s * actions..(s + 1) * actions].to_vec())?;
        }
        Self::from_logits(states, actions, probs.iter().map(|p| p.ln()).collect())
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn state_logits(&self, s: usize) -> &[f64] {
        &self.logits[s * self.actions..(s + 1) * self.actions]
    }

    /// `π(· | s)`.
    pub fn action_probs(&self, s: usize) -> Vec<f64> {
        softmax_slice(self.state_logits(s))
    }

    /// Full `S × A` table of `π(a | s)`.
    pub fn probs(&self) -> Vec<f64> {
        (0..self.states).flat_map(|s| self.action_probs(s)).collect()
    }

    /// The action with the largest probability in each state, lowest index on ties.
    pub fn modal_actions(&self) -> Vec<usize> {
        (0..self.states)
            .map(|s| {
                let p = self.action_probs(s);
                let mut best = 0;
                for a in 1..self.actions {
                    if p[a] > p[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Conditional policy `joint(s,a) / Σ_a joint(s,a)`; states without mass
    /// get the uniform policy.
    pub fn from_joint(states: usize, actions: usize, joint: &[f64]) -> Self {
        let mut logits = Vec::with_capacity(states * actions);
        for s in 0..states {
            let row = &joint[s * actions..(s + 1) * actions];
            let total: f64 = compensated_sum(row.iter().copied());
            if total > 0.0 {
                logits.extend(row.iter().map(|p| (p / total).ln()));
            } else {
                logits.extend(std::iter::repeat(0.0).take(actions));
            }
        }
        Self { states, actions, logits }
    }
}

fn check_policy(mdp: &TabularMdp, policy: &Policy) -> Result<()> {
    if policy.states != mdp.states || policy.actions != mdp.actions {
        return Err(PfdError::DimensionMismatch {
            expected: mdp.states * mdp.actions,
            got: policy.states * policy.actions,
        });
    }
    Ok(())
}

/// `P_π(s' | s)` and `R_π(s)`.
fn policy_kernel(mdp: &TabularMdp, pi: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let (ns, na) = (mdp.states, mdp.actions);
    let mut p = DMatrix::zeros(ns, ns);
    let mut r = DVector::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let w = pi[s * na + a];
            if w == 0.0 {
                continue;
            }
            r[s] += w * mdp.reward(s, a);
            for (t, pt) in mdp.transition(s, a).iter().enumerate() {
                p[(s, t)] += w * pt;
            }
        }
    }
    (p, r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctions {
    /// `V^π(s)`.
    pub v: Vec<f64>,
    /// `Q^π(s,a)` at `s * A + a`.
    pub q: Vec<f64>,
}

impl ValueFunctions {
    pub fn advantage(&self, actions: usize) -> Vec<f64> {
        self.q.iter().enumerate().map(|(k, q)| q - self.v[k / actions]).collect()
    }
}

/// `Q(s,a) = R(s,a) + γ E_{P(·|s,a)}[V]`.
pub fn q_from_v(mdp: &TabularMdp, v: &[f64]) -> Vec<f64> {
    let mut q = Vec::with_capacity(mdp.states * mdp.actions);
    for s in 0..mdp.states {
        for a in 0..mdp.actions {
            let next = compensated_sum(mdp.transition(s, a).iter().zip(v).map(|(p, x)| p * x));
            q.push(mdp.reward(s, a) + mdp.gamma * next);
        }
    }
    q
}

/// Exact policy evaluation by solving `(I − γ P_π) V = R_π`.
pub fn policy_eval(mdp: &TabularMdp, policy: &Policy) -> Result<ValueFunctions> {
    check_policy(mdp, policy)?;
    let pi = policy.probs();
    let (p, r) = policy_kernel(mdp, &pi);
    let n = mdp.states;
    let a = DMatrix::identity(n, n) - p * mdp.gamma;
    let v = a
        .lu()
        .solve(&r)
        .ok_or_else(|| PfdError::Numerical("policy evaluation system is singular".into()))?;
    let v: Vec<f64> = v.iter().copied().collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(PfdError::Numerical("policy evaluation produced non-finite values".into()));
    }
    let q = q_from_v(mdp, &v);
    Ok(ValueFunctions { v, q })
}

/// `‖V − (R_π + γ P_π V)‖∞`.
pub fn bellman_residual(mdp: &TabularMdp, policy: &Policy, v: &[f64]) -> f64 {
    let pi = policy.probs();
    let q = q_from_v(mdp, v);
    (0..mdp.states)
        .map(|s| {
            let backup = compensated_sum((0..mdp.actions).map(|a| pi[s * mdp.actions + a] * q[s * mdp.actions + a]));
            (v[s] - backup).abs()
        })
        .fold(0.0, f64::max)
}

/// Discounted state and state-action occupancy measures of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    /// `d^π(s) = (1−γ) Σ_t γ^t p_t^π(s)`.
    pub d: ProbVector,
    /// `d^π(s) π(a|s)` at `s * A + a`.
    pub joint: ProbVector,
}

/// Solves the flow equation `d = (1−γ) p0 + γ P_πᵀ d`.
pub fn discounted_occupancy(mdp: &TabularMdp, policy: &Policy) -> Result<Occupancy> {
    check_policy(mdp, policy)?;
    let pi = policy.probs();
    let (p, _) = policy_kernel(mdp, &pi);
    let n = mdp.states;
    let a = DMatrix::identity(n, n) - p.transpose() * mdp.gamma;
    let b = DVector::from_iterator(n, mdp.p0.as_slice().iter().map(|x| (1.0 - mdp.gamma) * x));
    let d = a
        .lu()
        .solve(&b)
        .ok_or_else(|| PfdError::Numerical("occupancy system is singular".into()))?;
    // clear rounding-level negatives before renormalizing
    let d: Vec<f64> = d.iter().map(|x| x.max(0.0)).collect();
    let d = ProbVector::from_weights(&d)?;
    let joint: Vec<f64> = (0..n * mdp.actions).map(|k| d[k / mdp.actions] * pi[k]).collect();
    let joint = ProbVector::from_weights(&joint)?;
    Ok(Occupancy { d, joint })
}

/// Largest violation of the Bellman flow equation
/// `d(s') = (1−γ) p0(s') + γ Σ_{s,a} joint(s,a) P(s'|s,a)`.
pub fn flow_residual(mdp: &TabularMdp, state_marginal: &[f64], joint: &[f64]) -> f64 {
    flow_imbalance(mdp, state_marginal, joint).iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `(1−γ) p0(s') + γ Σ joint(s,a) P(s'|s,a) − d(s')` per state.
fn flow_imbalance(mdp: &TabularMdp, state_marginal: &[f64], joint: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.states, mdp.actions);
    (0..ns)
        .map(|t| {
            let inflow = compensated_sum(
                (0..ns * na).map(|k| joint[k] * mdp.transition(k / na, k % na)[t]),
            );
            (1.0 - mdp.gamma) * mdp.p0[t] + mdp.gamma * inflow - state_marginal[t]
        })
        .collect()
}

/// `J_RL(π) = −(1/(1−γ)) E_{d^π(s) π(a|s)}[R(s,a)]`, the negated expected
/// discounted return.
pub fn j_rl(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    let occ = discounted_occupancy(mdp, policy)?;
    Ok(-occ.joint.expect(&mdp.rewards) / (1.0 - mdp.gamma))
}

/// Reference state distribution `π(s)` used to turn the conditional policy
/// into a single joint measure.
#[derive(Debug, Clone, PartialEq)]
pub enum StateReference {
    /// The discounted occupancy `d^π`; the influence becomes the scaled
    /// negative advantage.
    Occupancy,
    Uniform,
    Custom(ProbVector),
}

/// Influence function of `J_RL` on joint measures `π(s) π(a|s)`:
/// `Ψ(s,a) = −(Σ_t γ^t p_t^π(s) / π(s)) (Q^π(s,a) − V^π(s))`.
pub fn rl_influence(mdp: &TabularMdp, policy: &Policy, reference: &StateReference) -> Result<InfluenceVector> {
    let values = policy_eval(mdp, policy)?;
    let adv = values.advantage(mdp.actions);
    let na = mdp.actions;
    let scale = -1.0 / (1.0 - mdp.gamma);
    let factor: Vec<f64> = match reference {
        StateReference::Occupancy => vec![1.0; mdp.states],
        other => {
            let rho = match other {
                StateReference::Uniform => ProbVector::uniform(mdp.states),
                StateReference::Custom(r) => {
                    if r.len() != mdp.states {
                        return Err(PfdError::DimensionMismatch { expected: mdp.states, got: r.len() });
                    }
                    r.clone()
                }
                StateReference::Occupancy => unreachable!(),
            };
            let d = discounted_occupancy(mdp, policy)?.d;
            let mut f = Vec::with_capacity(mdp.states);
            for s in 0..mdp.states {
                if rho[s] <= 0.0 {
                    return Err(PfdError::Domain(format!("reference state distribution has zero mass at state {s}")));
                }
                f.push(d[s] / rho[s]);
            }
            f
        }
    };
    Ok(InfluenceVector(adv.iter().enumerate().map(|(k, a)| scale * factor[k / na] * a).collect()))
}

/// Deterministic greedy policy: `argmax_a Q(s,a)`, lowest index on ties.
pub fn greedy_policy(q: &[f64], states: usize, actions: usize) -> Policy {
    let choice: Vec<usize> = (0..states)
        .map(|s| {
            let row = &q[s * actions..(s + 1) * actions];
            let mut best = 0;
            for a in 1..actions {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Policy::deterministic(actions, &choice)
}

/// `A V(s,a) = R(s,a) + γ E_{P(·|s,a)}[V] − V(s)`.
pub fn bellman_apply(mdp: &TabularMdp, v: &[f64]) -> Vec<f64> {
    q_from_v(mdp, v)
        .into_iter()
        .enumerate()
        .map(|(k, q)| q - v[k / mdp.actions])
        .collect()
}

/// Saddle objective `(1−γ) E_{p0}[V] + E_{joint}[A V]`.
pub fn dac_objective(mdp: &TabularMdp, joint: &ProbVector, v: &[f64]) -> f64 {
    let av = bellman_apply(mdp, v);
    (1.0 - mdp.gamma) * mdp.p0.expect(v) + joint.expect(&av)
}

/// Gradient of [`dac_objective`] in `V`: the flow imbalance
/// `(1−γ) p0 + γ Pᵀ joint − marginal(joint)`.
pub fn dac_value_gradient(mdp: &TabularMdp, joint: &ProbVector) -> Vec<f64> {
    let marginal = state_marginal(joint.as_slice(), mdp.states, mdp.actions);
    flow_imbalance(mdp, &marginal, joint.as_slice())
}

/// `Σ_a joint(s,a)`.
pub fn state_marginal(joint: &[f64], states: usize, actions: usize) -> Vec<f64> {
    (0..states)
        .map(|s| compensated_sum(joint[s * actions..(s + 1) * actions].iter().copied()))
        .collect()
}

/// Value iteration to sup-norm tolerance; returns `V*`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64, max_iters: usize) -> Vec<f64> {
    let mut v = vec![0.0; mdp.states];
    for _ in 0..max_iters {
        let q = q_from_v(mdp, &v);
        let next: Vec<f64> = (0..mdp.states)
            .map(|s| q[s * mdp.actions..(s + 1) * mdp.actions].iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let delta = next.iter().zip(&v).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if delta <= tol {
            break;
        }
    }
    v
}

/// Policy iteration from `start`; returns the sequence of policies visited,
/// ending at the first policy that greedy improvement leaves unchanged.
pub fn policy_iteration(mdp: &TabularMdp, start: &Policy, max_iters: usize) -> Result<Vec<Policy>> {
    let mut seq = vec![start.clone()];
    for _ in 0..max_iters {
        let cur = seq.last().expect("sequence is nonempty");
        let values = policy_eval(mdp, cur)?;
        let next = greedy_policy(&values.q, mdp.states, mdp.actions);
        if next.probs() == cur.probs() {
            break;
        }
        seq.push(next);
    }
    Ok(seq)
}

/// One truncated discounted return from `(s, a)`, rewards replaced by their
/// conditional means.
pub fn rollout_return<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy_probs: &[f64],
    s: usize,
    a: usize,
    horizon: usize,
    rng: &mut R,
) -> f64 {
    let na = mdp.actions;
    let (mut s, mut a) = (s, a);
    let mut total = 0.0;
    let mut discount = 1.0;
    for t in 0..horizon {
        total += discount * mdp.reward(s, a);
        if t + 1 == horizon {
            break;
        }
        discount *= mdp.gamma;
        s = sample_index(mdp.transition(s, a), rng);
        a = sample_index(&policy_probs[s * na..(s + 1) * na], rng);
    }
    total
}

/// `J_RL` as a functional of the joint measure `π(s,a)` on the `S·A` points,
/// depending on it only through the conditional `π(a|s)`. The influence uses
/// the joint's own state marginal as reference distribution.
#[derive(Debug, Clone)]
pub struct RlObjective {
    pub mdp: TabularMdp,
}

impl RlObjective {
    pub fn conditional(&self, joint: &ProbVector) -> Policy {
        Policy::from_joint(self.mdp.states, self.mdp.actions, joint.as_slice())
    }
}

impl ProbabilityFunctional for RlObjective {
    fn name(&self) -> &str {
        "reinforcement_learning"
    }
    fn dim(&self) -> usize {
        self.mdp.states * self.mdp.actions
    }
    fn value(&self, joint: &ProbVector) -> f64 {
        j_rl(&self.mdp, &self.conditional(joint)).unwrap_or(f64::NAN)
    }
    fn has_influence(&self) -> bool {
        true
    }
    fn influence(&self, joint: &ProbVector) -> Result<InfluenceVector> {
        let marginal = state_marginal(joint.as_slice(), self.mdp.states, self.mdp.actions);
        let reference = ProbVector::from_weights(&marginal)?;
        rl_influence(&self.mdp, &self.conditional(joint), &StateReference::Custom(reference))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{chain_rule_grad, influence_residual, probe_set, GATEAUX_STEP};
    use crate::space::{random_interior, rng_from_seed, LogitParam};

    /// One state, two actions, rewards (1, 0), γ = 0.9.
    fn single_state() -> TabularMdp {
        TabularMdp::new(1, 2, ProbVector::uniform(1), vec![1.0, 1.0], vec![1.0, 0.0], 0.9).unwrap()
    }

    fn random_policy<R: Rng>(s: usize, a: usize, rng: &mut R) -> Policy {
        Policy::from_logits(s, a, (0..s * a).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn single_state_evaluation() {
        let mdp = single_state();
        let vf = policy_eval(&mdp, &Policy::uniform(1, 2)).unwrap();
        assert!((vf.v[0] - 5.0).abs() < 1e-12);
        assert!((vf.q[0] - 5.5).abs() < 1e-12 && (vf.q[1] - 4.5).abs() < 1e-12);
        assert!((j_rl(&mdp, &Policy::uniform(1, 2)).unwrap() + 5.0).abs() < 1e-12);
        assert!((j_rl(&mdp, &Policy::deterministic(2, &[0])).unwrap() + 10.0).abs() < 1e-12);
        let psi = rl_influence(&mdp, &Policy::uniform(1, 2), &StateReference::Occupancy).unwrap();
        assert!((psi.0[0] + 5.0).abs() < 1e-12 && (psi.0[1] - 5.0).abs() < 1e-12);
        assert_eq!(greedy_policy(&vf.q, 1, 2).modal_actions(), vec![0]);
        let occ = discounted_occupancy(&mdp, &Policy::uniform(1, 2)).unwrap();
        assert_eq!(occ.d.as_slice(), &[1.0]);
    }

    #[test]
    fn evaluation_matches_fixed_point_iteration() {
        let mut rng = rng_from_seed(8);
        for _ in 0..10 {
            let mdp = TabularMdp::random(5, 3, 0.9, &mut rng);
            let policy = random_policy(5, 3, &mut rng);
            let vf = policy_eval(&mdp, &policy).unwrap();
            assert!(bellman_residual(&mdp, &policy, &vf.v) <= 1e-10);
            let pi = policy.probs();
            let mut v = vec![0.0; 5];
            for _ in 0..10_000 {
                let q = q_from_v(&mdp, &v);
                v = (0..5).map(|s| (0..3).map(|a| pi[s * 3 + a] * q[s * 3 + a]).sum()).collect();
            }
            for (a, b) in v.iter().zip(&vf.v) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn occupancy_matches_truncated_series() {
        let mut rng = rng_from_seed(9);
        for _ in 0..10 {
            let mdp = TabularMdp::random(4, 2, 0.8, &mut rng);
            let policy = random_policy(4, 2, &mut rng);
            let occ = discounted_occupancy(&mdp, &policy).unwrap();
            assert!((occ.d.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(flow_residual(&mdp, occ.d.as_slice(), occ.joint.as_slice()) <= 1e-10);
            let pi = policy.probs();
            let horizon = 200;
            let mut p_t = mdp.initial().as_slice().to_vec();
            let mut series = vec![0.0; 4];
            let mut discount = 1.0;
            for _ in 0..horizon {
                for s in 0..4 {
                    series[s] += (1.0 - mdp.gamma()) * discount * p_t[s];
                }
                let mut next = vec![0.0; 4];
                for s in 0..4 {
                    for a in 0..2 {
                        for t in 0..4 {
                            next[t] += p_t[s] * pi[s * 2 + a] * mdp.transition(s, a)[t];
                        }
                    }
                }
                p_t = next;
                discount *= mdp.gamma();
            }
            let bound = mdp.gamma().powi(horizon as i32);
            for (a, b) in series.iter().zip(occ.d.as_slice()) {
                assert!((a - b).abs() <= bound + 1e-14);
            }
        }
    }

    #[test]
    fn j_rl_agrees_with_initial_value() {
        let mut rng = rng_from_seed(10);
        let mdp = TabularMdp::random(4, 3, 0.95, &mut rng);
        let policy = random_policy(4, 3, &mut rng);
        let vf = policy_eval(&mdp, &policy).unwrap();
        let direct = -mdp.initial().expect(&vf.v);
        assert!((j_rl(&mdp, &policy).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn j_rl_agrees_with_rollouts() {
        let mut rng = rng_from_seed(77);
        let mdp = TabularMdp::random(3, 2, 0.7, &mut rng);
        let policy = random_policy(3, 2, &mut rng);
        let probs = policy.probs();
        let horizon = 80;
        let runs = 20_000;
        let mut returns = Vec::with_capacity(runs);
        for _ in 0..runs {
            let s = sample_index(mdp.initial().as_slice(), &mut rng);
            let a = sample_index(&probs[s * 2..s * 2 + 2], &mut rng);
            returns.push(rollout_return(&mdp, &probs, s, a, horizon, &mut rng));
        }
        let mean = returns.iter().sum::<f64>() / runs as f64;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (runs as f64 - 1.0);
        let se = (var / runs as f64).sqrt();
        let trunc = mdp.gamma().powi(horizon as i32) * mdp.max_abs_reward() / (1.0 - mdp.gamma());
        assert!((-mean - j_rl(&mdp, &policy).unwrap()).abs() <= 3.0 * se + trunc);
    }

    #[test]
    fn influence_has_zero_conditional_mean() {
        let mut rng = rng_from_seed(11);
        for _ in 0..20 {
            let mdp = TabularMdp::random(4, 3, 0.9, &mut rng);
            let policy = random_policy(4, 3, &mut rng);
            let probs = policy.probs();
            for reference in [StateReference::Occupancy, StateReference::Uniform] {
                let psi = rl_influence(&mdp, &policy, &reference).unwrap();
                for s in 0..4 {
                    let m: f64 = (0..3).map(|a| probs[s * 3 + a] * psi.0[s * 3 + a]).sum();
                    assert!(m.abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn policy_gradient_theorem_via_chain_rule() {
        let mut rng = rng_from_seed(12);
        for _ in 0..10 {
            let mdp = TabularMdp::random(4, 3, 0.9, &mut rng);
            let policy = random_policy(4, 3, &mut rng);
            let psi = rl_influence(&mdp, &policy, &StateReference::Occupancy).unwrap();
            let d = discounted_occupancy(&mdp, &policy).unwrap().d;
            let logits = policy.logits().to_vec();
            for s in 0..4 {
                let g = chain_rule_grad(
                    &InfluenceVector(psi.0[s * 3..s * 3 + 3].to_vec()),
                    &LogitParam(logits[s * 3..s * 3 + 3].to_vec()),
                );
                for a in 0..3 {
                    let h = 1e-5;
                    let mut lp = logits.clone();
                    let mut lm = logits.clone();
                    lp[s * 3 + a] += h;
                    lm[s * 3 + a] -= h;
                    let jp = j_rl(&mdp, &Policy::from_logits(4, 3, lp).unwrap()).unwrap();
                    let jm = j_rl(&mdp, &Policy::from_logits(4, 3, lm).unwrap()).unwrap();
                    let fd = (jp - jm) / (2.0 * h);
                    assert!((fd - d[s] * g[a]).abs() <= 1e-6, "fd {fd} vs {}", d[s] * g[a]);
                }
            }
        }
    }

    #[test]
    fn joint_influence_passes_residual() {
        let mut rng = rng_from_seed(13);
        for _ in 0..10 {
            let mdp = TabularMdp::random(4, 3, 0.8, &mut rng);
            let j = RlObjective { mdp };
            let joint = random_interior(12, &mut rng);
            let psi = j.influence(&joint).unwrap();
            let probes = probe_set(&joint, &mut rng, 100);
            let r = influence_residual(&j, &psi, &joint, &probes, GATEAUX_STEP).unwrap();
            assert!(r <= 1e-5, "residual {r}");
        }
    }

    #[test]
    fn zero_reference_mass_is_rejected() {
        let mdp = TabularMdp::random(2, 2, 0.9, &mut rng_from_seed(1));
        let reference = StateReference::Custom(ProbVector::point_mass(2, 0));
        assert!(matches!(
            rl_influence(&mdp, &Policy::uniform(2, 2), &reference),
            Err(PfdError::Domain(_))
        ));
    }

    #[test]
    fn greedy_ties_and_optimality() {
        let tie = greedy_policy(&[1.0, 1.0, 0.5, 2.0], 2, 2);
        assert_eq!(tie.modal_actions(), vec![0, 1]);
        let mut rng = rng_from_seed(14);
        for _ in 0..20 {
            let mdp = TabularMdp::random(5, 3, 0.9, &mut rng);
            let v_star = value_iteration(&mdp, 1e-13, 100_000);
            let greedy = greedy_policy(&q_from_v(&mdp, &v_star), 5, 3);
            let vf = policy_eval(&mdp, &greedy).unwrap();
            for (a, b) in vf.v.iter().zip(&v_star) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bellman_operator_identities() {
        let mut rng = rng_from_seed(15);
        let mdp = TabularMdp::random(4, 3, 0.9, &mut rng);
        assert_eq!(bellman_apply(&mdp, &[0.0; 4]), mdp.rewards().to_vec());
        let policy = random_policy(4, 3, &mut rng);
        let vf = policy_eval(&mdp, &policy).unwrap();
        let av = bellman_apply(&mdp, &vf.v);
        let probs = policy.probs();
        for s in 0..4 {
            let m: f64 = (0..3).map(|a| probs[s * 3 + a] * av[s * 3 + a]).sum();
            assert!(m.abs() < 1e-12);
        }
        let v_star = value_iteration(&mdp, 1e-14, 100_000);
        let av = bellman_apply(&mdp, &v_star);
        for s in 0..4 {
            let m = av[s * 3..s * 3 + 3].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn dac_objective_on_and_off_the_flow_polytope() {
        let mut rng = rng_from_seed(16);
        let mdp = TabularMdp::random(3, 2, 0.9, &mut rng);
        let policy = random_policy(3, 2, &mut rng);
        let occ = discounted_occupancy(&mdp, &policy).unwrap();
        let v1: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let v2: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let a = dac_objective(&mdp, &occ.joint, &v1);
        let b = dac_objective(&mdp, &occ.joint, &v2);
        assert!((a - b).abs() < 1e-10);
        let expected = (1.0 - mdp.gamma()) * -j_rl(&mdp, &policy).unwrap();
        assert!((a - expected).abs() < 1e-10);
        assert!((dac_objective(&mdp, &occ.joint, &[0.0; 3]) - occ.joint.expect(mdp.rewards())).abs() < 1e-14);

        // a joint concentrated on one pair generally violates the flow equation
        let bad = ProbVector::point_mass(6, 0);
        let g = dac_value_gradient(&mdp, &bad);
        assert!(g.iter().any(|x| x.abs() > 1e-3));
        let shifted: Vec<f64> = v1.iter().zip(&g).map(|(v, gi)| v + gi).collect();
        assert!((dac_objective(&mdp, &bad, &v1) - dac_objective(&mdp, &bad, &shifted)).abs() > 1e-6);
    }

    #[test]
    fn improvement_never_hurts() {
        let mut rng = rng_from_seed(17);
        for _ in 0..100 {
            let mdp = TabularMdp::random(4, 3, 0.9, &mut rng);
            let policy = random_policy(4, 3, &mut rng);
            let vf = policy_eval(&mdp, &policy).unwrap();
            let improved = greedy_policy(&vf.q, 4, 3);
            assert!(j_rl(&mdp, &improved).unwrap() <= j_rl(&mdp, &policy).unwrap() + 1e-12);
        }
    }

    #[test]
    fn instance_file_round_trip_and_errors() {
        let mdp = TabularMdp::random(3, 2, 0.85, &mut rng_from_seed(18));
        let parsed = TabularMdp::parse(&mdp.to_text()).unwrap();
        assert_eq!(parsed, mdp);

        let text = "# single state\n1 2 0.9\n1.0\n0 0 1.0 1.0\n0 1 0.0 1.0\n";
        assert_eq!(TabularMdp::parse(text).unwrap(), single_state());

        let err = TabularMdp::parse("1 2 0.9\n1.0\n0 0 1.0 1.0\n0 0 0.0 1.0\n").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
        let err = TabularMdp::parse("1 2 0.9\n1.0\n0 0 x 1.0\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(TabularMdp::parse("1 1 1.5\n1.0\n0 0 1.0 1.0\n").is_err());
        assert!(TabularMdp::parse("1 1 0.5\n1.0\n0 0 1.0 0.7\n").is_err());
    }
}
