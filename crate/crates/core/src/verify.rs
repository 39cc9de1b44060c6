//! Numerical verification suites.
//!
//! Each suite checks one family of identities on random desk-scale
//! instances against an independent oracle and reports the worst measured
//! discrepancy next to its threshold.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::divergences::{
    js_influence, kl_divergence, ns_influence, JensenShannon, LatentModel, ReverseKl, VariationalKl,
};
use crate::engine::{
    estimate_rl_influence, pfd_run, policy_chain_rule_grad, policy_score_estimate, trace_csv_bytes, Descent, GradKind,
    PfdConfig,
};
use crate::error::{PfdError, Result};
use crate::estimators::{
    center, estimate_classifier, estimate_dual_ascent, estimate_mc_q, DualProblem, EstimatorConfig, EstimatorKind,
};
use crate::functional::{
    chain_rule_grad, influence_residual, probe_set, score_function_estimate, InfluenceVector, ProbabilityFunctional,
    DEFAULT_PROBES, GATEAUX_STEP,
};
use crate::mdp::{
    bellman_residual, dac_objective, discounted_occupancy, flow_residual, greedy_policy, j_rl, policy_eval,
    policy_iteration, q_from_v, rl_influence, value_iteration, Policy, RlObjective, StateReference, TabularMdp,
};
use crate::presets::{build_preset, run_dual_actor_critic, DacConfig, PresetName, ProblemContext};
use crate::space::{random_dirichlet, random_interior, rng_from_seed, softmax, tv_distance, LogitParam, PfdRng, ProbVector};
use crate::transport::{lipschitz_constant, w1_solve, MetricSpace, Wasserstein};

pub const SUITES: [&str; 12] = [
    "influence",
    "chain_rule",
    "duality",
    "discriminator",
    "transport",
    "gan",
    "vi",
    "rl",
    "policy_iteration",
    "dual_actor_critic",
    "unbiasedness",
    "determinism",
];

/// Deliberate defects used to confirm that the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Faults {
    /// Negate the reverse-KL influence function.
    pub ns_sign_flip: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckResult {
    /// Passes when `measured ≤ threshold`.
    pub fn at_most(suite: &'static str, name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self { suite, name: name.into(), measured, threshold, passed: measured <= threshold }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{} measured={:.3e} threshold={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.measured,
            self.threshold
        )
    }
}

pub fn run_suite(name: &str, faults: Faults) -> Result<Vec<CheckResult>> {
    match name {
        "influence" => Ok(influence(faults)),
        "chain_rule" => Ok(chain_rule()),
        "duality" => duality(),
        "discriminator" => discriminator(),
        "transport" => transport(),
        "gan" => gan(),
        "vi" => vi(),
        "rl" => rl(),
        "policy_iteration" => policy_iteration_suite(),
        "dual_actor_critic" => dual_actor_critic(),
        "unbiasedness" => unbiasedness(),
        "determinism" => determinism(),
        other => Err(PfdError::Config(format!("unknown verification suite '{other}'"))),
    }
}

pub fn run_all(faults: Faults) -> Result<Vec<CheckResult>> {
    let mut all = Vec::new();
    for s in SUITES {
        all.extend(run_suite(s, faults)?);
    }
    Ok(all)
}

/// Reverse KL with an optionally negated influence.
#[derive(Debug)]
struct MaybeBrokenReverseKl {
    inner: ReverseKl,
    flip: bool,
}

impl ProbabilityFunctional for MaybeBrokenReverseKl {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, mu: &ProbVector) -> f64 {
        self.inner.value(mu)
    }
    fn has_influence(&self) -> bool {
        true
    }
    fn influence(&self, mu: &ProbVector) -> Result<InfluenceVector> {
        let psi = self.inner.influence(mu)?;
        Ok(if self.flip { InfluenceVector(psi.0.iter().map(|x| -x).collect()) } else { psi })
    }
}

fn random_functional(kind: &str, rng: &mut PfdRng, faults: Faults) -> (Box<dyn ProbabilityFunctional>, usize) {
    match kind {
        "jensen_shannon" => {
            let n = rng.gen_range(2..=12);
            (Box::new(JensenShannon { target: random_interior(n, rng) }), n)
        }
        "reverse_kl" => {
            let n = rng.gen_range(2..=12);
            let inner = ReverseKl { target: random_interior(n, rng) };
            (Box::new(MaybeBrokenReverseKl { inner, flip: faults.ns_sign_flip }), n)
        }
        "variational_kl" => {
            let n = rng.gen_range(2..=12);
            (Box::new(VariationalKl { model: LatentModel::random(n, rng) }), n)
        }
        "reinforcement_learning" => {
            let (s, a) = (rng.gen_range(2..=4), rng.gen_range(2..=3));
            (Box::new(RlObjective { mdp: TabularMdp::random(s, a, 0.9, rng) }), s * a)
        }
        "wasserstein" => {
            let n = rng.gen_range(2..=12);
            (Box::new(Wasserstein { target: random_interior(n, rng), metric: MetricSpace::random_planar(n, rng) }), n)
        }
        _ => unreachable!(),
    }
}

const FUNCTIONALS: [&str; 5] = ["jensen_shannon", "reverse_kl", "variational_kl", "reinforcement_learning", "wasserstein"];

fn influence(faults: Faults) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for (k, kind) in FUNCTIONALS.into_iter().enumerate() {
        let mut rng = rng_from_seed(1000 + k as u64);
        let threshold = if kind == "wasserstein" { 1e-4 } else { 1e-5 };
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let (j, n) = random_functional(kind, &mut rng, faults);
            let mu = random_interior(n, &mut rng);
            let r = j
                .influence(&mu)
                .and_then(|psi| {
                    let probes = probe_set(&mu, &mut rng, DEFAULT_PROBES);
                    influence_residual(j.as_ref(), &psi, &mu, &probes, GATEAUX_STEP)
                })
                .unwrap_or(f64::INFINITY);
            worst = worst.max(r);
        }
        out.push(CheckResult::at_most("influence", format!("{kind}_residual"), worst, threshold));
    }
    out
}

/// Central difference of `f` at `x` along coordinate `k`.
fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[k] += h;
    xm[k] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

fn chain_rule() -> Vec<CheckResult> {
    let h = 1e-5;
    let mut out = Vec::new();
    for (k, kind) in FUNCTIONALS.into_iter().enumerate() {
        let mut rng = rng_from_seed(2000 + k as u64);
        let mut worst = 0.0_f64;
        for _ in 0..50 {
            let (j, n) = random_functional(kind, &mut rng, Faults::default());
            let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if kind == "reinforcement_learning" {
                // also the per-state softmax policy form
                let mdp = TabularMdp::random(4, 3, 0.9, &mut rng);
                let policy_theta: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
                worst = worst.max(policy_gradient_error(&mdp, &policy_theta, h));
            }
            let mu = softmax(&LogitParam(theta.clone()));
            let g = match j.influence(&mu) {
                Ok(psi) => chain_rule_grad(&psi, &LogitParam(theta.clone())),
                Err(_) => {
                    worst = f64::INFINITY;
                    continue;
                }
            };
            let f = |t: &[f64]| j.value(&softmax(&LogitParam(t.to_vec())));
            for (c, gc) in g.iter().enumerate() {
                worst = worst.max((central_diff(&f, &theta, c, h) - gc).abs());
            }
        }
        out.push(CheckResult::at_most("chain_rule", format!("{kind}_gradient"), worst, 1e-6));
    }
    out
}

/// Largest gap between `d(s)·chain_rule(Ψ_RL(s,·))` and a central
/// difference of `θ ↦ j_rl`.
fn policy_gradient_error(mdp: &TabularMdp, theta: &[f64], h: f64) -> f64 {
    let (ns, na) = (mdp.states(), mdp.actions());
    let policy = Policy::from_logits(ns, na, theta.to_vec()).expect("finite logits");
    let (Ok(psi), Ok(occ)) = (rl_influence(mdp, &policy, &StateReference::Occupancy), discounted_occupancy(mdp, &policy))
    else {
        return f64::INFINITY;
    };
    let g = policy_chain_rule_grad(&psi, &policy, &occ.d);
    let f = |t: &[f64]| j_rl(mdp, &Policy::from_logits(ns, na, t.to_vec()).expect("finite logits")).unwrap_or(f64::NAN);
    let mut worst = 0.0_f64;
    for (c, gc) in g.iter().enumerate() {
        let e = (central_diff(&f, theta, c, h) - gc).abs();
        worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
    }
    worst
}

fn duality() -> Result<Vec<CheckResult>> {
    let mut rng = rng_from_seed(3000);
    let mut out = Vec::new();
    for (kind, cfg) in [
        ("jensen_shannon", EstimatorConfig { kind: EstimatorKind::DualAscent, inner_steps: 20_000, learning_rate: 4.0, ..Default::default() }),
        ("wasserstein", EstimatorConfig { kind: EstimatorKind::DualAscent, inner_steps: 500, learning_rate: 1.0, ..Default::default() }),
    ] {
        let (mut gap, mut slack, mut arg) = (0.0_f64, f64::INFINITY, 0.0_f64);
        for _ in 0..20 {
            let n = rng.gen_range(2..=10);
            let mu = random_interior(n, &mut rng);
            let nu = random_interior(n, &mut rng);
            let (problem, value, exact) = if kind == "jensen_shannon" {
                let j = JensenShannon { target: nu.clone() };
                (DualProblem::JensenShannon { target: nu.clone() }, j.value(&mu), js_influence(&mu, &nu)?)
            } else {
                let metric = MetricSpace::random_planar(n, &mut rng);
                let sol = w1_solve(&mu, &nu, &metric)?;
                (DualProblem::Wasserstein { target: nu.clone(), metric }, sol.value, InfluenceVector(sol.potential.0))
            };
            let est = estimate_dual_ascent(&problem, &mu, &cfg)?;
            gap = gap.max((value - est.achieved).abs());
            slack = slack.min(value - est.achieved);
            let exact = center(&exact, &mu);
            for (a, b) in est.psi.as_slice().iter().zip(exact.as_slice()) {
                arg = arg.max((a - b).abs());
            }
        }
        out.push(CheckResult::at_most("duality", format!("{kind}_value_gap"), gap, 1e-4));
        out.push(CheckResult::at_most("duality", format!("{kind}_maximizer"), arg, 1e-3));
        out.push(CheckResult::at_most("duality", format!("{kind}_weak_duality_violation"), -slack, 1e-9));
    }
    Ok(out)
}

fn discriminator() -> Result<Vec<CheckResult>> {
    let mut rng = rng_from_seed(4000);
    let cfg = EstimatorConfig { kind: EstimatorKind::Classifier, inner_steps: 20_000, learning_rate: 4.0, ..Default::default() };
    let (mut d_err, mut r_err) = (0.0_f64, 0.0_f64);
    for _ in 0..20 {
        let n = rng.gen_range(2..=12);
        let mu = random_interior(n, &mut rng);
        let nu = random_interior(n, &mut rng);
        let est = estimate_classifier(&mu, &nu, &cfg)?;
        for k in 0..n {
            d_err = d_err.max((est.d[k] - nu[k] / (mu[k] + nu[k])).abs());
        }
        let exact = center(&ns_influence(&mu, &nu)?, &mu);
        for (a, b) in est.log_ratio.as_slice().iter().zip(exact.as_slice()) {
            r_err = r_err.max((a - b).abs());
        }
    }
    Ok(vec![
        CheckResult::at_most("discriminator", "optimal_discriminator", d_err, 1e-4),
        CheckResult::at_most("discriminator", "log_ratio", r_err, 1e-4),
    ])
}

/// Minimum transport cost by enumerating every basis of the transportation
/// polytope: choose `2n − 1` cells, solve the marginal equations (one
/// redundant column constraint dropped), keep nonnegative solutions.
pub fn w1_vertex_enumeration(mu: &ProbVector, nu: &ProbVector, m: &MetricSpace) -> f64 {
    let n = mu.len();
    let cells = n * n;
    let rows = 2 * n - 1;
    let mut best = f64::INFINITY;
    let mut b = DVector::zeros(rows);
    for i in 0..n {
        b[i] = mu[i];
    }
    for j in 0..n - 1 {
        b[n + j] = nu[j];
    }
    let mut combo: Vec<usize> = (0..rows).collect();
    loop {
        let a = DMatrix::from_fn(rows, rows, |r, c| {
            let (i, j) = (combo[c] / n, combo[c] % n);
            let hit = if r < n { i == r } else { j == r - n };
            if hit {
                1.0
            } else {
                0.0
            }
        });
        if let Some(x) = a.lu().solve(&b) {
            if x.iter().all(|v| v.is_finite() && *v >= -1e-12) {
                let cost: f64 = combo.iter().zip(x.iter()).map(|(&c, v)| v.max(0.0) * m.dist(c / n, c % n)).sum();
                best = best.min(cost);
            }
        }
        // next combination in lexicographic order
        let mut k = rows;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if combo[k] < cells - rows + k {
                break;
            }
        }
        combo[k] += 1;
        for t in k + 1..rows {
            combo[t] = combo[t - 1] + 1;
        }
    }
}

fn transport() -> Result<Vec<CheckResult>> {
    let mut rng = rng_from_seed(5000);
    let (mut lp, mut gap, mut lip) = (0.0_f64, 0.0_f64, 0.0_f64);
    for n in 2..=4 {
        for t in 0..40 {
            let metric = MetricSpace::random_planar(n, &mut rng);
            // half the instances carry exact zeros, exercising degenerate bases
            let (mu, nu) = if t % 2 == 0 {
                (random_interior(n, &mut rng), random_interior(n, &mut rng))
            } else {
                (sparse(n, &mut rng), sparse(n, &mut rng))
            };
            let sol = w1_solve(&mu, &nu, &metric)?;
            lp = lp.max((sol.value - w1_vertex_enumeration(&mu, &nu, &metric)).abs());
            let dual: f64 = mu.expect(&sol.row_duals) + nu.expect(&sol.col_duals);
            gap = gap.max((dual - sol.value).abs());
            let phi = sol.potential.as_slice();
            gap = gap.max((mu.expect(phi) - nu.expect(phi) - sol.value).abs());
            lip = lip.max(lipschitz_constant(phi, &metric) - 1.0);
        }
    }
    Ok(vec![
        CheckResult::at_most("transport", "vertex_enumeration", lp, 1e-10),
        CheckResult::at_most("transport", "duality_gap", gap, 1e-8),
        CheckResult::at_most("transport", "potential_lipschitz_excess", lip, 1e-9),
    ])
}

fn sparse(n: usize, rng: &mut PfdRng) -> ProbVector {
    let mut w = random_dirichlet(n, rng).into_vec();
    let zero = rng.gen_range(0..n);
    w[zero] = 0.0;
    if w.iter().all(|x| *x == 0.0) {
        w[(zero + 1) % n] = 1.0;
    }
    ProbVector::from_weights(&w).expect("nonzero weights")
}

fn gan() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (k, preset) in [PresetName::MinimaxGan, PresetName::NonsaturatingGan, PresetName::WassersteinGan]
        .into_iter()
        .enumerate()
    {
        let mut rng = rng_from_seed(6000 + k as u64);
        let mut worst = 0.0_f64;
        for _ in 0..5 {
            let target = random_interior(8, &mut rng);
            let ctx = ProblemContext::Gan { target: target.clone(), initial: Some(random_interior(8, &mut rng)), metric: None };
            let cfg = build_preset(preset, &ctx)?;
            assert!(cfg.outer_steps <= 5000);
            let tv = match pfd_run(&cfg) {
                Ok(o) => tv_distance(&o.measure, &target)?,
                Err(_) => f64::INFINITY,
            };
            worst = worst.max(tv);
        }
        out.push(CheckResult::at_most("gan", format!("{preset}_tv"), worst, 1e-3));
    }
    Ok(out)
}

fn vi() -> Result<Vec<CheckResult>> {
    let mut rng = rng_from_seed(7000);
    let (mut bbvi, mut avb, mut between, mut elbo) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..5 {
        let n = rng.gen_range(2..=10);
        let model = LatentModel::random(n, &mut rng);
        // posterior by direct summation
        let joint: Vec<f64> = model.prior().as_slice().iter().zip(model.likelihood()).map(|(p, l)| p * l).collect();
        let total: f64 = joint.iter().sum();
        let posterior = ProbVector::from_weights(&joint.iter().map(|j| j / total).collect::<Vec<_>>())?;
        let ctx = ProblemContext::Vi { model: model.clone() };
        let run = |p: PresetName| -> Result<ProbVector> {
            pfd_run(&build_preset(p, &ctx)?).map(|o| o.measure).map_err(|f| f.error)
        };
        let qb = run(PresetName::Bbvi)?;
        let qa = run(PresetName::Avb)?;
        bbvi = bbvi.max(tv_distance(&qb, &posterior)?);
        avb = avb.max(tv_distance(&qa, &posterior)?);
        between = between.max(tv_distance(&qa, &qb)?);
        for q in [random_interior(n, &mut rng), qb] {
            let direct = kl_divergence(&q, &posterior)?;
            elbo = elbo.max((direct - (model.log_evidence() - model.elbo(&q)?)).abs());
        }
    }
    Ok(vec![
        CheckResult::at_most("vi", "bbvi_tv", bbvi, 1e-3),
        CheckResult::at_most("vi", "avb_tv", avb, 1e-3),
        CheckResult::at_most("vi", "bbvi_avb_tv", between, 1e-3),
        CheckResult::at_most("vi", "elbo_identity", elbo, 1e-12),
    ])
}

fn random_policy(s: usize, a: usize, rng: &mut PfdRng) -> Policy {
    Policy::from_logits(s, a, (0..s * a).map(|_| rng.gen_range(-1.5..1.5)).collect()).expect("finite logits")
}

fn rl() -> Result<Vec<CheckResult>> {
    let mut rng = rng_from_seed(8000);
    let (mut bellman, mut flow, mut pg) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..50 {
        let mdp = TabularMdp::random(4, 3, 0.9, &mut rng);
        let policy = random_policy(4, 3, &mut rng);
        let vf = policy_eval(&mdp, &policy)?;
        bellman = bellman.max(bellman_residual(&mdp, &policy, &vf.v));
        let occ = discounted_occupancy(&mdp, &policy)?;
        flow = flow.max(flow_residual(&mdp, occ.d.as_slice(), occ.joint.as_slice()));
        pg = pg.max(policy_gradient_error(&mdp, policy.logits(), 1e-5));
    }
    Ok(vec![
        CheckResult::at_most("rl", "bellman_residual", bellman, 1e-10),
        CheckResult::at_most("rl", "flow_residual", flow, 1e-10),
        CheckResult::at_most("rl", "policy_gradient_theorem", pg, 1e-6),
    ])
}

fn policy_iteration_suite() -> Result<Vec<CheckResult>> {
    let mut rng = rng_from_seed(9000);
    let (mut mismatches, mut increase, mut overrun) = (0.0, 0.0_f64, 0.0_f64);
    for _ in 0..20 {
        let (s, a) = (rng.gen_range(2..=6), rng.gen_range(2..=4));
        let mdp = TabularMdp::random(s, a, 0.9, &mut rng);
        let cfg = build_preset(PresetName::PolicyIteration, &ProblemContext::Rl { mdp: mdp.clone() })?;
        let out = pfd_run(&cfg).map_err(|f| f.error)?;
        let v_star = value_iteration(&mdp, 1e-13, 1_000_000);
        let optimal = greedy_policy(&q_from_v(&mdp, &v_star), s, a);
        if out.policy.expect("RL runs return a policy").probs() != optimal.probs() {
            mismatches += 1.0;
        }
        for w in out.trace.windows(2) {
            increase = increase.max(w[1].j_value - w[0].j_value);
        }
        let seq = policy_iteration(&mdp, &Policy::uniform(s, a), s * a + 1)?;
        overrun = overrun.max(seq.len() as f64 - 1.0 - (s * a) as f64);
    }
    Ok(vec![
        CheckResult::at_most("policy_iteration", "fixed_point_mismatches", mismatches, 0.0),
        CheckResult::at_most("policy_iteration", "j_rl_increase", increase, 1e-12),
        CheckResult::at_most("policy_iteration", "improvement_steps_beyond_sa", overrun, 0.0),
    ])
}

fn dual_actor_critic() -> Result<Vec<CheckResult>> {
    let mut rng = rng_from_seed(10_000);
    let (mut gap, mut spread) = (0.0_f64, 0.0_f64);
    for _ in 0..20 {
        let mdp = TabularMdp::random(3, 2, 0.9, &mut rng);
        let v_star = value_iteration(&mdp, 1e-13, 1_000_000);
        let optimum = j_rl(&mdp, &greedy_policy(&q_from_v(&mdp, &v_star), 3, 2))?;
        let out = run_dual_actor_critic(&mdp, &DacConfig::default()).map_err(|f| f.error)?;
        gap = gap.max((j_rl(&mdp, &out.policy)? - optimum).abs());

        let occ = discounted_occupancy(&mdp, &random_policy(3, 2, &mut rng))?;
        let values: Vec<f64> = (0..10)
            .map(|_| {
                let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
                dac_objective(&mdp, &occ.joint, &v)
            })
            .collect();
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(*x), h.max(*x)));
        spread = spread.max(hi - lo);
    }
    Ok(vec![
        CheckResult::at_most("dual_actor_critic", "j_rl_gap_to_optimum", gap, 1e-2),
        CheckResult::at_most("dual_actor_critic", "value_invariance_spread", spread, 1e-10),
    ])
}

/// Largest `|mean − exact| / se` over coordinates; coordinates with zero
/// standard error must match to 1e-12.
fn worst_z(mean: &[f64], se: &[f64], exact: &[f64], slack: f64) -> f64 {
    mean.iter()
        .zip(se)
        .zip(exact)
        .map(|((m, s), e)| {
            let err = ((m - e).abs() - slack).max(0.0);
            if err <= 1e-12 {
                0.0
            } else if *s > 0.0 {
                err / s
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

fn mean_and_se(draws: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let m = draws.len() as f64;
    let dim = draws[0].len();
    let mean: Vec<f64> = (0..dim).map(|k| draws.iter().map(|d| d[k]).sum::<f64>() / m).collect();
    let se = (0..dim)
        .map(|k| {
            let var = draws.iter().map(|d| (d[k] - mean[k]).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        })
        .collect();
    (mean, se)
}

fn unbiasedness() -> Result<Vec<CheckResult>> {
    let mut rng = rng_from_seed(11_000);
    let mut out = Vec::new();

    let mut z = 0.0_f64;
    for _ in 0..3 {
        let theta = LogitParam((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let psi = InfluenceVector((0..6).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let exact = chain_rule_grad(&psi, &theta);
        let est = score_function_estimate(&psi, &theta, &mut rng, 100_000)?;
        z = z.max(worst_z(&est.mean, &est.std_err, &exact, 0.0));
    }
    out.push(CheckResult::at_most("unbiasedness", "score_function_z", z, 3.0));

    let mdp = TabularMdp::random(3, 2, 0.8, &mut rng);
    let policy = random_policy(3, 2, &mut rng);
    let mc_cfg = EstimatorConfig { kind: EstimatorKind::McQ, samples: 10_000, tolerance: 1e-10, ..Default::default() };
    let q = estimate_mc_q(&mdp, &policy, &mut rng, &mc_cfg)?;
    let exact_q = policy_eval(&mdp, &policy)?.q;
    out.push(CheckResult::at_most("unbiasedness", "mc_q_z", worst_z(&q.q, &q.std_err, &exact_q, q.truncation_bound), 3.0));

    // full gradient estimators: one rollout per pair per draw
    let occ = discounted_occupancy(&mdp, &policy)?;
    let exact_psi = rl_influence(&mdp, &policy, &StateReference::Occupancy)?;
    let exact_grad = policy_chain_rule_grad(&exact_psi, &policy, &occ.d);
    let draw_cfg = EstimatorConfig { kind: EstimatorKind::McQ, samples: 1, tolerance: 1e-10, ..Default::default() };
    let truncation = mdp.max_abs_reward() * 1e-10;
    for (name, baseline) in [("policy_gradient_z", false), ("actor_critic_z", true)] {
        let mut draws = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let psi = center(&estimate_rl_influence(&mdp, &policy, &occ.d, baseline, &draw_cfg, &mut rng)?, &occ.joint);
            let g = if baseline {
                policy_chain_rule_grad(&psi, &policy, &occ.d)
            } else {
                policy_score_estimate(&psi, &policy, &occ.joint, &mut rng, 1)?.mean
            };
            draws.push(g);
        }
        let (mean, se) = mean_and_se(&draws);
        out.push(CheckResult::at_most("unbiasedness", name, worst_z(&mean, &se, &exact_grad, truncation), 3.0));
    }
    Ok(out)
}

fn determinism() -> Result<Vec<CheckResult>> {
    let mut rng = rng_from_seed(12_000);
    let mdp = TabularMdp::random(3, 2, 0.9, &mut rng);
    let target = random_interior(6, &mut rng);
    let mut configs: Vec<PfdConfig> = Vec::new();
    let mut pg = build_preset(PresetName::PolicyGradient, &ProblemContext::Rl { mdp })?;
    pg.outer_steps = 50;
    pg.seed = 17;
    configs.push(pg);
    let mut ns = build_preset(
        PresetName::NonsaturatingGan,
        &ProblemContext::Gan { target, initial: None, metric: None },
    )?;
    ns.descent = Descent::Gradient {
        learning_rate: 0.5,
        grad_kind: GradKind::ScoreFunction { samples: 64 },
    };
    ns.outer_steps = 200;
    ns.seed = 5;
    ns.diagnostics.influence_residual = true;
    configs.push(ns);
    let mut differing = 0.0;
    for cfg in &configs {
        let a = pfd_run(cfg).map_err(|f| f.error)?;
        let b = pfd_run(cfg).map_err(|f| f.error)?;
        if trace_csv_bytes(&a.trace) != trace_csv_bytes(&b.trace) {
            differing += 1.0;
        }
    }
    Ok(vec![CheckResult::at_most("determinism", "differing_traces", differing, 0.0)])
}
