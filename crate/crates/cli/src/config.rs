//! INI-style run configuration.
//!
//! Three sections, `[problem]`, `[algorithm]` and `[run]`, hold flat
//! `key = value` pairs. Full-line comments start with `#` or `;`. Unknown
//! sections and keys are rejected with the offending line number.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pfd::divergences::LatentModel;
use pfd::engine::{Descent, FunctionalId, GradKind, Objective, PfdConfig};
use pfd::estimators::{EstimatorConfig, EstimatorKind};
use pfd::mdp::{StateReference, TabularMdp};
use pfd::presets::{build_preset, PresetName, ProblemContext, ProblemKind};
use pfd::space::{random_interior, rng_from_seed};
use pfd::transport::MetricSpace;
use pfd::ProbVector;
use thiserror::Error;

pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_INNER_STEPS: usize = 100;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_VALUE_LEARNING_RATE: f64 = 0.5;
pub const DEFAULT_SCORE_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), message: message.into() }
    }

    fn general(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Line,
    Discrete,
    /// Random points in the unit square, drawn from the problem seed.
    Planar,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Line => "line",
            MetricKind::Discrete => "discrete",
            MetricKind::Planar => "planar",
        }
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "line" => Ok(MetricKind::Line),
            "discrete" => Ok(MetricKind::Discrete),
            "planar" => Ok(MetricKind::Planar),
            _ => Err(format!("unknown metric '{s}' (expected line, discrete or planar)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentKind {
    Gradient,
    ScoreFunction,
    GlobalMin,
    Saddle,
}

impl DescentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DescentKind::Gradient => "gradient",
            DescentKind::ScoreFunction => "score_function",
            DescentKind::GlobalMin => "global_min",
            DescentKind::Saddle => "saddle",
        }
    }
}

impl FromStr for DescentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gradient" => Ok(DescentKind::Gradient),
            "score_function" => Ok(DescentKind::ScoreFunction),
            "global_min" => Ok(DescentKind::GlobalMin),
            "saddle" => Ok(DescentKind::Saddle),
            _ => Err(format!("unknown descent '{s}' (expected gradient, score_function, global_min or saddle)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    Occupancy,
    Uniform,
}

impl ReferenceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReferenceKind::Occupancy => "occupancy",
            ReferenceKind::Uniform => "uniform",
        }
    }
}

impl FromStr for ReferenceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "occupancy" => Ok(ReferenceKind::Occupancy),
            "uniform" => Ok(ReferenceKind::Uniform),
            _ => Err(format!("unknown reference '{s}' (expected occupancy or uniform)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub instance: Option<PathBuf>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub states: Option<usize>,
    pub actions: Option<usize>,
    pub gamma: Option<f64>,
    pub target: Option<Vec<f64>>,
    pub initial: Option<Vec<f64>>,
    pub prior: Option<Vec<f64>>,
    pub likelihood: Option<Vec<f64>>,
    pub metric: Option<MetricKind>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlgorithmSection {
    pub preset: Option<PresetName>,
    pub functional: Option<FunctionalId>,
    pub estimator: Option<EstimatorKind>,
    pub descent: Option<DescentKind>,
    pub reference: Option<ReferenceKind>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSection {
    pub outer_steps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub value_learning_rate: Option<f64>,
    pub lr_half_life: Option<f64>,
    pub inner_steps: Option<usize>,
    pub inner_learning_rate: Option<f64>,
    pub samples: Option<usize>,
    pub score_samples: Option<usize>,
    pub tolerance: Option<f64>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub influence_residual: Option<bool>,
    pub wall_time: Option<bool>,
}

/// The file as written: only keys that were present are `Some`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfigFile {
    pub problem: ProblemSection,
    pub algorithm: AlgorithmSection,
    pub run: RunSection,
}

/// A parsed file plus the line each key came from, for error reporting.
#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub file: RunConfigFile,
    lines: HashMap<(String, String), usize>,
    /// Directory relative instance paths resolve against.
    pub base_dir: PathBuf,
}

impl ParsedConfig {
    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.lines.get(&(section.to_string(), key.to_string())).copied()
    }

    fn err(&self, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError { line: self.line_of(section, key), message: message.into() }
    }
}

const PROBLEM_KEYS: [&str; 12] =
    ["kind", "instance", "n", "seed", "states", "actions", "gamma", "target", "initial", "prior", "likelihood", "metric"];
const ALGORITHM_KEYS: [&str; 5] = ["preset", "functional", "estimator", "descent", "reference"];
const RUN_KEYS: [&str; 13] = [
    "outer_steps",
    "learning_rate",
    "value_learning_rate",
    "lr_half_life",
    "inner_steps",
    "inner_learning_rate",
    "samples",
    "score_samples",
    "tolerance",
    "seed",
    "out_dir",
    "influence_residual",
    "wall_time",
];

type Entries = HashMap<(String, String), (usize, String)>;

fn tokenize(text: &str) -> Result<Entries, ConfigError> {
    let mut entries = Entries::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(line, format!("malformed section header '{trimmed}'")))?
                .trim();
            if !["problem", "algorithm", "run"].contains(&name) {
                return Err(ConfigError::at(line, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, format!("expected 'key = value', got '{trimmed}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.as_deref().ok_or_else(|| ConfigError::at(line, format!("key '{key}' outside any section")))?;
        let allowed: &[&str] = match sec {
            "problem" => &PROBLEM_KEYS,
            "algorithm" => &ALGORITHM_KEYS,
            _ => &RUN_KEYS,
        };
        if !allowed.contains(&key) {
            return Err(ConfigError::at(line, format!("unknown key '{key}' in [{sec}]")));
        }
        if value.is_empty() {
            return Err(ConfigError::at(line, format!("key '{key}' has an empty value")));
        }
        if let Some((first, _)) = entries.insert((sec.to_string(), key.to_string()), (line, value.to_string())) {
            return Err(ConfigError::at(line, format!("duplicate key '{key}' (first set on line {first})")));
        }
    }
    Ok(entries)
}

struct Fields<'a> {
    entries: &'a Entries,
    section: &'static str,
}

impl Fields<'_> {
    fn get<T>(&self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, ConfigError> {
        match self.entries.get(&(self.section.to_string(), key.to_string())) {
            None => Ok(None),
            Some((line, v)) => parse(v).map(Some).map_err(|m| ConfigError::at(*line, format!("{key}: {m}"))),
        }
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.get(key, |v| v.parse::<T>().map_err(|_| format!("cannot parse '{v}'")))
    }

    fn named<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key, |v| v.parse::<T>().map_err(|e| e.to_string()))
    }

    fn vector(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.get(key, parse_numbers)
    }

    fn flag(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.get(key, |v| match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("expected true or false, got '{v}'")),
        })
    }
}

/// Numbers separated by commas and/or whitespace.
pub fn parse_numbers(v: &str) -> Result<Vec<f64>, String> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("cannot parse number '{t}'")))
        .collect()
}

pub fn parse_str(text: &str, base_dir: &Path) -> Result<ParsedConfig, ConfigError> {
    let entries = tokenize(text)?;
    let p = Fields { entries: &entries, section: "problem" };
    let kind = p
        .named::<ProblemKind>("kind")?
        .ok_or_else(|| ConfigError::general("missing key 'kind' in [problem]"))?;
    let problem = ProblemSection {
        kind,
        instance: p.get("instance", |v| Ok(PathBuf::from(v)))?,
        n: p.num("n")?,
        seed: p.num("seed")?,
        states: p.num("states")?,
        actions: p.num("actions")?,
        gamma: p.num("gamma")?,
        target: p.vector("target")?,
        initial: p.vector("initial")?,
        prior: p.vector("prior")?,
        likelihood: p.vector("likelihood")?,
        metric: p.named("metric")?,
    };
    let a = Fields { entries: &entries, section: "algorithm" };
    let algorithm = AlgorithmSection {
        preset: a.named("preset")?,
        functional: a.named("functional")?,
        estimator: a.named("estimator")?,
        descent: a.named("descent")?,
        reference: a.named("reference")?,
    };
    let r = Fields { entries: &entries, section: "run" };
    let run = RunSection {
        outer_steps: r.num("outer_steps")?,
        learning_rate: r.num("learning_rate")?,
        value_learning_rate: r.num("value_learning_rate")?,
        lr_half_life: r.num("lr_half_life")?,
        inner_steps: r.num("inner_steps")?,
        inner_learning_rate: r.num("inner_learning_rate")?,
        samples: r.num("samples")?,
        score_samples: r.num("score_samples")?,
        tolerance: r.num("tolerance")?,
        seed: r.num("seed")?,
        out_dir: r.get("out_dir", |v| Ok(PathBuf::from(v)))?,
        influence_residual: r.flag("influence_residual")?,
        wall_time: r.flag("wall_time")?,
    };
    let lines = entries.into_iter().map(|(k, (line, _))| (k, line)).collect();
    Ok(ParsedConfig { file: RunConfigFile { problem, algorithm, run }, lines, base_dir: base_dir.to_path_buf() })
}

pub fn parse_file(path: &Path) -> Result<ParsedConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::general(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_str(&text, &base)
}

/// Parses and validates a config file into a runnable configuration.
pub fn parse_config(path: &Path) -> Result<PfdConfig, ConfigError> {
    parse_file(path)?.build()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfigFile {
    /// Writes the file back out; parsing the result yields an equal value.
    pub fn serialize(&self) -> String {
        fn show<T: ToString>(v: &Option<T>) -> Option<String> {
            v.as_ref().map(ToString::to_string)
        }
        fn path(v: &Option<PathBuf>) -> Option<String> {
            v.as_ref().map(|x| x.display().to_string())
        }
        let p = &self.problem;
        let a = &self.algorithm;
        let r = &self.run;
        let sections: [(&str, Vec<(&str, Option<String>)>); 3] = [
            (
                "problem",
                vec![
                    ("kind", Some(p.kind.to_string())),
                    ("instance", path(&p.instance)),
                    ("n", show(&p.n)),
                    ("seed", show(&p.seed)),
                    ("states", show(&p.states)),
                    ("actions", show(&p.actions)),
                    ("gamma", show(&p.gamma)),
                    ("target", p.target.as_deref().map(join)),
                    ("initial", p.initial.as_deref().map(join)),
                    ("prior", p.prior.as_deref().map(join)),
                    ("likelihood", p.likelihood.as_deref().map(join)),
                    ("metric", p.metric.map(|x| x.as_str().to_string())),
                ],
            ),
            (
                "algorithm",
                vec![
                    ("preset", show(&a.preset)),
                    ("functional", show(&a.functional)),
                    ("estimator", show(&a.estimator)),
                    ("descent", a.descent.map(|x| x.as_str().to_string())),
                    ("reference", a.reference.map(|x| x.as_str().to_string())),
                ],
            ),
            (
                "run",
                vec![
                    ("outer_steps", show(&r.outer_steps)),
                    ("learning_rate", show(&r.learning_rate)),
                    ("value_learning_rate", show(&r.value_learning_rate)),
                    ("lr_half_life", show(&r.lr_half_life)),
                    ("inner_steps", show(&r.inner_steps)),
                    ("inner_learning_rate", show(&r.inner_learning_rate)),
                    ("samples", show(&r.samples)),
                    ("score_samples", show(&r.score_samples)),
                    ("tolerance", show(&r.tolerance)),
                    ("seed", show(&r.seed)),
                    ("out_dir", path(&r.out_dir)),
                    ("influence_residual", show(&r.influence_residual)),
                    ("wall_time", show(&r.wall_time)),
                ],
            ),
        ];
        let mut s = String::new();
        for (name, keys) in sections {
            let _ = writeln!(s, "[{name}]");
            for (k, v) in keys {
                if let Some(v) = v {
                    let _ = writeln!(s, "{k} = {v}");
                }
            }
            s.push('\n');
        }
        s
    }
}

fn prob(values: Vec<f64>) -> Result<ProbVector, String> {
    ProbVector::from_weights(&values).map_err(|e| e.to_string())
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read instance {}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        rows.push(parse_numbers(t).map_err(|m| format!("{}:{}: {m}", path.display(), i + 1))?);
    }
    Ok(rows)
}

impl ParsedConfig {
    fn reject(&self, section: &str, keys: &[&str], why: &str) -> Result<(), ConfigError> {
        for k in keys {
            if let Some(line) = self.line_of(section, k) {
                return Err(ConfigError::at(line, format!("key '{k}' {why}")));
            }
        }
        Ok(())
    }

    fn problem_err(&self, key: &'static str) -> impl Fn(String) -> ConfigError + '_ {
        move |m| self.err("problem", key, m)
    }

    fn instance_path(&self) -> Option<PathBuf> {
        self.file.problem.instance.as_ref().map(|p| if p.is_absolute() { p.clone() } else { self.base_dir.join(p) })
    }

    /// Builds the problem data, from an instance file, inline values or a
    /// random draw from the problem seed, in that order of precedence.
    pub fn context(&self) -> Result<ProblemContext, ConfigError> {
        let p = &self.file.problem;
        let mut rng = rng_from_seed(p.seed.unwrap_or(DEFAULT_SEED));
        let bad = |key: &'static str| self.problem_err(key);
        match p.kind {
            ProblemKind::Gan => {
                self.reject("problem", &["states", "actions", "gamma", "prior", "likelihood"], "does not apply to gan problems")?;
                let (target, mut initial) = if let Some(path) = self.instance_path() {
                    self.reject("problem", &["target", "n"], "conflicts with 'instance'")?;
                    let rows = read_rows(&path).map_err(bad("instance"))?;
                    if rows.is_empty() || rows.len() > 2 {
                        return Err(self.err("problem", "instance", "gan instance needs a target row and an optional initial row"));
                    }
                    let mut it = rows.into_iter();
                    let target = prob(it.next().unwrap_or_default()).map_err(bad("instance"))?;
                    let initial = it.next().map(prob).transpose().map_err(bad("instance"))?;
                    (target, initial)
                } else if let Some(t) = &p.target {
                    self.reject("problem", &["n"], "conflicts with 'target'")?;
                    (prob(t.clone()).map_err(bad("target"))?, None)
                } else {
                    let n = p.n.ok_or_else(|| ConfigError::general("gan problem needs 'instance', 'target' or 'n'"))?;
                    if n < 2 {
                        return Err(self.err("problem", "n", "n must be at least 2"));
                    }
                    (random_interior(n, &mut rng), None)
                };
                if let Some(i) = &p.initial {
                    initial = Some(prob(i.clone()).map_err(bad("initial"))?);
                }
                let n = target.len();
                let metric = p.metric.map(|m| match m {
                    MetricKind::Line => MetricSpace::line(n),
                    MetricKind::Discrete => MetricSpace::discrete(n),
                    MetricKind::Planar => MetricSpace::random_planar(n, &mut rng),
                });
                Ok(ProblemContext::Gan { target, initial, metric })
            }
            ProblemKind::Vi => {
                self.reject("problem", &["states", "actions", "gamma", "target", "initial", "metric"], "does not apply to vi problems")?;
                let model = if let Some(path) = self.instance_path() {
                    self.reject("problem", &["prior", "likelihood", "n"], "conflicts with 'instance'")?;
                    let rows = read_rows(&path).map_err(bad("instance"))?;
                    if rows.len() != 2 {
                        return Err(self.err("problem", "instance", "vi instance needs a prior row and a likelihood row"));
                    }
                    let prior = prob(rows[0].clone()).map_err(bad("instance"))?;
                    LatentModel::new(prior, rows[1].clone()).map_err(|e| bad("instance")(e.to_string()))?
                } else if p.prior.is_some() || p.likelihood.is_some() {
                    self.reject("problem", &["n"], "conflicts with inline 'prior'/'likelihood'")?;
                    let (Some(prior), Some(lik)) = (&p.prior, &p.likelihood) else {
                        return Err(ConfigError::general("vi problem needs both 'prior' and 'likelihood'"));
                    };
                    let prior = prob(prior.clone()).map_err(bad("prior"))?;
                    LatentModel::new(prior, lik.clone()).map_err(|e| bad("likelihood")(e.to_string()))?
                } else {
                    let n = p.n.ok_or_else(|| ConfigError::general("vi problem needs 'instance', 'prior'/'likelihood' or 'n'"))?;
                    if n < 2 {
                        return Err(self.err("problem", "n", "n must be at least 2"));
                    }
                    LatentModel::random(n, &mut rng)
                };
                Ok(ProblemContext::Vi { model })
            }
            ProblemKind::Rl => {
                self.reject("problem", &["n", "target", "initial", "prior", "likelihood", "metric"], "does not apply to rl problems")?;
                let mdp = if let Some(path) = self.instance_path() {
                    self.reject("problem", &["states", "actions", "gamma"], "conflicts with 'instance'")?;
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| self.err("problem", "instance", format!("cannot read instance {}: {e}", path.display())))?;
                    TabularMdp::parse(&text)
                        .map_err(|e| self.err("problem", "instance", format!("{}: {e}", path.display())))?
                } else {
                    let (Some(s), Some(a)) = (p.states, p.actions) else {
                        return Err(ConfigError::general("rl problem needs 'instance' or both 'states' and 'actions'"));
                    };
                    if s == 0 || a == 0 {
                        return Err(self.err("problem", "states", "states and actions must be positive"));
                    }
                    let gamma = p.gamma.unwrap_or(DEFAULT_GAMMA);
                    if !(0.0..1.0).contains(&gamma) {
                        return Err(self.err("problem", "gamma", format!("gamma {gamma} must lie in [0, 1)")));
                    }
                    TabularMdp::random(s, a, gamma, &mut rng)
                };
                Ok(ProblemContext::Rl { mdp })
            }
        }
    }

    fn explicit(&self, ctx: &ProblemContext) -> Result<PfdConfig, ConfigError> {
        let a = &self.file.algorithm;
        let r = &self.file.run;
        let functional = a.functional.ok_or_else(|| ConfigError::general("[algorithm] needs 'preset' or 'functional'"))?;
        let objective = match (functional, ctx) {
            (FunctionalId::JensenShannon, ProblemContext::Gan { target, .. }) => Objective::JensenShannon { target: target.clone() },
            (FunctionalId::ReverseKl, ProblemContext::Gan { target, .. }) => Objective::ReverseKl { target: target.clone() },
            (FunctionalId::Wasserstein, ProblemContext::Gan { target, metric, .. }) => Objective::Wasserstein {
                target: target.clone(),
                metric: metric.clone().unwrap_or_else(|| MetricSpace::line(target.len())),
            },
            (FunctionalId::Variational, ProblemContext::Vi { model }) => Objective::Variational { model: model.clone() },
            (FunctionalId::Reinforcement, ProblemContext::Rl { mdp }) => {
                Objective::Reinforcement { mdp: mdp.clone(), reference: StateReference::Occupancy }
            }
            _ => {
                return Err(self.err(
                    "algorithm",
                    "functional",
                    format!("functional {functional} does not apply to a {} problem", ctx.kind()),
                ))
            }
        };
        let outer_steps =
            r.outer_steps.ok_or_else(|| ConfigError::general("missing key 'outer_steps' in [run] (required without a preset)"))?;
        let estimator = EstimatorConfig {
            kind: a.estimator.unwrap_or(EstimatorKind::Exact),
            inner_steps: DEFAULT_INNER_STEPS,
            ..EstimatorConfig::default()
        };
        let lr = r.learning_rate.unwrap_or(DEFAULT_LEARNING_RATE);
        let descent = match a.descent.unwrap_or(DescentKind::Gradient) {
            DescentKind::Gradient => Descent::Gradient { learning_rate: lr, grad_kind: GradKind::ExactChainRule },
            DescentKind::ScoreFunction => Descent::Gradient {
                learning_rate: lr,
                grad_kind: GradKind::ScoreFunction { samples: DEFAULT_SCORE_SAMPLES },
            },
            DescentKind::GlobalMin => Descent::GlobalMin,
            DescentKind::Saddle => Descent::SaddleDescentAscent { policy_lr: lr, value_lr: DEFAULT_VALUE_LEARNING_RATE },
        };
        let mut cfg = PfdConfig::new(objective, estimator, descent, outer_steps);
        if let ProblemContext::Gan { initial: Some(i), .. } = ctx {
            cfg.initial = Some(i.clone());
        }
        Ok(cfg)
    }

    /// Resolves the problem, applies the preset or explicit wiring, then the
    /// `[run]` overrides, and validates the result.
    pub fn build(&self) -> Result<PfdConfig, ConfigError> {
        let ctx = self.context()?;
        let a = &self.file.algorithm;
        let mut cfg = match a.preset {
            Some(preset) => {
                self.reject("algorithm", &["functional", "estimator", "descent"], "conflicts with 'preset'")?;
                build_preset(preset, &ctx).map_err(|e| self.err("algorithm", "preset", e.to_string()))?
            }
            None => self.explicit(&ctx)?,
        };
        if let Some(reference) = a.reference {
            match &mut cfg.objective {
                Objective::Reinforcement { reference: r, .. } => {
                    *r = match reference {
                        ReferenceKind::Occupancy => StateReference::Occupancy,
                        ReferenceKind::Uniform => StateReference::Uniform,
                    }
                }
                _ => return Err(self.err("algorithm", "reference", "'reference' applies only to rl problems")),
            }
        }
        self.apply_run(&mut cfg)?;
        cfg.validate().map_err(|e| ConfigError::general(e.to_string()))?;
        Ok(cfg)
    }

    fn apply_run(&self, cfg: &mut PfdConfig) -> Result<(), ConfigError> {
        let r = &self.file.run;
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(self.err("run", key, format!("{key} must be positive and finite, got {v}")))
            }
        };
        if let Some(n) = r.outer_steps {
            cfg.outer_steps = n;
        }
        if let Some(lr) = r.learning_rate {
            let lr = positive("learning_rate", lr)?;
            match &mut cfg.descent {
                Descent::Gradient { learning_rate, .. } => *learning_rate = lr,
                Descent::SaddleDescentAscent { policy_lr, .. } => *policy_lr = lr,
                Descent::GlobalMin => {
                    return Err(self.err("run", "learning_rate", "learning_rate does not apply to global_min descent"))
                }
            }
        }
        if let Some(v) = r.value_learning_rate {
            let v = positive("value_learning_rate", v)?;
            match &mut cfg.descent {
                Descent::SaddleDescentAscent { value_lr, .. } => *value_lr = v,
                _ => return Err(self.err("run", "value_learning_rate", "value_learning_rate applies only to saddle descent")),
            }
        }
        if let Some(k) = r.score_samples {
            match &mut cfg.descent {
                Descent::Gradient { grad_kind: GradKind::ScoreFunction { samples }, .. } => *samples = k,
                _ => return Err(self.err("run", "score_samples", "score_samples applies only to score_function descent")),
            }
        }
        if let Some(h) = r.lr_half_life {
            cfg.lr_half_life = Some(positive("lr_half_life", h)?);
        }
        if let Some(k) = r.inner_steps {
            cfg.estimator.inner_steps = k;
        }
        if let Some(lr) = r.inner_learning_rate {
            cfg.estimator.learning_rate = positive("inner_learning_rate", lr)?;
        }
        if let Some(k) = r.samples {
            cfg.estimator.samples = k;
        }
        if let Some(t) = r.tolerance {
            cfg.estimator.tolerance = positive("tolerance", t)?;
        }
        cfg.seed = r.seed.unwrap_or(DEFAULT_SEED);
        cfg.diagnostics.influence_residual = r.influence_residual.unwrap_or(false);
        cfg.diagnostics.wall_time = r.wall_time.unwrap_or(false);
        Ok(())
    }
}
