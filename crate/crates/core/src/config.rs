//! Flat `key = value` experiment configuration.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Unknown
//! and duplicate keys are errors, and every error names the offending key.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::env::{GeneratorKind, GeneratorSpec};
use crate::error::{PbpoError, Result};
use crate::harness::{Method, RunConfig, Variation};
use crate::layout::Granularity;
use crate::minmax::{GradientEstimator, SolverMode};

/// Every accepted key with its default (`None` marks a required key).
pub const SCHEMA: &[(&str, Option<&str>)] = &[
    ("env.generator", None),
    ("env.d", None),
    ("env.H", Some("1")),
    ("env.actions", Some("10")),
    ("env.states", Some("")),
    ("env.B", Some("1")),
    ("env.granularity", Some("sequence")),
    ("loop.K", None),
    ("loop.batch", Some("1")),
    ("loop.delta", Some("0.1")),
    ("loop.c_zeta", Some("1")),
    ("loop.lambda", Some("1")),
    ("loop.record_timing", Some("false")),
    ("solver.mode", Some("constrained")),
    ("solver.beta", Some("1")),
    ("solver.clip_epsilon", Some("0.2")),
    ("solver.outer_steps", Some("300")),
    ("solver.inner_steps", Some("50")),
    ("solver.policy_step", Some("0.2")),
    ("solver.reward_step", Some("0.05")),
    ("solver.tolerance", Some("1e-5")),
    ("solver.policy_epochs", Some("4")),
    ("solver.trace", Some("false")),
    ("policy.estimator", Some("exact")),
    ("policy.samples", Some("32")),
    ("explorer.restarts", Some("5")),
    ("explorer.steps", Some("500")),
    ("explorer.step_size", Some("0.1")),
    ("explorer.enumeration_cap", Some("4096")),
    ("method", Some("pbpo")),
    ("seed", None),
    ("suite.seeds", Some("")),
    ("suite.d", Some("")),
    ("suite.H", Some("")),
    ("suite.K", Some("")),
    ("suite.method", Some("")),
    ("suite.beta", Some("")),
];

/// States per step used when `env.states` is not given.
pub const DEFAULT_CHAIN_STATES: usize = 3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuitePlan {
    pub variations: Vec<Variation>,
    /// Empty means "the run seed and the two following it".
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub suite: SuitePlan,
}

impl ExperimentConfig {
    pub fn suite_seeds(&self) -> Vec<u64> {
        if self.suite.seeds.is_empty() {
            (0..3).map(|i| self.run.seed.wrapping_add(i)).collect()
        } else {
            self.suite.seeds.clone()
        }
    }
}

fn key_error(key: &str, msg: impl std::fmt::Display) -> PbpoError {
    PbpoError::config(format!("{key}: {msg}"))
}

fn known(key: &str) -> bool {
    SCHEMA.iter().any(|(k, _)| *k == key)
}

fn split_pair(text: &str, key_ctx: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| key_error(key_ctx, format!("expected 'key = value', got '{text}'")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(key_error(key_ctx, "empty key"));
    }
    if !known(k) {
        return Err(key_error(k, "unknown key"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// Raw key-value map from config text.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = split_pair(line, &format!("line {}", i + 1))?;
        if out.insert(k.clone(), v).is_some() {
            return Err(key_error(&k, "duplicate key"));
        }
    }
    Ok(out)
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn raw(&self, key: &str) -> Result<&str> {
        if let Some(v) = self.0.get(key) {
            return Ok(v);
        }
        match SCHEMA.iter().find(|(k, _)| *k == key) {
            Some((_, Some(default))) => Ok(default),
            Some((_, None)) => Err(key_error(key, "missing required key")),
            None => Err(key_error(key, "unknown key")),
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key)?;
        raw.parse::<T>().map_err(|e| key_error(key, format!("cannot parse '{raw}': {e}")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|e| key_error(key, format!("cannot parse '{s}': {e}"))))
            .collect()
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let v: f64 = self.get(key)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(key_error(key, format!("must be positive and finite, got {v}")));
        }
        Ok(v)
    }

    fn count(&self, key: &str) -> Result<usize> {
        let v: usize = self.get(key)?;
        if v == 0 {
            return Err(key_error(key, "must be at least 1"));
        }
        Ok(v)
    }
}

/// Parses config text, applies `key=value` overrides (later wins), fills
/// defaults and validates every field.
pub fn parse_experiment(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut map = parse_pairs(text)?;
    for o in overrides {
        let (k, v) = split_pair(o, "override")?;
        map.insert(k, v);
    }
    let vals = Values(map);

    let kind: GeneratorKind = vals.get("env.generator")?;
    let horizon = vals.count("env.H")?;
    let states = match vals.raw("env.states")? {
        "" if kind == GeneratorKind::Bandit => 1,
        "" => DEFAULT_CHAIN_STATES,
        _ => vals.count("env.states")?,
    };
    let env = GeneratorSpec {
        kind,
        dim: vals.count("env.d")?,
        horizon,
        actions: vals.count("env.actions")?,
        states,
        bound: vals.positive("env.B")?,
        granularity: vals.get::<Granularity>("env.granularity")?,
    };
    if kind == GeneratorKind::Bandit && horizon != 1 {
        return Err(key_error("env.H", "the bandit generator requires H = 1"));
    }
    if kind == GeneratorKind::Bandit && states != 1 {
        return Err(key_error("env.states", "the bandit generator requires a single state"));
    }
    if kind == GeneratorKind::HardDirection && env.dim < 2 {
        return Err(key_error("env.d", "the hard-direction generator needs d >= 2"));
    }

    let mut run = RunConfig::new(env, vals.count("loop.K")?, vals.get("seed")?);
    run.batch = vals.count("loop.batch")?;
    run.delta = vals.get("loop.delta")?;
    if !(run.delta > 0.0 && run.delta <= 1.0) {
        return Err(key_error("loop.delta", format!("must lie in (0, 1], got {}", run.delta)));
    }
    run.c_zeta = vals.positive("loop.c_zeta")?;
    run.lambda = vals.positive("loop.lambda")?;
    run.record_timing = vals.get("loop.record_timing")?;
    run.method = vals.get("method")?;

    let s = &mut run.solver;
    s.mode = vals.get::<SolverMode>("solver.mode")?;
    s.beta = vals.get("solver.beta")?;
    if !(s.beta >= 0.0 && s.beta.is_finite()) {
        return Err(key_error("solver.beta", format!("must be finite and >= 0, got {}", s.beta)));
    }
    s.clip_epsilon = vals.get("solver.clip_epsilon")?;
    if !(s.clip_epsilon > 0.0 && s.clip_epsilon < 1.0) {
        return Err(key_error(
            "solver.clip_epsilon",
            format!("must lie in (0, 1), got {}", s.clip_epsilon),
        ));
    }
    s.outer_steps = vals.count("solver.outer_steps")?;
    s.inner_steps = vals.count("solver.inner_steps")?;
    s.policy_step = vals.positive("solver.policy_step")?;
    s.reward_step = vals.positive("solver.reward_step")?;
    s.tolerance = vals.positive("solver.tolerance")?;
    s.policy_epochs = vals.count("solver.policy_epochs")?;
    s.record_trace = vals.get("solver.trace")?;
    s.estimator = match vals.raw("policy.estimator")? {
        "exact" => GradientEstimator::Exact,
        "sampled" => GradientEstimator::Sampled(vals.count("policy.samples")?),
        other => return Err(key_error("policy.estimator", format!("expected 'exact' or 'sampled', got '{other}'"))),
    };

    let e = &mut run.enhancer;
    e.restarts = vals.count("explorer.restarts")?;
    e.steps = vals.count("explorer.steps")?;
    e.step_size = vals.positive("explorer.step_size")?;
    e.enumeration_cap = vals.get("explorer.enumeration_cap")?;

    run.validate()?;

    let mut suite = SuitePlan {
        seeds: vals.list("suite.seeds")?,
        ..SuitePlan::default()
    };
    for d in vals.list::<usize>("suite.d")? {
        if d == 0 || (kind == GeneratorKind::HardDirection && d < 2) {
            return Err(key_error("suite.d", format!("invalid dimension {d}")));
        }
        suite.variations.push(Variation::Dim(d));
    }
    for h in vals.list::<usize>("suite.H")? {
        if h == 0 || (kind == GeneratorKind::Bandit && h != 1) {
            return Err(key_error("suite.H", format!("invalid horizon {h} for this generator")));
        }
        suite.variations.push(Variation::Horizon(h));
    }
    for k in vals.list::<usize>("suite.K")? {
        if k == 0 {
            return Err(key_error("suite.K", "iteration counts must be at least 1"));
        }
        suite.variations.push(Variation::Iterations(k));
    }
    for m in vals.list::<Method>("suite.method")? {
        suite.variations.push(Variation::Method(m));
    }
    for b in vals.list::<f64>("suite.beta")? {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(key_error("suite.beta", format!("must be finite and >= 0, got {b}")));
        }
        suite.variations.push(Variation::Beta(b));
    }
    if !suite.seeds.is_empty() && suite.seeds.len() < 3 {
        return Err(key_error("suite.seeds", "a suite needs at least 3 seeds"));
    }
    Ok(ExperimentConfig { run, suite })
}

/// Validated [`RunConfig`] from config text plus overrides.
pub fn parse_and_validate(text: &str, overrides: &[String]) -> Result<RunConfig> {
    parse_experiment(text, overrides).map(|c| c.run)
}

/// Reads and parses a config file.
pub fn load_experiment(path: &std::path::Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PbpoError::io(format!("reading config {}", path.display()), e))?;
    parse_experiment(&text, overrides)
}
