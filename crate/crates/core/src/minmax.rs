//! Exploitation step: `argmax_pi min_{r in R(D)} J(pi, r) - J(pi_ref, r)`.
//!
//! Two modes: an alternating scheme that certifies every outer iterate with
//! the exact inner minimum over the confidence set, and the Lagrangian
//! (Stackelberg) relaxation where the reward follows by projected gradient
//! descent on `gap - beta * LL` and the policy leads with ratio-clipped
//! ascent steps.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::env::{self, MdpInstance};
use crate::error::{PbpoError, Result};
use crate::linalg;
use crate::policy::{self, PolicyParams};
use crate::preference::PreferenceDataset;
use crate::reward::{self, ConfidenceSetSpec, InnerSolution, RewardParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    ConstrainedExact,
    StackelbergLagrangian,
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMode::ConstrainedExact => "constrained",
            SolverMode::StackelbergLagrangian => "stackelberg",
        })
    }
}

impl FromStr for SolverMode {
    type Err = PbpoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constrained" | "ConstrainedExact" => Ok(SolverMode::ConstrainedExact),
            "stackelberg" | "StackelbergLagrangian" => Ok(SolverMode::StackelbergLagrangian),
            other => Err(PbpoError::config(format!("unknown solver mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientEstimator {
    /// Occupancy-measure dynamic programming.
    Exact,
    /// REINFORCE-style estimate from this many rollouts per step.
    Sampled(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub mode: SolverMode,
    pub beta: f64,
    pub clip_epsilon: f64,
    pub outer_steps: usize,
    pub inner_steps: usize,
    pub policy_step: f64,
    pub reward_step: f64,
    pub tolerance: f64,
    /// Clipped ascent sub-steps per Stackelberg outer step.
    pub policy_epochs: usize,
    /// Per-step logit weight norms are projected onto this radius.
    pub weight_radius: f64,
    pub estimator: GradientEstimator,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: SolverMode::ConstrainedExact,
            beta: 1.0,
            clip_epsilon: 0.2,
            outer_steps: 300,
            inner_steps: 50,
            policy_step: 0.2,
            reward_step: 0.05,
            tolerance: 1e-5,
            policy_epochs: 4,
            weight_radius: 100.0,
            estimator: GradientEstimator::Exact,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(PbpoError::config("solver.beta must be a finite value >= 0"));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(PbpoError::config("solver.clip_epsilon must lie in (0, 1)"));
        }
        if self.outer_steps == 0 || self.inner_steps == 0 || self.policy_epochs == 0 {
            return Err(PbpoError::config("solver step counts must be at least 1"));
        }
        for (name, v) in [
            ("solver.policy_step", self.policy_step),
            ("solver.reward_step", self.reward_step),
            ("solver.tolerance", self.tolerance),
            ("solver.weight_radius", self.weight_radius),
        ] {
            if !(v > 0.0) {
                return Err(PbpoError::config(format!("{name} must be positive")));
            }
        }
        if let GradientEstimator::Sampled(0) = self.estimator {
            return Err(PbpoError::config("sampled estimator needs at least one rollout"));
        }
        Ok(())
    }
}

/// One outer step of a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub gap: f64,
    pub log_likelihood: f64,
    /// `LL - (mle_value - zeta)` for the constrained mode; `LL - mle_value`
    /// when no confidence set is involved.
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct MinMaxSolution {
    pub policy: PolicyParams,
    pub reward: RewardParams,
    /// Certified `J(pi, r) - J(pi_ref, r)` at the returned pair.
    pub gap: f64,
    /// Multiplier of the likelihood constraint at the returned pair
    /// (constrained mode only); the `beta` matching this `zeta`.
    pub ll_multiplier: f64,
    pub converged: bool,
    pub trace: Vec<TraceRecord>,
}

fn ensure_softmax(pi_ref: &PolicyParams) -> Result<()> {
    match pi_ref {
        PolicyParams::Softmax { .. } => Ok(()),
        PolicyParams::Deterministic { .. } => Err(PbpoError::config(
            "the reference policy must be a softmax policy to be optimized",
        )),
    }
}

fn ascent_direction<R: Rng + ?Sized>(
    pi: &PolicyParams,
    env: &MdpInstance,
    stacked: &[f64],
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match cfg.estimator {
        GradientEstimator::Exact => Ok(policy::value_gradient(pi, env, stacked)),
        GradientEstimator::Sampled(n) => policy::sampled_value_gradient(pi, env, stacked, n, rng),
    }
}

fn step_policy(pi: &PolicyParams, dir: &[f64], eta: f64, env: &MdpInstance, cfg: &SolverConfig) -> Result<PolicyParams> {
    let mut next = pi.clone();
    let w = next.weights_mut().expect("softmax policy");
    linalg::axpy(eta, dir, w);
    if w.iter().any(|x| !x.is_finite()) {
        return Err(PbpoError::Diverged(format!("policy weights became non-finite (step size {eta})")));
    }
    linalg::project_blocks(w, env.dim(), cfg.weight_radius);
    Ok(next)
}

fn converged_over_window(gaps: &[f64], tolerance: f64) -> bool {
    const WINDOW: usize = 10;
    gaps.len() > WINDOW && (gaps[gaps.len() - 1] - gaps[gaps.len() - 1 - WINDOW]).abs() < tolerance
}

/// Smallest step size worth trying before declaring a stationary point.
const MIN_STEP: f64 = 1e-12;

struct Ascent {
    policy: PolicyParams,
    best: InnerSolution,
    converged: bool,
    trace: Vec<TraceRecord>,
}

/// Fraction of the certified value used as the first active-set width after
/// a rejected step.
const EPS_FRACTION: f64 = 0.25;

/// Monotone ascent on a certified value. Each outer step tries one gradient
/// step against the reward that certifies the current policy; improving
/// trials are accepted and double the step size.
///
/// A rejected subgradient step usually means several rewards are nearly
/// worst-case. `refine(pi, value, eps)` then supplies the steepest ascent
/// direction over the eps-active rewards; further rejections halve both the
/// step size and `eps`. Without a refinement rejected steps just halve the
/// step size.
#[allow(clippy::too_many_arguments)]
fn certified_ascent<R, F, G>(
    env: &MdpInstance,
    start: PolicyParams,
    start_value: InnerSolution,
    start_dir: Vec<f64>,
    cfg: &SolverConfig,
    rng: &mut R,
    mut certify: F,
    mut refine: G,
    mut trace_of: impl FnMut(usize, &InnerSolution) -> TraceRecord,
) -> Result<Ascent>
where
    R: Rng + ?Sized,
    F: FnMut(&PolicyParams) -> Result<InnerSolution>,
    G: FnMut(&PolicyParams, &InnerSolution, f64) -> Result<Option<Vec<f64>>>,
{
    let mut trace = Vec::new();
    if cfg.record_trace {
        trace.push(trace_of(0, &start_value));
    }
    let mut policy = start;
    let mut best = start_value;
    let mut dir = start_dir;
    let mut eta = cfg.policy_step;
    let mut history = vec![best.value];
    let mut converged = false;
    let mut eps: Option<f64> = None;
    for step in 1..cfg.outer_steps {
        if eta < MIN_STEP || linalg::max_abs(&dir) == 0.0 {
            converged = true;
            break;
        }
        let trial = step_policy(&policy, &dir, eta, env, cfg)?;
        let probe = certify(&trial)?;
        if !probe.value.is_finite() {
            return Err(PbpoError::Diverged("certified gap is not finite".into()));
        }
        if cfg.record_trace {
            trace.push(trace_of(step, &probe));
        }
        if probe.value > best.value {
            dir = ascent_direction(&trial, env, probe.params.values(), cfg, rng)?;
            policy = trial;
            best = probe;
            eta *= 2.0;
            eps = None;
        } else {
            let mut next = match eps {
                Some(e) => 0.5 * e,
                None => EPS_FRACTION * best.value.abs().max(cfg.tolerance),
            };
            let refined = loop {
                match refine(&policy, &best, next)? {
                    Some(d) if linalg::max_abs(&d) == 0.0 && next > 1e-3 * cfg.tolerance => next *= 0.5,
                    other => break other,
                }
            };
            match refined {
                Some(d) => {
                    // The first refined direction keeps the step size.
                    if eps.is_some() {
                        eta *= 0.5;
                    }
                    dir = d;
                    eps = Some(next);
                }
                None => eta *= 0.5,
            }
        }
        history.push(best.value);
        if converged_over_window(&history, cfg.tolerance) {
            converged = true;
            break;
        }
    }
    Ok(Ascent {
        policy,
        best,
        converged,
        trace,
    })
}

/// Exact alternating solve: every outer iterate is certified by the exact
/// inner minimum over the confidence set, and the policy ascends against the
/// worst-case reward of its current iterate.
///
/// The certified value is zero at the reference policy and not
/// differentiable there; the first direction is the best first-order
/// certified one, `J' theta0` with `theta0` minimizing `|J' theta|` over the
/// set. When that minimum is zero no direction is certifiably improving and
/// the reference policy is returned.
pub fn solve_constrained<R: Rng + ?Sized>(
    env: &MdpInstance,
    data: &PreferenceDataset,
    spec: &ConfidenceSetSpec,
    pi_ref: &PolicyParams,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<MinMaxSolution> {
    ensure_softmax(pi_ref)?;
    pi_ref.check_compatible(env)?;
    env.check_reward(&spec.mle_params)?;
    let stats = data.stats();
    let mu_ref = env::expected_features(env, pi_ref)?;
    let floor = spec.ll_floor();
    let at_ref = InnerSolution {
        value: 0.0,
        params: spec.mle_params.clone(),
        ll_multiplier: 0.0,
        converged: true,
    };

    let jac = policy::feature_jacobian(pi_ref, env);
    let metric = &jac * jac.transpose();
    let (rate, theta0) = reward::min_quadratic_over_confidence_set(&metric, stats, spec)?;
    let trace_of = |step: usize, s: &InnerSolution| {
        let ll = stats.log_likelihood(s.params.values());
        TraceRecord {
            step,
            gap: s.value,
            log_likelihood: ll,
            slack: ll - floor,
        }
    };
    if rate <= 1e-14 {
        let trace = if cfg.record_trace { vec![trace_of(0, &at_ref)] } else { Vec::new() };
        return Ok(MinMaxSolution {
            policy: pi_ref.clone(),
            reward: at_ref.params,
            gap: 0.0,
            ll_multiplier: 0.0,
            converged: true,
            trace,
        });
    }
    let dir = ascent_direction(pi_ref, env, theta0.values(), cfg, rng)?;
    let certify = |p: &PolicyParams| {
        let mu = env::expected_features(env, p)?;
        reward::min_linear_over_confidence_set(&linalg::sub(&mu, &mu_ref), stats, spec)
    };
    let refine = |p: &PolicyParams, s: &InnerSolution, eps: f64| {
        let jac = policy::feature_jacobian(p, env);
        let metric = &jac * jac.transpose();
        let gap = linalg::sub(&env::expected_features(env, p)?, &mu_ref);
        let (_, theta) = reward::min_quadratic_over_active_set(&metric, stats, spec, &gap, s.value + eps, &s.params)?;
        Ok(Some(policy::value_gradient(p, env, theta.values())))
    };
    let out = certified_ascent(env, pi_ref.clone(), at_ref, dir, cfg, rng, certify, refine, trace_of)?;
    Ok(MinMaxSolution {
        policy: out.policy,
        gap: out.best.value,
        ll_multiplier: out.best.ll_multiplier,
        reward: out.best.params,
        converged: out.converged,
        trace: out.trace,
    })
}

/// Projected gradient descent on `gap(pi, r) - beta * LL(r)` over the
/// bounded reward class, warm-started at `r`.
fn reward_descent(
    r: &mut [f64],
    gap: &[f64],
    data: &PreferenceDataset,
    beta: f64,
    steps: usize,
    cfg: &SolverConfig,
    block_dim: usize,
    bound: f64,
) {
    let stats = data.stats();
    let lipschitz = beta * stats.gradient_lipschitz();
    let eta = if lipschitz > 0.0 {
        cfg.reward_step.min(1.0 / lipschitz)
    } else {
        cfg.reward_step
    };
    let mut ll_grad = vec![0.0; r.len()];
    for _ in 0..steps {
        if beta > 0.0 {
            stats.log_likelihood_grad(r, &mut ll_grad);
        }
        for i in 0..r.len() {
            r[i] -= eta * (gap[i] - beta * ll_grad[i]);
        }
        linalg::project_blocks(r, block_dim, bound);
    }
}

/// Value of the follower objective `gap(pi, r) - beta * LL(r)`.
pub fn stackelberg_objective(gap: &[f64], r: &RewardParams, data: &PreferenceDataset, beta: f64) -> f64 {
    linalg::dot(gap, r.values()) - beta * data.stats().log_likelihood(r.values())
}

/// Gradient of [`stackelberg_objective`] in the reward parameters.
pub fn stackelberg_reward_gradient(gap: &[f64], r: &RewardParams, data: &PreferenceDataset, beta: f64) -> Vec<f64> {
    let mut ll_grad = vec![0.0; gap.len()];
    data.stats().log_likelihood_grad(r.values(), &mut ll_grad);
    gap.iter().zip(&ll_grad).map(|(g, l)| g - beta * l).collect()
}

/// Lagrangian relaxation solved by alternating descent (reward, follower)
/// and clipped ascent (policy, leader).
///
/// `initial_reward` warm-starts the follower; zero when absent. The returned
/// gap is certified by a fresh, longer reward descent at the final policy.
pub fn stackelberg_solve<R: Rng + ?Sized>(
    env: &MdpInstance,
    data: &PreferenceDataset,
    pi_ref: &PolicyParams,
    initial_reward: Option<&RewardParams>,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<MinMaxSolution> {
    ensure_softmax(pi_ref)?;
    pi_ref.check_compatible(env)?;
    let layout = env.layout();
    let bound = env.bound();
    let mu_ref = env::expected_features(env, pi_ref)?;
    let mut r: Vec<f64> = match initial_reward {
        Some(r0) => {
            env.check_reward(r0)?;
            r0.values().to_vec()
        }
        None => vec![0.0; layout.stacked_dim()],
    };
    let limit = 10.0 * bound * (env.horizon() as f64).sqrt();
    let mle_ll = initial_reward.map(|r0| data.stats().log_likelihood(r0.values()));

    let mut pi = pi_ref.clone();
    let mut gaps = Vec::with_capacity(cfg.outer_steps);
    let mut trace = Vec::new();
    let mut converged = false;
    for step in 0..cfg.outer_steps {
        let mu = env::expected_features(env, &pi)?;
        let gap_vec = linalg::sub(&mu, &mu_ref);
        reward_descent(&mut r, &gap_vec, data, cfg.beta, cfg.inner_steps, cfg, layout.dim, bound);

        let old = pi.clone();
        let rollouts = match cfg.estimator {
            GradientEstimator::Exact => Vec::new(),
            GradientEstimator::Sampled(n) => (0..n)
                .map(|_| env::sample_trajectory(env, &old, rng))
                .collect::<Result<Vec<_>>>()?,
        };
        for _ in 0..cfg.policy_epochs {
            let grad = match cfg.estimator {
                GradientEstimator::Exact => {
                    policy::clipped_surrogate_gradient(&pi, &old, env, &r, cfg.clip_epsilon)
                }
                GradientEstimator::Sampled(_) => policy::sampled_clipped_surrogate_gradient(
                    &pi,
                    &old,
                    env,
                    &r,
                    cfg.clip_epsilon,
                    &rollouts,
                ),
            };
            let w = pi.weights_mut().expect("softmax policy");
            linalg::axpy(cfg.policy_step, &grad, w);
            linalg::project_blocks(w, env.dim(), cfg.weight_radius);
        }
        if pi.weights().expect("softmax policy").iter().any(|x| !x.is_finite()) {
            return Err(PbpoError::Diverged("policy weights became non-finite".into()));
        }

        let mu = env::expected_features(env, &pi)?;
        let gap = linalg::dot(&linalg::sub(&mu, &mu_ref), &r);
        if !gap.is_finite() || gap.abs() > limit {
            return Err(PbpoError::Diverged(format!(
                "gap {gap} exceeds the divergence limit {limit} at outer step {step}"
            )));
        }
        if cfg.record_trace {
            let ll = data.stats().log_likelihood(&r);
            trace.push(TraceRecord {
                step,
                gap,
                log_likelihood: ll,
                slack: mle_ll.map_or(f64::NAN, |m| ll - m),
            });
        }
        gaps.push(gap);
        if converged_over_window(&gaps, cfg.tolerance) {
            converged = true;
            break;
        }
    }

    let mu = env::expected_features(env, &pi)?;
    let gap_vec = linalg::sub(&mu, &mu_ref);
    let mut certified = r.clone();
    reward_descent(&mut certified, &gap_vec, data, cfg.beta, 10 * cfg.inner_steps, cfg, layout.dim, bound);
    let reward = RewardParams::projected(layout, bound, certified)?;
    let gap = linalg::dot(&gap_vec, reward.values());
    if !gap.is_finite() {
        return Err(PbpoError::Diverged("certified gap is not finite".into()));
    }
    Ok(MinMaxSolution {
        policy: pi,
        reward,
        gap,
        ll_multiplier: cfg.beta,
        converged,
        trace,
    })
}

/// Ascent on `J(pi, r) - J(pi_ref, r)` for a fixed point-estimate reward,
/// starting from `pi_ref`; the exploitation step of the pipeline baseline.
pub fn ascend_point_estimate<R: Rng + ?Sized>(
    env: &MdpInstance,
    r: &RewardParams,
    pi_ref: &PolicyParams,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<MinMaxSolution> {
    ensure_softmax(pi_ref)?;
    env.check_reward(r)?;
    let mu_ref = env::expected_features(env, pi_ref)?;
    let start = InnerSolution {
        value: 0.0,
        params: r.clone(),
        ll_multiplier: 0.0,
        converged: true,
    };
    let dir = ascent_direction(pi_ref, env, r.values(), cfg, rng)?;
    let evaluate = |p: &PolicyParams| {
        let mu = env::expected_features(env, p)?;
        Ok(InnerSolution {
            value: linalg::dot(&linalg::sub(&mu, &mu_ref), r.values()),
            params: r.clone(),
            ll_multiplier: 0.0,
            converged: true,
        })
    };
    let trace_of = |step: usize, s: &InnerSolution| TraceRecord {
        step,
        gap: s.value,
        log_likelihood: f64::NAN,
        slack: f64::NAN,
    };
    let no_refine = |_: &PolicyParams, _: &InnerSolution, _: f64| Ok(None);
    let out = certified_ascent(env, pi_ref.clone(), start, dir, cfg, rng, evaluate, no_refine, trace_of)?;
    Ok(MinMaxSolution {
        policy: out.policy,
        reward: r.clone(),
        gap: out.best.value,
        ll_multiplier: 0.0,
        converged: out.converged,
        trace: out.trace,
    })
}
