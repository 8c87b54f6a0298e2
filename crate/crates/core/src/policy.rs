//! Softmax-linear policies over the environment's feature map.
//!
//! The logit of action `a` at `(h, s)` is `<w_h, phi(h, s, a)>`, with one
//! weight vector per step. Deterministic tables (one action per `(h, s)`)
//! share the same interface and are what exhaustive enumeration produces.

use nalgebra::DMatrix;
use rand::Rng;

use crate::env::{self, MdpInstance, Trajectory};
use crate::error::{PbpoError, Result};
use crate::linalg;
use crate::reward::RewardParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Softmax,
    DeterministicTable,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyParams {
    Softmax {
        horizon: usize,
        dim: usize,
        /// `[h * dim + i]`
        weights: Vec<f64>,
    },
    Deterministic {
        horizon: usize,
        states: usize,
        /// `[h * states + s]`
        actions: Vec<usize>,
    },
}

impl PolicyParams {
    /// Zero logits: the uniform policy.
    pub fn uniform(horizon: usize, dim: usize) -> Self {
        PolicyParams::Softmax {
            horizon,
            dim,
            weights: vec![0.0; horizon * dim],
        }
    }

    pub fn uniform_for(env: &MdpInstance) -> Self {
        Self::uniform(env.horizon(), env.dim())
    }

    pub fn softmax(horizon: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != horizon * dim {
            return Err(PbpoError::DimensionMismatch {
                expected: horizon * dim,
                actual: weights.len(),
            });
        }
        Ok(PolicyParams::Softmax {
            horizon,
            dim,
            weights,
        })
    }

    pub fn deterministic(horizon: usize, states: usize, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != horizon * states {
            return Err(PbpoError::DimensionMismatch {
                expected: horizon * states,
                actual: actions.len(),
            });
        }
        Ok(PolicyParams::Deterministic {
            horizon,
            states,
            actions,
        })
    }

    /// The `index`-th deterministic table in mixed-radix order over `(h, s)`.
    pub fn enumerate_deterministic(env: &MdpInstance, mut index: u128) -> Self {
        let cells = env.horizon() * env.states();
        let radix = env.actions() as u128;
        let actions = (0..cells)
            .map(|_| {
                let a = (index % radix) as usize;
                index /= radix;
                a
            })
            .collect();
        PolicyParams::Deterministic {
            horizon: env.horizon(),
            states: env.states(),
            actions,
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            PolicyParams::Softmax { .. } => PolicyKind::Softmax,
            PolicyParams::Deterministic { .. } => PolicyKind::DeterministicTable,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            PolicyParams::Softmax { horizon, .. } | PolicyParams::Deterministic { horizon, .. } => {
                *horizon
            }
        }
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            PolicyParams::Softmax { weights, .. } => Some(weights),
            PolicyParams::Deterministic { .. } => None,
        }
    }

    pub fn weights_mut(&mut self) -> Option<&mut [f64]> {
        match self {
            PolicyParams::Softmax { weights, .. } => Some(weights),
            PolicyParams::Deterministic { .. } => None,
        }
    }

    pub fn check_compatible(&self, env: &MdpInstance) -> Result<()> {
        match self {
            PolicyParams::Softmax {
                horizon,
                dim,
                weights,
            } => {
                if *horizon != env.horizon() {
                    return Err(PbpoError::DimensionMismatch {
                        expected: env.horizon(),
                        actual: *horizon,
                    });
                }
                if *dim != env.dim() || weights.len() != horizon * dim {
                    return Err(PbpoError::DimensionMismatch {
                        expected: env.dim(),
                        actual: *dim,
                    });
                }
            }
            PolicyParams::Deterministic {
                horizon,
                states,
                actions,
            } => {
                if *horizon != env.horizon() || *states != env.states() {
                    return Err(PbpoError::DimensionMismatch {
                        expected: env.horizon() * env.states(),
                        actual: horizon * states,
                    });
                }
                if actions.iter().any(|&a| a >= env.actions()) {
                    return Err(PbpoError::config("deterministic policy names an unknown action"));
                }
            }
        }
        Ok(())
    }

    /// Writes `pi(. | s)` at step `h` into `out` (length = number of actions).
    pub fn fill_action_probs(&self, env: &MdpInstance, h: usize, s: usize, out: &mut [f64]) {
        match self {
            PolicyParams::Softmax { dim, weights, .. } => {
                let w = &weights[h * dim..(h + 1) * dim];
                let feats = env.state_features(h, s);
                let mut max = f64::NEG_INFINITY;
                for (o, phi) in out.iter_mut().zip(feats.chunks(*dim)) {
                    *o = linalg::dot(w, phi);
                    max = max.max(*o);
                }
                let mut total = 0.0;
                for o in out.iter_mut() {
                    *o = (*o - max).exp();
                    total += *o;
                }
                for o in out.iter_mut() {
                    *o /= total;
                }
            }
            PolicyParams::Deterministic {
                states, actions, ..
            } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                out[actions[h * states + s]] = 1.0;
            }
        }
    }
}

pub fn action_probs(policy: &PolicyParams, env: &MdpInstance, h: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; env.actions()];
    policy.fill_action_probs(env, h, s, &mut out);
    out
}

/// `sum_h ln pi(a_h | s_h)`; the initial-state probability is excluded.
pub fn log_prob_trajectory(policy: &PolicyParams, env: &MdpInstance, tau: &Trajectory) -> Result<f64> {
    policy.check_compatible(env)?;
    if tau.states.len() != env.horizon() || tau.actions.len() != env.horizon() {
        return Err(PbpoError::Integrity("trajectory length differs from the horizon".into()));
    }
    let mut probs = vec![0.0; env.actions()];
    let mut total = 0.0;
    for h in 0..env.horizon() {
        let (s, a) = (tau.states[h], tau.actions[h]);
        if s >= env.states() || a >= env.actions() {
            return Err(PbpoError::Integrity(format!("index out of range at step {h}")));
        }
        if h + 1 < env.horizon() && env.next_state(h, s, a) != tau.states[h + 1] {
            return Err(PbpoError::Integrity(format!(
                "state at step {} does not follow the transition map",
                h + 1
            )));
        }
        policy.fill_action_probs(env, h, s, &mut probs);
        total += probs[a].ln();
    }
    Ok(total)
}

/// Exact gradient of `<stacked, E_pi[phi(tau)]>` with respect to the logit
/// weights, by the finite-horizon policy-gradient identity over occupancies.
///
/// Deterministic tables have no weights; an empty vector is returned.
pub fn value_gradient(policy: &PolicyParams, env: &MdpInstance, stacked: &[f64]) -> Vec<f64> {
    let PolicyParams::Softmax { dim, .. } = policy else {
        return Vec::new();
    };
    let probs = env::action_prob_table(env, policy);
    let occ = env::state_occupancy(env, &probs);
    let (q, v) = env::q_values(env, &probs, stacked);
    let (n_s, n_a) = (env.states(), env.actions());
    let mut grad = vec![0.0; env.horizon() * dim];
    for h in 0..env.horizon() {
        let g = &mut grad[h * dim..(h + 1) * dim];
        for s in 0..n_s {
            let d = occ[h * n_s + s];
            if d == 0.0 {
                continue;
            }
            let vs = v[h * n_s + s];
            for a in 0..n_a {
                let i = env.sa_index(h, s, a);
                let coef = d * probs[i] * (q[i] - vs);
                if coef != 0.0 {
                    linalg::axpy(coef, env.feature(h, s, a), g);
                }
            }
        }
    }
    grad
}

/// Jacobian of the expected stacked feature with respect to the logit
/// weights; row `i` is the [`value_gradient`] for the `i`-th unit vector.
pub fn feature_jacobian(policy: &PolicyParams, env: &MdpInstance) -> DMatrix<f64> {
    let n = env.stacked_dim();
    let width = policy.weights().map_or(0, <[f64]>::len);
    let mut jac = DMatrix::zeros(n, width);
    let mut e = vec![0.0; n];
    for i in 0..n {
        e[i] = 1.0;
        for (j, g) in value_gradient(policy, env, &e).into_iter().enumerate() {
            jac[(i, j)] = g;
        }
        e[i] = 0.0;
    }
    jac
}

/// Gradient of `J(pi, r) - J(pi_ref, r)` in the logit weights of `pi`. The
/// reference term does not depend on `pi`.
pub fn gap_gradient(
    policy: &PolicyParams,
    env: &MdpInstance,
    r: &RewardParams,
    pi_ref: &PolicyParams,
) -> Result<Vec<f64>> {
    env.check_reward(r)?;
    policy.check_compatible(env)?;
    pi_ref.check_compatible(env)?;
    if policy.kind() != PolicyKind::Softmax {
        return Err(PbpoError::config("gradients need a softmax policy"));
    }
    Ok(value_gradient(policy, env, r.values()))
}

/// REINFORCE estimate of [`value_gradient`] from `samples` rollouts with a
/// leave-one-out baseline.
pub fn sampled_value_gradient<R: Rng + ?Sized>(
    policy: &PolicyParams,
    env: &MdpInstance,
    stacked: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let PolicyParams::Softmax { dim, .. } = policy else {
        return Err(PbpoError::config("gradients need a softmax policy"));
    };
    let samples = samples.max(2);
    let mut scores = Vec::with_capacity(samples);
    let mut returns = Vec::with_capacity(samples);
    for _ in 0..samples {
        let tau = env::sample_trajectory(env, policy, rng)?;
        returns.push(linalg::dot(stacked, &tau.seq_feature));
        scores.push(score_function(policy, env, &tau, *dim));
    }
    let total: f64 = returns.iter().sum();
    let mut grad = vec![0.0; env.horizon() * dim];
    for (ret, score) in returns.iter().zip(&scores) {
        let baseline = (total - ret) / (samples - 1) as f64;
        linalg::axpy((ret - baseline) / samples as f64, score, &mut grad);
    }
    Ok(grad)
}

/// `grad_w ln P_pi(tau)` for a softmax policy.
fn score_function(policy: &PolicyParams, env: &MdpInstance, tau: &Trajectory, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; env.horizon() * dim];
    let mut probs = vec![0.0; env.actions()];
    for h in 0..env.horizon() {
        let s = tau.states[h];
        policy.fill_action_probs(env, h, s, &mut probs);
        let g = &mut out[h * dim..(h + 1) * dim];
        linalg::axpy(1.0, env.feature(h, s, tau.actions[h]), g);
        for (a, &p) in probs.iter().enumerate() {
            linalg::axpy(-p, env.feature(h, s, a), g);
        }
    }
    out
}

/// Gradient of the ratio-clipped surrogate
/// `sum_{h,s} d_old(h,s) sum_a pi_old(a|s) * rho(a|s) * A_old(h,s,a)`
/// with `rho = pi / pi_old`, evaluated at `policy`. A state-action pair whose
/// ratio lies outside `[1 - eps, 1 + eps]` contributes nothing.
pub fn clipped_surrogate_gradient(
    policy: &PolicyParams,
    old: &PolicyParams,
    env: &MdpInstance,
    stacked: &[f64],
    clip_epsilon: f64,
) -> Vec<f64> {
    let PolicyParams::Softmax { dim, .. } = policy else {
        return Vec::new();
    };
    let old_probs = env::action_prob_table(env, old);
    let occ = env::state_occupancy(env, &old_probs);
    let (q, v) = env::q_values(env, &old_probs, stacked);
    let probs = env::action_prob_table(env, policy);
    let (n_s, n_a) = (env.states(), env.actions());
    let mut grad = vec![0.0; env.horizon() * dim];
    let mut mean_phi = vec![0.0; *dim];
    for h in 0..env.horizon() {
        for s in 0..n_s {
            let d = occ[h * n_s + s];
            if d == 0.0 {
                continue;
            }
            mean_phi.iter_mut().for_each(|x| *x = 0.0);
            for a in 0..n_a {
                linalg::axpy(probs[env.sa_index(h, s, a)], env.feature(h, s, a), &mut mean_phi);
            }
            let vs = v[h * n_s + s];
            for a in 0..n_a {
                let i = env.sa_index(h, s, a);
                if !ratio_in_band(probs[i], old_probs[i], clip_epsilon) {
                    continue;
                }
                // d/dw of pi(a|s) * A = pi(a|s) * (phi_a - mean_phi) * A
                let coef = d * probs[i] * (q[i] - vs);
                let g = &mut grad[h * dim..(h + 1) * dim];
                linalg::axpy(coef, env.feature(h, s, a), g);
                linalg::axpy(-coef, &mean_phi, g);
            }
        }
    }
    grad
}

#[inline]
pub fn ratio_in_band(p_new: f64, p_old: f64, clip_epsilon: f64) -> bool {
    if p_old <= 0.0 {
        return false;
    }
    let ratio = p_new / p_old;
    (1.0 - clip_epsilon..=1.0 + clip_epsilon).contains(&ratio)
}

/// Sample-based counterpart of [`clipped_surrogate_gradient`]: `rollouts`
/// are drawn from `old`, advantages are reward-to-go minus the per-step
/// sample mean.
pub fn sampled_clipped_surrogate_gradient(
    policy: &PolicyParams,
    old: &PolicyParams,
    env: &MdpInstance,
    stacked: &[f64],
    clip_epsilon: f64,
    rollouts: &[Trajectory],
) -> Vec<f64> {
    let PolicyParams::Softmax { dim, .. } = policy else {
        return Vec::new();
    };
    let horizon = env.horizon();
    let layout = env.layout();
    let n = rollouts.len().max(1) as f64;
    // Reward-to-go per rollout and step.
    let to_go: Vec<Vec<f64>> = rollouts
        .iter()
        .map(|tau| {
            let mut acc = vec![0.0; horizon + 1];
            for h in (0..horizon).rev() {
                let (off, w) = layout.step_slot(h);
                let r = w * linalg::dot(&stacked[off..off + dim], env.feature(h, tau.states[h], tau.actions[h]));
                acc[h] = acc[h + 1] + r;
            }
            acc
        })
        .collect();
    let baseline: Vec<f64> = (0..horizon)
        .map(|h| to_go.iter().map(|g| g[h]).sum::<f64>() / n)
        .collect();
    let mut grad = vec![0.0; horizon * dim];
    let mut p_new = vec![0.0; env.actions()];
    let mut p_old = vec![0.0; env.actions()];
    for (tau, g) in rollouts.iter().zip(&to_go) {
        for h in 0..horizon {
            let (s, a) = (tau.states[h], tau.actions[h]);
            policy.fill_action_probs(env, h, s, &mut p_new);
            old.fill_action_probs(env, h, s, &mut p_old);
            if !ratio_in_band(p_new[a], p_old[a], clip_epsilon) {
                continue;
            }
            let coef = (p_new[a] / p_old[a]) * (g[h] - baseline[h]) / n;
            let gh = &mut grad[h * dim..(h + 1) * dim];
            linalg::axpy(coef, env.feature(h, s, a), gh);
            for (b, &p) in p_new.iter().enumerate() {
                linalg::axpy(-coef * p, env.feature(h, s, b), gh);
            }
        }
    }
    grad
}
