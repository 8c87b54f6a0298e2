use super::MdpInstance;
use crate::linalg;
use crate::policy::PolicyParams;

/// Action probabilities for every `(h, s)`, indexed like the transitions.
pub fn action_prob_table(env: &MdpInstance, policy: &PolicyParams) -> Vec<f64> {
    let a_n = env.actions();
    let mut table = vec![0.0; env.horizon() * env.states() * a_n];
    for h in 0..env.horizon() {
        for s in 0..env.states() {
            let i = env.sa_index(h, s, 0);
            policy.fill_action_probs(env, h, s, &mut table[i..i + a_n]);
        }
    }
    table
}

/// Per-step state distribution `d_h(s)`, indexed `h * states + s`.
pub fn state_occupancy(env: &MdpInstance, probs: &[f64]) -> Vec<f64> {
    let (n_s, n_a, horizon) = (env.states(), env.actions(), env.horizon());
    let mut occ = vec![0.0; horizon * n_s];
    occ[..n_s].copy_from_slice(env.initial_dist());
    for h in 0..horizon.saturating_sub(1) {
        for s in 0..n_s {
            let d = occ[h * n_s + s];
            if d == 0.0 {
                continue;
            }
            for a in 0..n_a {
                let p = probs[env.sa_index(h, s, a)];
                if p > 0.0 {
                    let next = env.next_state(h, s, a);
                    occ[(h + 1) * n_s + next] += d * p;
                }
            }
        }
    }
    occ
}

pub(crate) fn expected_features_from(env: &MdpInstance, probs: &[f64]) -> Vec<f64> {
    let layout = env.layout();
    let dim = env.dim();
    let occ = state_occupancy(env, probs);
    let mut mu = vec![0.0; layout.stacked_dim()];
    for h in 0..env.horizon() {
        let (off, w) = layout.step_slot(h);
        for s in 0..env.states() {
            let d = occ[h * env.states() + s];
            if d == 0.0 {
                continue;
            }
            for a in 0..env.actions() {
                let p = probs[env.sa_index(h, s, a)];
                if p > 0.0 {
                    linalg::axpy(w * d * p, env.feature(h, s, a), &mut mu[off..off + dim]);
                }
            }
        }
    }
    mu
}

#[inline]
fn step_reward(env: &MdpInstance, stacked: &[f64], h: usize, s: usize, a: usize) -> f64 {
    let (off, w) = env.layout().step_slot(h);
    w * linalg::dot(&stacked[off..off + env.dim()], env.feature(h, s, a))
}

/// Reward-to-go `Q_h(s, a)` and `V_h(s)` under the policy whose action table
/// is `probs`, for the linear reward with stacked parameters `stacked`.
pub fn q_values(env: &MdpInstance, probs: &[f64], stacked: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n_s, n_a, horizon) = (env.states(), env.actions(), env.horizon());
    let mut q = vec![0.0; horizon * n_s * n_a];
    let mut v = vec![0.0; horizon * n_s];
    for h in (0..horizon).rev() {
        for s in 0..n_s {
            let mut vs = 0.0;
            for a in 0..n_a {
                let mut qa = step_reward(env, stacked, h, s, a);
                if h + 1 < horizon {
                    qa += v[(h + 1) * n_s + env.next_state(h, s, a)];
                }
                let i = env.sa_index(h, s, a);
                q[i] = qa;
                vs += probs[i] * qa;
            }
            v[h * n_s + s] = vs;
        }
    }
    (q, v)
}

pub(crate) fn greedy_table(env: &MdpInstance, stacked: &[f64]) -> PolicyParams {
    let (n_s, n_a, horizon) = (env.states(), env.actions(), env.horizon());
    let mut v_next = vec![0.0; n_s];
    let mut table = vec![0usize; horizon * n_s];
    for h in (0..horizon).rev() {
        let mut v_here = vec![0.0; n_s];
        for s in 0..n_s {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..n_a {
                let mut qa = step_reward(env, stacked, h, s, a);
                if h + 1 < horizon {
                    qa += v_next[env.next_state(h, s, a)];
                }
                if qa > best {
                    best = qa;
                    best_a = a;
                }
            }
            table[h * n_s + s] = best_a;
            v_here[s] = best;
        }
        v_next = v_here;
    }
    PolicyParams::Deterministic {
        horizon,
        states: n_s,
        actions: table,
    }
}
