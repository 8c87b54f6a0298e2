//! Finite-horizon deterministic MDPs on a layered state space, with exact
//! dynamic-programming evaluation.
//!
//! States are indexed per step: at every step `h` there are `states`
//! abstract states, and the transition map sends `(h, s, a)` to a state of
//! step `h + 1`. Features live on `(h, s, a)` triples.

mod dp;
pub mod generators;

use rand::Rng;

use crate::error::{PbpoError, Result};
use crate::layout::{FeatureLayout, Granularity};
use crate::linalg;
use crate::policy::PolicyParams;
use crate::reward::RewardParams;

pub use dp::{action_prob_table, q_values, state_occupancy};
pub(crate) use dp::greedy_table;
pub use generators::{generate, GeneratorKind, GeneratorSpec};

const FEATURE_NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MdpInstance {
    states: usize,
    actions: usize,
    horizon: usize,
    dim: usize,
    initial_dist: Vec<f64>,
    /// `[(h * states + s) * actions + a]` -> next state
    transitions: Vec<usize>,
    /// `[((h * states + s) * actions + a) * dim + i]`
    features: Vec<f64>,
    granularity: Granularity,
    true_params: RewardParams,
    bound: f64,
}

/// Raw pieces of an instance, validated by [`MdpInstance::new`].
#[derive(Debug, Clone)]
pub struct MdpParts {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub dim: usize,
    pub initial_dist: Vec<f64>,
    pub transitions: Vec<usize>,
    pub features: Vec<f64>,
    pub granularity: Granularity,
    pub true_params: Vec<f64>,
    pub bound: f64,
}

impl MdpInstance {
    pub fn new(parts: MdpParts) -> Result<Self> {
        let MdpParts {
            states,
            actions,
            horizon,
            dim,
            initial_dist,
            transitions,
            features,
            granularity,
            true_params,
            bound,
        } = parts;
        if states == 0 || actions == 0 || horizon == 0 || dim == 0 {
            return Err(PbpoError::config("states, actions, horizon and dim must be positive"));
        }
        if initial_dist.len() != states {
            return Err(PbpoError::DimensionMismatch {
                expected: states,
                actual: initial_dist.len(),
            });
        }
        if initial_dist.iter().any(|&p| !(p >= 0.0)) {
            return Err(PbpoError::config("initial distribution has a negative entry"));
        }
        let total: f64 = initial_dist.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(PbpoError::config(format!(
                "initial distribution sums to {total}, not 1"
            )));
        }
        let n_sa = horizon * states * actions;
        if transitions.len() != n_sa {
            return Err(PbpoError::DimensionMismatch {
                expected: n_sa,
                actual: transitions.len(),
            });
        }
        if let Some(&bad) = transitions.iter().find(|&&t| t >= states) {
            return Err(PbpoError::config(format!("transition to unknown state {bad}")));
        }
        if features.len() != n_sa * dim {
            return Err(PbpoError::DimensionMismatch {
                expected: n_sa * dim,
                actual: features.len(),
            });
        }
        for (i, phi) in features.chunks(dim).enumerate() {
            let n = linalg::norm(phi);
            if !(n <= 1.0 + FEATURE_NORM_SLACK) {
                return Err(PbpoError::config(format!(
                    "feature vector {i} has norm {n} > 1"
                )));
            }
        }
        let layout = FeatureLayout::new(granularity, dim, horizon);
        let true_params = RewardParams::new(layout, bound, true_params)?;
        Ok(MdpInstance {
            states,
            actions,
            horizon,
            dim,
            initial_dist,
            transitions,
            features,
            granularity,
            true_params,
            bound,
        })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.granularity, self.dim, self.horizon)
    }

    /// Dimension of trajectory features and stacked reward parameters.
    pub fn stacked_dim(&self) -> usize {
        self.layout().stacked_dim()
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn true_params(&self) -> &RewardParams {
        &self.true_params
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    #[inline]
    pub(crate) fn sa_index(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    #[inline]
    pub fn next_state(&self, h: usize, s: usize, a: usize) -> usize {
        self.transitions[self.sa_index(h, s, a)]
    }

    #[inline]
    pub fn feature(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let i = self.sa_index(h, s, a) * self.dim;
        &self.features[i..i + self.dim]
    }

    /// Features of all actions at `(h, s)`, laid out action-major.
    #[inline]
    pub fn state_features(&self, h: usize, s: usize) -> &[f64] {
        let i = self.sa_index(h, s, 0) * self.dim;
        &self.features[i..i + self.actions * self.dim]
    }

    /// Number of deterministic per-(step, state) policies, saturating.
    pub fn deterministic_policy_count(&self) -> u128 {
        let cells = (self.horizon * self.states) as u32;
        (self.actions as u128).checked_pow(cells).unwrap_or(u128::MAX)
    }

    /// Stacked trajectory feature of a state/action sequence.
    pub fn trajectory_feature(&self, states: &[usize], actions: &[usize]) -> Vec<f64> {
        let layout = self.layout();
        let mut out = vec![0.0; layout.stacked_dim()];
        for h in 0..self.horizon {
            let (off, w) = layout.step_slot(h);
            linalg::axpy(w, self.feature(h, states[h], actions[h]), &mut out[off..off + self.dim]);
        }
        out
    }

    pub(crate) fn check_reward(&self, r: &RewardParams) -> Result<()> {
        if r.layout() != self.layout() {
            if r.granularity() != self.granularity {
                return Err(PbpoError::GranularityMismatch);
            }
            return Err(PbpoError::DimensionMismatch {
                expected: self.stacked_dim(),
                actual: r.values().len(),
            });
        }
        Ok(())
    }
}

/// One episode and its stacked trajectory feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub seq_feature: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Rebuilds a trajectory from its actions and initial state, following
    /// the deterministic transitions.
    pub fn from_actions(env: &MdpInstance, initial_state: usize, actions: &[usize]) -> Result<Self> {
        if actions.len() != env.horizon() {
            return Err(PbpoError::DimensionMismatch {
                expected: env.horizon(),
                actual: actions.len(),
            });
        }
        if initial_state >= env.states() || actions.iter().any(|&a| a >= env.actions()) {
            return Err(PbpoError::Integrity("trajectory index out of range".into()));
        }
        let mut states = Vec::with_capacity(env.horizon());
        let mut s = initial_state;
        for (h, &a) in actions.iter().enumerate() {
            states.push(s);
            s = env.next_state(h, s, a);
        }
        let seq_feature = env.trajectory_feature(&states, actions);
        Ok(Trajectory {
            states,
            actions: actions.to_vec(),
            seq_feature,
        })
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Round-off: fall back to the last index with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Rolls out one episode under `policy`. Consumes one uniform draw for the
/// initial state and one per step.
pub fn sample_trajectory<R: Rng + ?Sized>(
    env: &MdpInstance,
    policy: &PolicyParams,
    rng: &mut R,
) -> Result<Trajectory> {
    policy.check_compatible(env)?;
    let s0 = sample_initial_state(env, rng);
    sample_trajectory_from(env, policy, s0, rng)
}

/// Draws `s_1 ~ d_0`; one uniform draw.
pub fn sample_initial_state<R: Rng + ?Sized>(env: &MdpInstance, rng: &mut R) -> usize {
    sample_index(env.initial_dist(), rng)
}

/// Rolls out one episode from a fixed initial state; one uniform draw per step.
pub fn sample_trajectory_from<R: Rng + ?Sized>(
    env: &MdpInstance,
    policy: &PolicyParams,
    initial_state: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    policy.check_compatible(env)?;
    if initial_state >= env.states() {
        return Err(PbpoError::Integrity(format!(
            "initial state {initial_state} out of range for {} states",
            env.states()
        )));
    }
    let mut s = initial_state;
    let mut states = Vec::with_capacity(env.horizon());
    let mut actions = Vec::with_capacity(env.horizon());
    let mut probs = vec![0.0; env.actions()];
    for h in 0..env.horizon() {
        policy.fill_action_probs(env, h, s, &mut probs);
        let a = sample_index(&probs, rng);
        states.push(s);
        actions.push(a);
        s = env.next_state(h, s, a);
    }
    let seq_feature = env.trajectory_feature(&states, &actions);
    Ok(Trajectory {
        states,
        actions,
        seq_feature,
    })
}

pub fn trajectory_reward(env: &MdpInstance, r: &RewardParams, tau: &Trajectory) -> Result<f64> {
    env.check_reward(r)?;
    if tau.seq_feature.len() != env.stacked_dim() {
        return Err(PbpoError::DimensionMismatch {
            expected: env.stacked_dim(),
            actual: tau.seq_feature.len(),
        });
    }
    Ok(r.reward_of_feature(&tau.seq_feature))
}

/// Exact `E[seq_feature(tau)]` under `policy` by forward occupancy DP.
pub fn expected_features(env: &MdpInstance, policy: &PolicyParams) -> Result<Vec<f64>> {
    policy.check_compatible(env)?;
    let probs = action_prob_table(env, policy);
    Ok(dp::expected_features_from(env, &probs))
}

/// `J(policy, r)`, the expected trajectory reward.
pub fn policy_value(env: &MdpInstance, r: &RewardParams, policy: &PolicyParams) -> Result<f64> {
    env.check_reward(r)?;
    let mu = expected_features(env, policy)?;
    Ok(linalg::dot(r.values(), &mu))
}

/// Deterministic optimal policy by backward induction; ties go to the
/// lowest action index.
pub fn optimal_policy(env: &MdpInstance, r: &RewardParams) -> Result<PolicyParams> {
    env.check_reward(r)?;
    Ok(dp::greedy_table(env, r.values()))
}
