#![allow(dead_code)]

use pbpo_core::env::{self, MdpInstance, MdpParts};
use pbpo_core::{GeneratorKind, GeneratorSpec, Granularity, PolicyParams, SeedStreams};
use rand::Rng;

/// Single-state, horizon-1 instance with the given arm features.
pub fn bandit(features: &[Vec<f64>], theta: &[f64], bound: f64) -> MdpInstance {
    let dim = theta.len();
    MdpInstance::new(MdpParts {
        states: 1,
        actions: features.len(),
        horizon: 1,
        dim,
        initial_dist: vec![1.0],
        transitions: vec![0; features.len()],
        features: features.iter().flatten().copied().collect(),
        granularity: Granularity::SequenceLevel,
        true_params: theta.to_vec(),
        bound,
    })
    .expect("valid bandit")
}

pub fn random_instance(kind: GeneratorKind, dim: usize, horizon: usize, actions: usize, states: usize, granularity: Granularity, seed: u64) -> MdpInstance {
    let spec = GeneratorSpec {
        kind,
        dim,
        horizon,
        actions,
        states,
        bound: 1.0,
        granularity,
    };
    env::generate(&spec, &mut SeedStreams::new(seed).stream(SeedStreams::ENV_GEN)).expect("valid generator")
}

pub fn random_softmax<R: Rng>(env: &MdpInstance, scale: f64, rng: &mut R) -> PolicyParams {
    let w = (0..env.horizon() * env.dim()).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect();
    PolicyParams::softmax(env.horizon(), env.dim(), w).expect("matching width")
}

/// Every action sequence of length `horizon` over `actions` actions.
pub fn action_sequences(actions: usize, horizon: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..horizon {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..actions).map(move |a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

/// Softmax probability recomputed from scratch.
pub fn naive_probs(env: &MdpInstance, policy: &PolicyParams, h: usize, s: usize) -> Vec<f64> {
    match policy {
        PolicyParams::Softmax { dim, weights, .. } => {
            let w = &weights[h * dim..(h + 1) * dim];
            let logits: Vec<f64> = (0..env.actions())
                .map(|a| env.feature(h, s, a).iter().zip(w).map(|(x, y)| x * y).sum())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|x| x / z).collect()
        }
        PolicyParams::Deterministic { states, actions, .. } => {
            let mut p = vec![0.0; env.actions()];
            p[actions[h * states + s]] = 1.0;
            p
        }
    }
}

/// Exact expected feature by enumerating every (initial state, action
/// sequence) path with straight products of probabilities.
pub fn enumerated_features(env: &MdpInstance, policy: &PolicyParams) -> Vec<f64> {
    let mut mu = vec![0.0; env.stacked_dim()];
    for s0 in 0..env.states() {
        for seq in action_sequences(env.actions(), env.horizon()) {
            let mut s = s0;
            let mut p = env.initial_dist()[s0];
            let mut states = Vec::new();
            for (h, &a) in seq.iter().enumerate() {
                p *= naive_probs(env, policy, h, s)[a];
                states.push(s);
                s = env.next_state(h, s, a);
            }
            if p == 0.0 {
                continue;
            }
            let f = env.trajectory_feature(&states, &seq);
            for (m, x) in mu.iter_mut().zip(f) {
                *m += p * x;
            }
        }
    }
    mu
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// `n` pairs drawn from the uniform policy and labeled by the true reward.
pub fn labeled_dataset(env: &MdpInstance, n: usize, seed: u64) -> pbpo_core::PreferenceDataset {
    use pbpo_core::preference::{self, LinkFunction, PreferenceRecord};
    let mut rng = SeedStreams::new(seed).stream(SeedStreams::TRAJECTORY);
    let pi = PolicyParams::uniform_for(env);
    let link = LinkFunction::for_params(env.true_params());
    let mut data = pbpo_core::PreferenceDataset::new(env.stacked_dim());
    for k in 0..n {
        let tau0 = env::sample_trajectory(env, &pi, &mut rng).unwrap();
        let tau1 = env::sample_trajectory(env, &pi, &mut rng).unwrap();
        let label = preference::sample_label(&link, env.true_params(), &tau0, &tau1, &mut rng);
        data.push(PreferenceRecord { tau0, tau1, label, iteration: k + 1 }).unwrap();
    }
    data
}

pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let c = dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt());
    c.clamp(-1.0, 1.0).acos()
}
