mod common;

use common::*;
use pbpo_core::env::{self, Trajectory};
use pbpo_core::policy::{self, PolicyParams};
use pbpo_core::{GeneratorKind, Granularity, MdpInstance, RewardParams, SeedStreams};
use proptest::prelude::*;
use rand::Rng;

fn random_reward<R: Rng>(env: &MdpInstance, rng: &mut R) -> RewardParams {
    let v: Vec<f64> = (0..env.stacked_dim()).map(|_| rng.random::<f64>() - 0.5).collect();
    RewardParams::projected(env.layout(), 1.0, v).unwrap()
}

fn value(env: &MdpInstance, r: &RewardParams, pi: &PolicyParams) -> f64 {
    env::policy_value(env, r, pi).unwrap()
}

fn central_difference(env: &MdpInstance, r: &RewardParams, pi: &PolicyParams, h: f64) -> Vec<f64> {
    let w = pi.weights().unwrap().to_vec();
    (0..w.len())
        .map(|i| {
            let mut up = w.clone();
            let mut dn = w.clone();
            up[i] += h;
            dn[i] -= h;
            let pu = PolicyParams::softmax(env.horizon(), env.dim(), up).unwrap();
            let pd = PolicyParams::softmax(env.horizon(), env.dim(), dn).unwrap();
            (value(env, r, &pu) - value(env, r, &pd)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn zero_weights_are_uniform() {
    let env = random_instance(GeneratorKind::Chain, 3, 2, 4, 2, Granularity::SequenceLevel, 1);
    let pi = PolicyParams::uniform_for(&env);
    for h in 0..2 {
        for s in 0..2 {
            assert_eq!(policy::action_probs(&pi, &env, h, s), vec![0.25; 4]);
        }
    }
}

#[test]
fn deterministic_table_is_one_hot() {
    let env = random_instance(GeneratorKind::Bandit, 2, 1, 3, 1, Granularity::SequenceLevel, 2);
    let pi = PolicyParams::deterministic(1, 1, vec![1]).unwrap();
    assert_eq!(policy::action_probs(&pi, &env, 0, 0), vec![0.0, 1.0, 0.0]);
}

#[test]
fn log_prob_examples() {
    let env = random_instance(GeneratorKind::Chain, 2, 3, 2, 2, Granularity::TokenLevel, 3);
    let tau = Trajectory::from_actions(&env, 1, &[0, 1, 1]).unwrap();
    let lp = policy::log_prob_trajectory(&PolicyParams::uniform_for(&env), &env, &tau).unwrap();
    assert!((lp - 3.0 * 0.5f64.ln()).abs() < 1e-12);

    let table = PolicyParams::enumerate_deterministic(&env, 5);
    let mut rng = SeedStreams::new(4).stream("t");
    let own = env::sample_trajectory(&env, &table, &mut rng).unwrap();
    assert_eq!(policy::log_prob_trajectory(&table, &env, &own).unwrap(), 0.0);
}

#[test]
fn inconsistent_trajectory_is_rejected() {
    let env = random_instance(GeneratorKind::Chain, 2, 3, 2, 3, Granularity::TokenLevel, 5);
    let mut tau = Trajectory::from_actions(&env, 0, &[0, 0, 0]).unwrap();
    tau.states[1] = (tau.states[1] + 1) % 3;
    let err = policy::log_prob_trajectory(&PolicyParams::uniform_for(&env), &env, &tau).unwrap_err();
    assert!(matches!(err, pbpo_core::PbpoError::Integrity(_)));
}

#[test]
fn zero_reward_has_zero_gradient() {
    let env = random_instance(GeneratorKind::Chain, 3, 2, 3, 2, Granularity::TokenLevel, 6);
    let pi = random_softmax(&env, 1.0, &mut SeedStreams::new(7).stream("p"));
    let r = RewardParams::zeros(env.layout(), 1.0);
    let g = policy::gap_gradient(&pi, &env, &r, &PolicyParams::uniform_for(&env)).unwrap();
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn near_argmax_gradient_vanishes() {
    let env = bandit(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.8, 0.2], 1.0);
    let r = env.true_params().clone();
    // Arm 0 is optimal; the weight (1, -1) scaled by 50 nearly selects it.
    let pi = PolicyParams::softmax(1, 2, vec![50.0, -50.0]).unwrap();
    let g = policy::gap_gradient(&pi, &env, &r, &PolicyParams::uniform_for(&env)).unwrap();
    assert!(dot(&g, &g).sqrt() <= 1e-3);
    let fd = central_difference(&env, &r, &pi, 1e-5);
    for (a, b) in g.iter().zip(&fd) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn gradient_needs_softmax_and_matching_reward() {
    let env = random_instance(GeneratorKind::Chain, 2, 2, 2, 2, Granularity::TokenLevel, 8);
    let table = PolicyParams::enumerate_deterministic(&env, 0);
    let r = RewardParams::zeros(env.layout(), 1.0);
    assert!(policy::gap_gradient(&table, &env, &r, &table).is_err());
    let seq = RewardParams::zeros(pbpo_core::FeatureLayout::new(Granularity::SequenceLevel, 2, 2), 1.0);
    let pi = PolicyParams::uniform_for(&env);
    assert!(policy::gap_gradient(&pi, &env, &seq, &pi).is_err());
}

#[test]
fn clipped_gradient_is_exact_inside_the_band_and_zero_outside() {
    let env = random_instance(GeneratorKind::Chain, 3, 2, 3, 2, Granularity::TokenLevel, 9);
    let mut rng = SeedStreams::new(10).stream("p");
    let r = random_reward(&env, &mut rng);
    let pi = random_softmax(&env, 1.0, &mut rng);
    let at_old = policy::clipped_surrogate_gradient(&pi, &pi, &env, r.values(), 0.2);
    let exact = policy::value_gradient(&pi, &env, r.values());
    for (a, b) in at_old.iter().zip(&exact) {
        assert!((a - b).abs() < 1e-12);
    }
    let far = PolicyParams::softmax(env.horizon(), env.dim(), pi.weights().unwrap().iter().map(|w| w + 40.0).collect()).unwrap();
    let moved = policy::clipped_surrogate_gradient(&far, &pi, &env, r.values(), 1e-6);
    let probs_far = env::action_prob_table(&env, &far);
    let probs_old = env::action_prob_table(&env, &pi);
    let all_out = probs_far.iter().zip(&probs_old).all(|(n, o)| !policy::ratio_in_band(*n, *o, 1e-6));
    assert!(all_out);
    assert!(moved.iter().all(|&x| x == 0.0));
}

#[test]
fn sampled_gradient_is_unbiased() {
    let env = random_instance(GeneratorKind::Chain, 2, 2, 3, 2, Granularity::TokenLevel, 11);
    let mut rng = SeedStreams::new(12).stream("p");
    let r = random_reward(&env, &mut rng);
    let pi = random_softmax(&env, 0.5, &mut rng);
    let exact = policy::value_gradient(&pi, &env, r.values());
    let reps = 400;
    let mut mean = vec![0.0; exact.len()];
    for _ in 0..reps {
        let g = policy::sampled_value_gradient(&pi, &env, r.values(), 64, &mut rng).unwrap();
        for (m, x) in mean.iter_mut().zip(g) {
            *m += x / reps as f64;
        }
    }
    let scale = dot(&exact, &exact).sqrt().max(1e-3);
    for (m, e) in mean.iter().zip(&exact) {
        assert!((m - e).abs() < 0.05 * scale.max(0.1), "{m} vs {e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn probabilities_match_recomputation(seed in 0u64..10_000, scale in 0.0f64..8.0) {
        let env = random_instance(GeneratorKind::Chain, 3, 3, 4, 2, Granularity::TokenLevel, seed);
        let pi = random_softmax(&env, scale, &mut SeedStreams::new(seed).stream("p"));
        for h in 0..3 {
            for s in 0..2 {
                let p = policy::action_probs(&pi, &env, h, s);
                let q = naive_probs(&env, &pi, h, s);
                for (a, b) in p.iter().zip(&q) {
                    prop_assert!((a - b).abs() < 1e-12);
                    prop_assert!(*a > 0.0);
                }
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_prob_is_sum_of_step_logs(seed in 0u64..10_000) {
        let env = random_instance(GeneratorKind::Chain, 3, 4, 3, 3, Granularity::TokenLevel, seed);
        let mut rng = SeedStreams::new(seed).stream("p");
        let pi = random_softmax(&env, 3.0, &mut rng);
        let tau = env::sample_trajectory(&env, &pi, &mut rng).unwrap();
        let direct: f64 = (0..4).map(|h| policy::action_probs(&pi, &env, h, tau.states[h])[tau.actions[h]].ln()).sum();
        let lp = policy::log_prob_trajectory(&pi, &env, &tau).unwrap();
        prop_assert!((lp - direct).abs() < 1e-12);
        prop_assert!(lp.is_finite());
    }

    #[test]
    fn gradient_matches_central_differences(seed in 0u64..10_000, token in any::<bool>()) {
        let g = if token { Granularity::TokenLevel } else { Granularity::SequenceLevel };
        let env = random_instance(GeneratorKind::Chain, 3, 3, 3, 2, g, seed);
        let mut rng = SeedStreams::new(seed).stream("p");
        let r = random_reward(&env, &mut rng);
        let pi = random_softmax(&env, 1.5, &mut rng);
        let grad = policy::gap_gradient(&pi, &env, &r, &PolicyParams::uniform_for(&env)).unwrap();
        let fd = central_difference(&env, &r, &pi, 1e-5);
        let scale = fd.iter().chain(&grad).fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in grad.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-4 * scale.max(1e-6), "{} vs {}", a, b);
        }
    }

    #[test]
    fn small_gradient_steps_do_not_lower_the_value(seed in 0u64..10_000) {
        let env = random_instance(GeneratorKind::Chain, 3, 3, 3, 2, Granularity::TokenLevel, seed);
        let mut rng = SeedStreams::new(seed).stream("p");
        let r = random_reward(&env, &mut rng);
        let pi = random_softmax(&env, 1.0, &mut rng);
        let grad = policy::gap_gradient(&pi, &env, &r, &pi).unwrap();
        let stepped: Vec<f64> = pi.weights().unwrap().iter().zip(&grad).map(|(w, g)| w + 1e-4 * g).collect();
        let next = PolicyParams::softmax(env.horizon(), env.dim(), stepped).unwrap();
        prop_assert!(value(&env, &r, &next) >= value(&env, &r, &pi) - 1e-15);
    }

    #[test]
    fn shifts_orthogonal_to_feature_differences_keep_probabilities(seed in 0u64..10_000, c in -5.0f64..5.0) {
        // Features share a constant last coordinate, so that axis cancels
        // in every softmax.
        let mut rng = SeedStreams::new(seed).stream("f");
        let feats: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.random::<f64>() * 0.6 - 0.3, rng.random::<f64>() * 0.6 - 0.3, 0.5]).collect();
        let env = bandit(&feats, &[0.0, 0.0, 1.0], 1.0);
        let w = vec![rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0, 0.0];
        let mut shifted = w.clone();
        shifted[2] += c;
        let a = policy::action_probs(&PolicyParams::softmax(1, 3, w).unwrap(), &env, 0, 0);
        let b = policy::action_probs(&PolicyParams::softmax(1, 3, shifted).unwrap(), &env, 0, 0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
