mod common;

use common::*;
use pbpo_core::env::{self, Trajectory};
use pbpo_core::minmax::{self, SolverConfig, SolverMode};
use pbpo_core::preference::{PairStats, PreferenceRecord};
use pbpo_core::reward::{self, ConfidenceSetSpec};
use pbpo_core::{FeatureLayout, Granularity, MdpInstance, MleConfig, PolicyParams, PreferenceDataset, RewardParams, SeedStreams};
use proptest::prelude::*;
use rand::Rng;

fn seq(dim: usize) -> FeatureLayout {
    FeatureLayout::new(Granularity::SequenceLevel, dim, 1)
}

fn spec_for(data: &PreferenceDataset, layout: FeatureLayout, bound: f64, zeta: f64) -> ConfidenceSetSpec {
    let cfg = MleConfig::default();
    let fit = reward::fit_mle(data, layout, bound, &cfg, None, &mut SeedStreams::new(0).stream("s")).unwrap();
    ConfidenceSetSpec {
        zeta,
        mle_value: fit.log_likelihood,
        mle_params: fit.params,
        c_zeta: 1.0,
        delta: 0.1,
        ridge: cfg.ridge,
    }
}

fn planar_bandit(arms: usize, seed: u64) -> MdpInstance {
    let mut rng = SeedStreams::new(seed).stream("arms");
    let feats: Vec<Vec<f64>> = (0..arms)
        .map(|_| {
            let a = rng.random::<f64>() * std::f64::consts::TAU;
            let r = 0.3 + 0.7 * rng.random::<f64>();
            vec![r * a.cos(), r * a.sin()]
        })
        .collect();
    let t = rng.random::<f64>() * std::f64::consts::TAU;
    bandit(&feats, &[t.cos(), t.sin()], 1.0)
}

/// Brute-force maximin over mixtures of arms, in its min-max form
/// `min_{theta in C} max_a <theta, phi_a - mu_ref>`, by a dense grid over the
/// parameter disc.
fn grid_minimax(env: &MdpInstance, stats: &PairStats, floor: f64, mu_ref: &[f64], n: usize) -> f64 {
    let gaps: Vec<Vec<f64>> = (0..env.actions())
        .map(|a| env.feature(0, 0, a).iter().zip(mu_ref).map(|(x, m)| x - m).collect())
        .collect();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let t = [-1.0 + 2.0 * i as f64 / (n - 1) as f64, -1.0 + 2.0 * j as f64 / (n - 1) as f64];
            if dot(&t, &t) > 1.0 {
                continue;
            }
            let worst = gaps.iter().map(|g| dot(&t, g)).fold(f64::NEG_INFINITY, f64::max);
            if worst < best && stats.log_likelihood(&t) >= floor {
                best = worst;
            }
        }
    }
    best
}

#[test]
fn no_information_keeps_the_reference() {
    let env = planar_bandit(5, 1);
    let data = PreferenceDataset::new(2);
    let spec = ConfidenceSetSpec {
        zeta: 1e6,
        mle_value: 0.0,
        mle_params: RewardParams::zeros(seq(2), 1.0),
        c_zeta: 1.0,
        delta: 0.1,
        ridge: 1e-6,
    };
    let cfg = SolverConfig::default();
    let pi_ref = PolicyParams::uniform_for(&env);
    let sol = minmax::solve_constrained(&env, &data, &spec, &pi_ref, &cfg, &mut SeedStreams::new(2).stream("s")).unwrap();
    assert!(sol.gap <= 0.0 && sol.gap.abs() <= 10.0 * cfg.tolerance);
    let mu = env::expected_features(&env, &sol.policy).unwrap();
    let mu_ref = env::expected_features(&env, &pi_ref).unwrap();
    assert!(mu.iter().zip(&mu_ref).all(|(a, b)| (a - b).abs() < 1e-6));
}

#[test]
fn one_sided_labels_select_the_preferred_arm() {
    let env = bandit(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 1.0], 1.0);
    let t0 = Trajectory::from_actions(&env, 0, &[1]).unwrap();
    let t1 = Trajectory::from_actions(&env, 0, &[0]).unwrap();
    let mut data = PreferenceDataset::new(2);
    for k in 0..200 {
        data.push(PreferenceRecord { tau0: t0.clone(), tau1: t1.clone(), label: 1, iteration: k + 1 }).unwrap();
    }
    let spec = spec_for(&data, seq(2), 1.0, reward::zeta_schedule(200, seq(2), 0.1, 1.0));
    let pi_ref = PolicyParams::uniform_for(&env);
    let sol = minmax::solve_constrained(&env, &data, &spec, &pi_ref, &SolverConfig::default(), &mut SeedStreams::new(3).stream("s")).unwrap();
    let p = pbpo_core::policy::action_probs(&sol.policy, &env, 0, 0);
    assert!(p[1] >= 0.9, "{p:?}");
    assert!(sol.gap > 0.0);
}

#[test]
fn constrained_gap_matches_grid_minimax() {
    for seed in 0..4 {
        let env = planar_bandit(3 + seed as usize * 3, 10 + seed);
        let data = labeled_dataset(&env, 30, 20 + seed);
        let spec = spec_for(&data, seq(2), 1.0, 1.5);
        let pi_ref = random_softmax(&env, 1.0, &mut SeedStreams::new(30 + seed).stream("ref"));
        let sol = minmax::solve_constrained(&env, &data, &spec, &pi_ref, &SolverConfig::default(), &mut SeedStreams::new(seed).stream("s")).unwrap();
        let mu_ref = env::expected_features(&env, &pi_ref).unwrap();
        let oracle = grid_minimax(&env, data.stats(), spec.ll_floor(), &mu_ref, 801);
        assert!((sol.gap - oracle).abs() < 1e-2, "seed {seed}: {} vs {oracle}", sol.gap);
    }
}

#[test]
fn stackelberg_with_huge_beta_returns_the_mle() {
    let env = planar_bandit(6, 40);
    let data = labeled_dataset(&env, 100, 41);
    let fit = reward::fit_mle(&data, seq(2), 1.0, &MleConfig::default(), None, &mut SeedStreams::new(0).stream("s")).unwrap();
    let cfg = SolverConfig { mode: SolverMode::StackelbergLagrangian, beta: 1e6, ..SolverConfig::default() };
    let pi_ref = PolicyParams::uniform_for(&env);
    let sol = minmax::stackelberg_solve(&env, &data, &pi_ref, None, &cfg, &mut SeedStreams::new(42).stream("s")).unwrap();
    let dist = sol.reward.values().iter().zip(fit.params.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(dist < 1e-2, "{dist}");
}

#[test]
fn stackelberg_without_data_or_beta_stays_at_zero_gap() {
    let env = planar_bandit(5, 43);
    let data = PreferenceDataset::new(2);
    let cfg = SolverConfig { mode: SolverMode::StackelbergLagrangian, beta: 0.0, ..SolverConfig::default() };
    let pi_ref = PolicyParams::uniform_for(&env);
    let sol = minmax::stackelberg_solve(&env, &data, &pi_ref, None, &cfg, &mut SeedStreams::new(44).stream("s")).unwrap();
    assert!(sol.gap <= cfg.tolerance * 10.0, "{}", sol.gap);
}

#[test]
fn deterministic_reference_is_rejected() {
    let env = planar_bandit(3, 45);
    let data = labeled_dataset(&env, 10, 46);
    let spec = spec_for(&data, seq(2), 1.0, 1.0);
    let table = PolicyParams::deterministic(1, 1, vec![0]).unwrap();
    assert!(minmax::solve_constrained(&env, &data, &spec, &table, &SolverConfig::default(), &mut SeedStreams::new(0).stream("s")).is_err());
}

#[test]
fn trace_is_recorded_and_best_gap_is_monotone() {
    let env = random_instance(pbpo_core::GeneratorKind::Chain, 2, 2, 3, 2, Granularity::TokenLevel, 47);
    let data = labeled_dataset(&env, 40, 48);
    let spec = spec_for(&data, env.layout(), 1.0, 2.0);
    let cfg = SolverConfig { record_trace: true, ..SolverConfig::default() };
    let pi_ref = PolicyParams::uniform_for(&env);
    let sol = minmax::solve_constrained(&env, &data, &spec, &pi_ref, &cfg, &mut SeedStreams::new(49).stream("s")).unwrap();
    assert!(!sol.trace.is_empty());
    let mut best = f64::NEG_INFINITY;
    for rec in &sol.trace {
        assert!(rec.slack >= -1e-6);
        best = best.max(rec.gap);
    }
    assert!((best - sol.gap).abs() < 1e-12);
    let running: Vec<f64> = sol.trace.iter().scan(f64::NEG_INFINITY, |m, r| {
        *m = f64::max(*m, r.gap);
        Some(*m)
    }).collect();
    assert!(running.windows(2).all(|w| w[1] >= w[0]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn certified_reward_is_feasible(seed in 0u64..1000, zeta in 0.1f64..4.0) {
        let env = random_instance(pbpo_core::GeneratorKind::Chain, 2, 2, 3, 2, Granularity::TokenLevel, seed);
        let data = labeled_dataset(&env, 30, seed);
        let spec = spec_for(&data, env.layout(), 1.0, zeta);
        let pi_ref = random_softmax(&env, 1.0, &mut SeedStreams::new(seed).stream("ref"));
        let sol = minmax::solve_constrained(&env, &data, &spec, &pi_ref, &SolverConfig::default(), &mut SeedStreams::new(seed).stream("s")).unwrap();
        prop_assert!(sol.reward.max_block_norm() <= 1.0 + 1e-12);
        prop_assert!(data.stats().log_likelihood(sol.reward.values()) >= spec.ll_floor() - 1e-6);
        // The reported gap is the exact inner minimum at the returned policy.
        let check = reward::min_gap_over_confidence_set(&env, &data, &spec, &sol.policy, &pi_ref).unwrap();
        prop_assert!((check.value - sol.gap).abs() < 1e-6);
        prop_assert!(sol.gap >= -1e-12);
    }

    #[test]
    fn reward_gradient_matches_central_differences(seed in 0u64..1000, beta in 0.0f64..10.0) {
        let env = random_instance(pbpo_core::GeneratorKind::Chain, 3, 2, 3, 2, Granularity::TokenLevel, seed);
        let data = labeled_dataset(&env, 20, seed);
        let mut rng = SeedStreams::new(seed).stream("g");
        let gap: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
        let theta: Vec<f64> = (0..6).map(|_| 0.5 * (rng.random::<f64>() - 0.5)).collect();
        let r = RewardParams::new(env.layout(), 1.0, theta.clone()).unwrap();
        let g = minmax::stackelberg_reward_gradient(&gap, &r, &data, beta);
        let h = 1e-5;
        for i in 0..6 {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[i] += h;
            dn[i] -= h;
            let f = |v: Vec<f64>| minmax::stackelberg_objective(&gap, &RewardParams::new(env.layout(), 1.0, v).unwrap(), &data, beta);
            let fd = (f(up) - f(dn)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(g[i].abs()).max(1e-2), "{} vs {}", fd, g[i]);
        }
    }
}
