//! Shared fixtures for the benchmarks.

use pbpo_core::env::{self, GeneratorSpec, MdpInstance};
use pbpo_core::preference::{self, LinkFunction, PreferenceDataset, PreferenceRecord};
use pbpo_core::reward::{self, ConfidenceSetSpec, MleConfig};
use pbpo_core::{GeneratorKind, Granularity, PolicyParams, SeedStreams};

pub struct Fixture {
    pub env: MdpInstance,
    pub data: PreferenceDataset,
    pub spec: ConfidenceSetSpec,
}

/// A random instance with `records` uniform-vs-uniform labelled pairs and
/// the fitted confidence set.
pub fn fixture(spec: GeneratorSpec, records: usize, seed: u64) -> Fixture {
    let streams = SeedStreams::new(seed);
    let env = env::generate(&spec, &mut streams.stream(SeedStreams::ENV_GEN)).expect("valid generator");
    let mut rng = streams.stream(SeedStreams::TRAJECTORY);
    let pi = PolicyParams::uniform_for(&env);
    let link = LinkFunction::for_params(env.true_params());
    let mut data = PreferenceDataset::new(env.stacked_dim());
    for k in 0..records {
        let tau0 = env::sample_trajectory(&env, &pi, &mut rng).expect("compatible");
        let tau1 = env::sample_trajectory(&env, &pi, &mut rng).expect("compatible");
        let label = preference::sample_label(&link, env.true_params(), &tau0, &tau1, &mut rng);
        data.push(PreferenceRecord {
            tau0,
            tau1,
            label,
            iteration: k + 1,
        })
        .expect("matching dimensions");
    }
    let fit = reward::fit_mle(&data, env.layout(), env.bound(), &MleConfig::default(), None, &mut rng)
        .expect("fit");
    let spec = ConfidenceSetSpec {
        zeta: reward::zeta_schedule(records, env.layout(), 0.1, 1.0),
        mle_value: fit.log_likelihood,
        mle_params: fit.params,
        c_zeta: 1.0,
        delta: 0.1,
        ridge: MleConfig::default().ridge,
    };
    Fixture { env, data, spec }
}

pub fn bandit(dim: usize, actions: usize) -> GeneratorSpec {
    GeneratorSpec::bandit(dim, actions, 1.0)
}

pub fn token_chain(dim: usize, horizon: usize) -> GeneratorSpec {
    GeneratorSpec {
        kind: GeneratorKind::Chain,
        dim,
        horizon,
        actions: 3,
        states: 3,
        bound: 1.0,
        granularity: Granularity::TokenLevel,
    }
}
