//! Named synthetic instance generators.
//!
//! * `bandit`: a single step and state; each arm has a random unit feature.
//! * `chain`: `states` states per step, random deterministic transitions and
//!   random unit features per `(h, s, a)`.
//! * `hard-direction`: like `chain`, but the reward lives entirely on the
//!   first feature axis, along which features vary only by a small amount;
//!   the remaining axes carry large reward-free variation.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{MdpInstance, MdpParts};
use crate::error::{PbpoError, Result};
use crate::layout::Granularity;
use crate::linalg;

/// Extent of the reward-carrying axis in `hard-direction` features.
pub const HARD_SIGNAL_SCALE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneratorKind {
    Bandit,
    Chain,
    HardDirection,
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorKind::Bandit => "bandit",
            GeneratorKind::Chain => "chain",
            GeneratorKind::HardDirection => "hard-direction",
        })
    }
}

impl FromStr for GeneratorKind {
    type Err = PbpoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bandit" => Ok(GeneratorKind::Bandit),
            "chain" => Ok(GeneratorKind::Chain),
            "hard-direction" => Ok(GeneratorKind::HardDirection),
            other => Err(PbpoError::config(format!("unknown generator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub dim: usize,
    pub horizon: usize,
    pub actions: usize,
    pub states: usize,
    pub bound: f64,
    pub granularity: Granularity,
}

impl GeneratorSpec {
    pub fn bandit(dim: usize, actions: usize, bound: f64) -> Self {
        GeneratorSpec {
            kind: GeneratorKind::Bandit,
            dim,
            horizon: 1,
            actions,
            states: 1,
            bound,
            granularity: Granularity::SequenceLevel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.horizon == 0 || self.actions == 0 || self.states == 0 {
            return Err(PbpoError::config("generator sizes must be positive"));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(PbpoError::config("parameter bound must be positive and finite"));
        }
        match self.kind {
            GeneratorKind::Bandit if self.horizon != 1 || self.states != 1 => Err(
                PbpoError::config("the bandit generator requires horizon 1 and a single state"),
            ),
            GeneratorKind::HardDirection if self.dim < 2 => {
                Err(PbpoError::config("the hard-direction generator needs dim >= 2"))
            }
            _ => Ok(()),
        }
    }
}

pub fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = linalg::norm(&v);
        if n > 1e-12 {
            return linalg::scale(&v, 1.0 / n);
        }
    }
}

/// Draws an instance; all randomness comes from `rng`.
pub fn generate<R: Rng + ?Sized>(spec: &GeneratorSpec, rng: &mut R) -> Result<MdpInstance> {
    spec.validate()?;
    let GeneratorSpec {
        kind,
        dim,
        horizon,
        actions,
        states,
        bound,
        granularity,
    } = *spec;
    let n_sa = horizon * states * actions;
    let n_blocks = match granularity {
        Granularity::SequenceLevel => 1,
        Granularity::TokenLevel => horizon,
    };

    let transitions: Vec<usize> = match kind {
        GeneratorKind::Bandit => vec![0; n_sa],
        _ => (0..n_sa).map(|_| rng.random_range(0..states)).collect(),
    };
    let mut features = Vec::with_capacity(n_sa * dim);
    for _ in 0..n_sa {
        match kind {
            GeneratorKind::Bandit | GeneratorKind::Chain => {
                features.extend(random_unit(dim, rng));
            }
            GeneratorKind::HardDirection => {
                let signal = HARD_SIGNAL_SCALE * rng.random_range(-1.0..=1.0);
                let rest = (1.0 - signal * signal).sqrt();
                features.push(signal);
                features.extend(random_unit(dim - 1, rng).into_iter().map(|x| x * rest));
            }
        }
    }
    let true_params: Vec<f64> = match kind {
        GeneratorKind::HardDirection => {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (0..n_blocks)
                .flat_map(|_| {
                    let mut block = vec![0.0; dim];
                    block[0] = sign * bound;
                    block
                })
                .collect()
        }
        _ => (0..n_blocks)
            .flat_map(|_| linalg::scale(&random_unit(dim, rng), bound))
            .collect(),
    };
    let initial_dist = vec![1.0 / states as f64; states];
    MdpInstance::new(MdpParts {
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
