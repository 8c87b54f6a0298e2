use std::fmt;
use std::str::FromStr;

use crate::error::PbpoError;

/// Whether the reward is linear in one trajectory-level feature or a sum of
/// per-step linear terms with their own parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    SequenceLevel,
    TokenLevel,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::SequenceLevel => f.write_str("sequence"),
            Granularity::TokenLevel => f.write_str("token"),
        }
    }
}

impl FromStr for Granularity {
    type Err = PbpoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequence" | "sequence-level" | "SequenceLevel" => Ok(Granularity::SequenceLevel),
            "token" | "token-level" | "TokenLevel" => Ok(Granularity::TokenLevel),
            other => Err(PbpoError::config(format!("unknown granularity '{other}'"))),
        }
    }
}

/// Shape of the stacked trajectory feature and reward parameter vectors.
///
/// Sequence level: one block of `dim` entries; the trajectory feature is the
/// per-step feature sum scaled by `1/horizon`. Token level: `horizon` blocks,
/// block `h` holding the step-`h` feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureLayout {
    pub granularity: Granularity,
    pub dim: usize,
    pub horizon: usize,
}

impl FeatureLayout {
    pub fn new(granularity: Granularity, dim: usize, horizon: usize) -> Self {
        FeatureLayout {
            granularity,
            dim,
            horizon,
        }
    }

    pub fn n_blocks(&self) -> usize {
        match self.granularity {
            Granularity::SequenceLevel => 1,
            Granularity::TokenLevel => self.horizon,
        }
    }

    pub fn stacked_dim(&self) -> usize {
        self.dim * self.n_blocks()
    }

    /// Offset and scale at which a step-`h` feature enters the stacked vector.
    #[inline]
    pub fn step_slot(&self, h: usize) -> (usize, f64) {
        match self.granularity {
            Granularity::SequenceLevel => (0, 1.0 / self.horizon as f64),
            Granularity::TokenLevel => (h * self.dim, 1.0),
        }
    }
}
