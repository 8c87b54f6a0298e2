use crate::error::{PbpoError, Result};
use crate::layout::{FeatureLayout, Granularity};
use crate::linalg;

/// Linear reward-model parameters stored as one stacked vector.
///
/// Sequence level holds a single block `theta`; token level holds one block
/// per step. Every block lies in the Euclidean ball of radius `bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardParams {
    layout: FeatureLayout,
    bound: f64,
    values: Vec<f64>,
}

const NORM_SLACK: f64 = 1e-9;

impl RewardParams {
    pub fn new(layout: FeatureLayout, bound: f64, values: Vec<f64>) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(PbpoError::config(format!("parameter bound must be positive, got {bound}")));
        }
        if values.len() != layout.stacked_dim() {
            return Err(PbpoError::DimensionMismatch {
                expected: layout.stacked_dim(),
                actual: values.len(),
            });
        }
        for (b, block) in values.chunks(layout.dim).enumerate() {
            let n = linalg::norm(block);
            if !(n <= bound * (1.0 + NORM_SLACK)) {
                return Err(PbpoError::Integrity(format!(
                    "parameter block {b} has norm {n} above bound {bound}"
                )));
            }
        }
        Ok(RewardParams {
            layout,
            bound,
            values,
        })
    }

    pub fn zeros(layout: FeatureLayout, bound: f64) -> Self {
        RewardParams {
            layout,
            bound,
            values: vec![0.0; layout.stacked_dim()],
        }
    }

    /// Builds parameters from arbitrary values, projecting each block onto
    /// the bound ball.
    pub fn projected(layout: FeatureLayout, bound: f64, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.stacked_dim() {
            return Err(PbpoError::DimensionMismatch {
                expected: layout.stacked_dim(),
                actual: values.len(),
            });
        }
        linalg::project_blocks(&mut values, layout.dim, bound);
        Ok(RewardParams {
            layout,
            bound,
            values,
        })
    }

    pub fn layout(&self) -> FeatureLayout {
        self.layout
    }

    pub fn granularity(&self) -> Granularity {
        self.layout.granularity
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// The stacked parameter vector (`d` or `d * H` entries).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn block(&self, b: usize) -> &[f64] {
        &self.values[b * self.layout.dim..(b + 1) * self.layout.dim]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.layout.dim)
    }

    pub fn max_block_norm(&self) -> f64 {
        self.blocks().map(linalg::norm).fold(0.0, f64::max)
    }

    /// Reward of a trajectory with the given stacked feature.
    pub fn reward_of_feature(&self, feature: &[f64]) -> f64 {
        linalg::dot(&self.values, feature)
    }

    /// Largest attainable absolute reward gap between two trajectories.
    pub fn max_reward_gap(&self) -> f64 {
        match self.layout.granularity {
            Granularity::SequenceLevel => 2.0 * self.bound,
            Granularity::TokenLevel => 2.0 * self.bound * self.layout.horizon as f64,
        }
    }
}
