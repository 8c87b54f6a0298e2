//! Linear reward models: parameters, maximum-likelihood fitting and the
//! likelihood-ratio confidence set.

mod barrier;
mod confidence;
mod mle;
mod params;

pub use confidence::{
    in_confidence_set, min_gap_over_confidence_set, min_linear_over_confidence_set,
    min_quadratic_over_active_set, min_quadratic_over_confidence_set, zeta_schedule,
    ConfidenceSetSpec, InnerSolution, MEMBERSHIP_TOL,
};
pub use mle::{fit_mle, MleConfig, MleFit};
pub use params::RewardParams;
