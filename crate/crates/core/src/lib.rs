//! Online preference-based policy optimization on small synthetic MDPs.
//!
//! The crate covers the full loop: instance generation with exact dynamic
//! programming, a Bradley-Terry preference oracle, maximum-likelihood reward
//! fitting with a likelihood confidence set, covariance-driven exploration,
//! and the min-max exploitation step, plus the experiment harness.

pub mod config;
pub mod env;
pub mod error;
pub mod explorer;
pub mod harness;
pub mod io;
pub mod layout;
pub mod linalg;
pub mod minmax;
pub mod policy;
pub mod preference;
pub mod reward;
pub mod rng;

pub use config::{parse_and_validate, parse_experiment, ExperimentConfig, SuitePlan};
pub use env::{GeneratorKind, GeneratorSpec, MdpInstance, Trajectory};
pub use error::{PbpoError, Result};
pub use explorer::{CovarianceState, EnhancerChoice, EnhancerSearch};
pub use harness::{
    run_online_loop, run_scaling_suite, Method, RunConfig, RunLog, RunRow, SuiteSummary, Variation,
};
pub use layout::{FeatureLayout, Granularity};
pub use minmax::{GradientEstimator, MinMaxSolution, SolverConfig, SolverMode};
pub use policy::{PolicyKind, PolicyParams};
pub use preference::{LinkFunction, PairStats, PreferenceDataset, PreferenceRecord};
pub use reward::{ConfidenceSetSpec, MleConfig, MleFit, RewardParams};
pub use rng::SeedStreams;
