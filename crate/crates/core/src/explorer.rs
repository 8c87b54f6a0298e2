//! Reward-agnostic exploration: the regularized feature-gap covariance and
//! the enhancer policy that maximizes the expected feature gap measured in
//! the inverse-covariance norm.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{self, MdpInstance, Trajectory};
use crate::error::{PbpoError, Result};
use crate::linalg;
use crate::policy::{self, PolicyParams};

/// `lambda * I + sum_s z_s z_s^T` over absorbed feature gaps, with its
/// inverse kept current by rank-one updates.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceState {
    lambda: f64,
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    count: usize,
}

impl CovarianceState {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(PbpoError::config(format!("lambda must be positive, got {lambda}")));
        }
        Ok(CovarianceState {
            lambda,
            matrix: DMatrix::identity(dim, dim) * lambda,
            inverse: DMatrix::identity(dim, dim) / lambda,
            count: 0,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Adds `z z^T` and refreshes the inverse by Sherman-Morrison.
    pub fn absorb(&mut self, z: &[f64]) -> Result<()> {
        let n = self.dim();
        if z.len() != n {
            return Err(PbpoError::DimensionMismatch {
                expected: n,
                actual: z.len(),
            });
        }
        let az = linalg::mat_vec(&self.inverse, z);
        let denom = 1.0 + linalg::dot(z, &az);
        for j in 0..n {
            for i in 0..n {
                self.matrix[(i, j)] += z[i] * z[j];
                self.inverse[(i, j)] -= az[i] * az[j] / denom;
            }
        }
        // Keep both exactly symmetric.
        for j in 0..n {
            for i in 0..j {
                let avg = 0.5 * (self.inverse[(i, j)] + self.inverse[(j, i)]);
                self.inverse[(i, j)] = avg;
                self.inverse[(j, i)] = avg;
            }
        }
        self.count += 1;
        Ok(())
    }

    /// `x^T Sigma^{-1} x`
    pub fn inverse_norm_sq(&self, x: &[f64]) -> f64 {
        linalg::quad_form(&self.inverse, x)
    }
}

pub fn update_covariance(state: &CovarianceState, tau0: &Trajectory, tau1: &Trajectory) -> Result<CovarianceState> {
    let mut next = state.clone();
    next.absorb(&linalg::sub(&tau0.seq_feature, &tau1.seq_feature))?;
    Ok(next)
}

/// `|E_{pi_ref}[phi] - E_{pi}[phi]|^2` in the inverse-covariance metric.
pub fn uncertainty_score(
    state: &CovarianceState,
    pi_ref: &PolicyParams,
    pi: &PolicyParams,
    env: &MdpInstance,
) -> Result<f64> {
    let mu_ref = env::expected_features(env, pi_ref)?;
    let mu = env::expected_features(env, pi)?;
    if mu.len() != state.dim() {
        return Err(PbpoError::DimensionMismatch {
            expected: state.dim(),
            actual: mu.len(),
        });
    }
    Ok(state.inverse_norm_sq(&linalg::sub(&mu_ref, &mu)).max(0.0))
}

const LINEARIZATION_ROUNDS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhancerSearch {
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    /// Enumerate deterministic tables when there are at most this many.
    pub enumeration_cap: u128,
    /// Per-step logit weight norms are projected onto this radius.
    pub weight_radius: f64,
}

impl Default for EnhancerSearch {
    fn default() -> Self {
        EnhancerSearch {
            restarts: 5,
            steps: 500,
            step_size: 0.1,
            enumeration_cap: 4096,
            weight_radius: 50.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnhancerChoice {
    pub policy: PolicyParams,
    pub score: f64,
    pub enumerated: bool,
}

/// Picks the enhancer policy maximizing [`uncertainty_score`] against `pi_ref`.
///
/// The score is a convex quadratic of the feature expectation, and the set
/// of attainable expectations is the convex hull of deterministic tables, so
/// when every table can be enumerated the enumeration is exact and the
/// gradient search is skipped. Otherwise two searches run and the best
/// result wins: successive linearization, where each round replaces the
/// policy by the deterministic table maximizing the score's tangent plane
/// (a convex function never decreases along that step), seeded from the
/// principal axes of the metric and from random directions; then projected
/// gradient ascent on the logarithm of the score from `restarts` random
/// logit initializations.
pub fn optimize_enhancer<R: Rng + ?Sized>(
    state: &CovarianceState,
    pi_ref: &PolicyParams,
    env: &MdpInstance,
    cfg: &EnhancerSearch,
    rng: &mut R,
) -> Result<EnhancerChoice> {
    let mu_ref = env::expected_features(env, pi_ref)?;
    if mu_ref.len() != state.dim() {
        return Err(PbpoError::DimensionMismatch {
            expected: state.dim(),
            actual: mu_ref.len(),
        });
    }
    let mut best = EnhancerChoice {
        policy: pi_ref.clone(),
        score: 0.0,
        enumerated: false,
    };

    let count = env.deterministic_policy_count();
    if count <= cfg.enumeration_cap {
        for idx in 0..count {
            let cand = PolicyParams::enumerate_deterministic(env, idx);
            let mu = env::expected_features(env, &cand)?;
            let score = state.inverse_norm_sq(&linalg::sub(&mu_ref, &mu));
            if score > best.score {
                best.policy = cand;
                best.score = score;
            }
        }
        best.enumerated = true;
        return Ok(best);
    }

    let n = mu_ref.len();
    let eig = state.inverse().clone().symmetric_eigen();
    let mut seeds: Vec<Vec<f64>> = Vec::with_capacity(2 * n + cfg.restarts);
    for i in 0..n {
        let axis: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        seeds.push(linalg::scale(&axis, -1.0));
        seeds.push(axis);
    }
    for _ in 0..cfg.restarts {
        seeds.push((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
    }
    for seed in seeds {
        let mut cand = env::greedy_table(env, &seed);
        let mut score = 0.0;
        for _ in 0..LINEARIZATION_ROUNDS {
            let diff = linalg::sub(&env::expected_features(env, &cand)?, &mu_ref);
            let next_score = state.inverse_norm_sq(&diff);
            if next_score <= score {
                break;
            }
            score = next_score;
            if score > best.score {
                best.policy = cand.clone();
                best.score = score;
            }
            cand = env::greedy_table(env, &linalg::mat_vec(state.inverse(), &diff));
        }
    }

    let width = env.horizon() * env.dim();
    for _ in 0..cfg.restarts {
        let weights: Vec<f64> = (0..width).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut cand = PolicyParams::softmax(env.horizon(), env.dim(), weights)?;
        for _ in 0..cfg.steps {
            let mu = env::expected_features(env, &cand)?;
            let diff = linalg::sub(&mu, &mu_ref);
            let score = state.inverse_norm_sq(&diff);
            if score > best.score {
                best.policy = cand.clone();
                best.score = score;
            }
            if score <= 0.0 {
                break;
            }
            // d score / d mu = 2 Sigma^{-1} (mu - mu_ref); ascend ln(score).
            let direction = linalg::scale(&linalg::mat_vec(state.inverse(), &diff), 2.0 / score);
            let grad = policy::value_gradient(&cand, env, &direction);
            let w = cand.weights_mut().expect("softmax candidate");
            linalg::axpy(cfg.step_size, &grad, w);
            linalg::project_blocks(w, env.dim(), cfg.weight_radius);
        }
        let mu = env::expected_features(env, &cand)?;
        let score = state.inverse_norm_sq(&linalg::sub(&mu, &mu_ref));
        if score > best.score {
            best.policy = cand;
            best.score = score;
        }
    }
    Ok(best)
}
