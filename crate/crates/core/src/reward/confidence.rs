use nalgebra::DMatrix;

use super::barrier::{self, BarrierOptions, Constraints, Objective};
use super::RewardParams;
use crate::env::{self, MdpInstance};
use crate::error::{PbpoError, Result};
use crate::layout::{FeatureLayout, Granularity};
use crate::linalg;
use crate::policy::PolicyParams;
use crate::preference::{PairStats, PreferenceDataset};

/// Slack allowed when testing membership of the likelihood sub-level set.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Confidence radius `zeta_k`.
///
/// Sequence level: `c * d * ln((k + 1) / delta)`.
/// Token level: `c * d * H * ln((k + 1) * sqrt(H) / delta)`.
pub fn zeta_schedule(k: usize, layout: FeatureLayout, delta: f64, c_zeta: f64) -> f64 {
    let kk = (k + 1) as f64;
    let d = layout.dim as f64;
    match layout.granularity {
        Granularity::SequenceLevel => c_zeta * d * (kk / delta).ln(),
        Granularity::TokenLevel => {
            let h = layout.horizon as f64;
            c_zeta * d * h * (kk * h.sqrt() / delta).ln()
        }
    }
}

/// The set `{ r : LL(r) >= mle_value - zeta }` intersected with the bounded
/// parameter class.
#[derive(Debug, Clone)]
pub struct ConfidenceSetSpec {
    pub zeta: f64,
    pub mle_value: f64,
    pub mle_params: RewardParams,
    pub c_zeta: f64,
    pub delta: f64,
    /// Ridge weight used by the fit; bounds how far any feasible
    /// log-likelihood may exceed `mle_value`.
    pub ridge: f64,
}

impl ConfidenceSetSpec {
    pub fn ll_floor(&self) -> f64 {
        self.mle_value - self.zeta
    }

    fn stale_tolerance(&self) -> f64 {
        let b = self.mle_params.bound();
        1e-6 + self.ridge * b * b * self.mle_params.layout().n_blocks() as f64
    }
}

pub fn in_confidence_set(r: &RewardParams, data: &PreferenceDataset, spec: &ConfidenceSetSpec) -> Result<bool> {
    if r.layout() != spec.mle_params.layout() {
        return Err(PbpoError::DimensionMismatch {
            expected: spec.mle_params.values().len(),
            actual: r.values().len(),
        });
    }
    let ll = data.stats().log_likelihood(r.values());
    if ll > spec.mle_value + spec.stale_tolerance() {
        return Err(PbpoError::Integrity(format!(
            "confidence set is stale: log-likelihood {ll} exceeds the recorded maximum {}",
            spec.mle_value
        )));
    }
    Ok(ll >= spec.ll_floor() - MEMBERSHIP_TOL)
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    /// `min_r <r, gap>` over the confidence set.
    pub value: f64,
    pub params: RewardParams,
    /// Lagrange multiplier of the log-likelihood constraint at the solution.
    pub ll_multiplier: f64,
    pub converged: bool,
}

/// `min_{r in R(D)} J(pi, r) - J(pi_ref, r)` with exact feature expectations.
pub fn min_gap_over_confidence_set(
    env: &MdpInstance,
    data: &PreferenceDataset,
    spec: &ConfidenceSetSpec,
    pi: &PolicyParams,
    pi_ref: &PolicyParams,
) -> Result<InnerSolution> {
    env.check_reward(&spec.mle_params)?;
    let mu = env::expected_features(env, pi)?;
    let mu_ref = env::expected_features(env, pi_ref)?;
    let gap = linalg::sub(&mu, &mu_ref);
    min_linear_over_confidence_set(&gap, data.stats(), spec)
}

/// Minimizes `<r, gap>` over the confidence set.
///
/// Exact shortcuts cover the zero gap, a degenerate radius, and the case
/// where the ball-only minimizer already satisfies the likelihood floor;
/// otherwise a log-barrier interior-point solve runs from the MLE.
pub fn min_linear_over_confidence_set(
    gap: &[f64],
    stats: &PairStats,
    spec: &ConfidenceSetSpec,
) -> Result<InnerSolution> {
    let layout = spec.mle_params.layout();
    let bound = spec.mle_params.bound();
    if gap.len() != layout.stacked_dim() {
        return Err(PbpoError::DimensionMismatch {
            expected: layout.stacked_dim(),
            actual: gap.len(),
        });
    }
    let theta_hat = spec.mle_params.values();
    if linalg::max_abs(gap) <= 1e-15 {
        return Ok(InnerSolution {
            value: 0.0,
            params: spec.mle_params.clone(),
            ll_multiplier: 0.0,
            converged: true,
        });
    }
    if !(spec.zeta >= 0.0) {
        return Err(PbpoError::config(format!("confidence radius must be >= 0, got {}", spec.zeta)));
    }

    // Ball-only minimizer: each block points against its gap block.
    let mut ball_min = theta_hat.to_vec();
    for (b, g) in gap.chunks(layout.dim).enumerate() {
        let n = linalg::norm(g);
        if n > 0.0 {
            for (i, gi) in g.iter().enumerate() {
                ball_min[b * layout.dim + i] = -bound * gi / n;
            }
        }
    }
    if stats.log_likelihood(&ball_min) >= spec.ll_floor() {
        let params = RewardParams::projected(layout, bound, ball_min)?;
        return Ok(InnerSolution {
            value: linalg::dot(gap, params.values()),
            params,
            ll_multiplier: 0.0,
            converged: true,
        });
    }
    if spec.zeta <= 1e-12 {
        return Ok(InnerSolution {
            value: linalg::dot(gap, theta_hat),
            params: spec.mle_params.clone(),
            ll_multiplier: f64::INFINITY,
            converged: true,
        });
    }

    let constraints = Constraints {
        block_dim: layout.dim,
        radius: bound,
        ll_floor: Some((stats, spec.ll_floor())),
        cut: None,
    };
    let start = strictly_feasible_start(theta_hat, &constraints, layout.dim, bound).ok_or_else(|| {
        PbpoError::Integrity("confidence set has no strictly feasible point near the MLE".into())
    })?;
    let out = barrier::minimize(
        &Objective::Linear(gap),
        &constraints,
        &start,
        BarrierOptions {
            t0: 1.0 / linalg::norm(gap).max(1e-12),
            ..BarrierOptions::default()
        },
    );
    let params = RewardParams::projected(layout, bound, out.theta)?;
    Ok(InnerSolution {
        value: linalg::dot(gap, params.values()),
        params,
        ll_multiplier: out.ll_multiplier,
        converged: out.converged,
    })
}

/// Minimizes the convex quadratic `theta' M theta` over the confidence set.
///
/// With `M = J J'` for the feature Jacobian `J` of a policy, the square root
/// of the minimum is the best first-order certified improvement rate of that
/// policy, and the minimizer defines the ascent direction `J' theta`.
pub fn min_quadratic_over_confidence_set(
    m: &DMatrix<f64>,
    stats: &PairStats,
    spec: &ConfidenceSetSpec,
) -> Result<(f64, RewardParams)> {
    let layout = spec.mle_params.layout();
    let bound = spec.mle_params.bound();
    let n = layout.stacked_dim();
    if m.nrows() != n || m.ncols() != n {
        return Err(PbpoError::DimensionMismatch {
            expected: n,
            actual: m.nrows(),
        });
    }
    let zero = vec![0.0; n];
    if stats.log_likelihood(&zero) >= spec.ll_floor() {
        return Ok((0.0, RewardParams::zeros(layout, bound)));
    }
    let constraints = Constraints {
        block_dim: layout.dim,
        radius: bound,
        ll_floor: Some((stats, spec.ll_floor())),
        cut: None,
    };
    let start = strictly_feasible_start(spec.mle_params.values(), &constraints, layout.dim, bound)
        .ok_or_else(|| PbpoError::Integrity("confidence set has no strictly feasible point near the MLE".into()))?;
    let out = barrier::minimize(
        &Objective::Quadratic(m),
        &constraints,
        &start,
        BarrierOptions {
            t0: 1.0 / m.trace().max(1e-12),
            ..BarrierOptions::default()
        },
    );
    let params = RewardParams::projected(layout, bound, out.theta)?;
    Ok((linalg::quad_form(m, params.values()).max(0.0), params))
}

/// Minimizes `theta' M theta` over the part of the confidence set where
/// `<g, theta> <= level`.
///
/// With `g` a policy's feature gap and `level` its certified value plus
/// `eps`, this is the eps-active set of the inner problem, and the minimizer
/// gives the steepest eps-ascent direction `J' theta`. `near` must be a
/// member of that set (typically the current worst-case reward).
pub fn min_quadratic_over_active_set(
    m: &DMatrix<f64>,
    stats: &PairStats,
    spec: &ConfidenceSetSpec,
    g: &[f64],
    level: f64,
    near: &RewardParams,
) -> Result<(f64, RewardParams)> {
    let layout = spec.mle_params.layout();
    let bound = spec.mle_params.bound();
    let n = layout.stacked_dim();
    if m.nrows() != n || m.ncols() != n || g.len() != n {
        return Err(PbpoError::DimensionMismatch {
            expected: n,
            actual: if g.len() != n { g.len() } else { m.nrows() },
        });
    }
    let constraints = Constraints {
        block_dim: layout.dim,
        radius: bound,
        ll_floor: Some((stats, spec.ll_floor())),
        cut: Some((g, level)),
    };
    // Pull the boundary point towards the MLE until it is strictly inside.
    let theta_hat = spec.mle_params.values();
    let mut s = 0.5;
    let mut start = None;
    for _ in 0..60 {
        let mut cand: Vec<f64> = near.values().iter().zip(theta_hat).map(|(a, b)| (1.0 - s) * a + s * b).collect();
        linalg::project_blocks(&mut cand, layout.dim, bound * (1.0 - 1e-9));
        if constraints.strictly_feasible(&cand) {
            start = Some(cand);
            break;
        }
        s *= 0.5;
    }
    let Some(start) = start else {
        return Ok((linalg::quad_form(m, near.values()).max(0.0), near.clone()));
    };
    let out = barrier::minimize(
        &Objective::Quadratic(m),
        &constraints,
        &start,
        BarrierOptions {
            t0: 1.0 / m.trace().max(1e-12),
            ..BarrierOptions::default()
        },
    );
    let params = RewardParams::projected(layout, bound, out.theta)?;
    Ok((linalg::quad_form(m, params.values()).max(0.0), params))
}

fn strictly_feasible_start(theta_hat: &[f64], constraints: &Constraints<'_>, dim: usize, bound: f64) -> Option<Vec<f64>> {
    if constraints.strictly_feasible(theta_hat) {
        return Some(theta_hat.to_vec());
    }
    let mut shrink = 1e-6;
    for _ in 0..40 {
        let mut cand = theta_hat.to_vec();
        linalg::project_blocks(&mut cand, dim, bound * (1.0 - shrink));
        if constraints.strictly_feasible(&cand) {
            return Some(cand);
        }
        shrink *= 0.5;
    }
    None
}
