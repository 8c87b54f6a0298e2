use rand::Rng;

use super::barrier::{self, BarrierOptions, Constraints, Objective};
use super::RewardParams;
use crate::error::Result;
use crate::layout::FeatureLayout;
use crate::linalg;
use crate::preference::PreferenceDataset;

/// Newton steps tried without constraints before falling back to the barrier.
const UNCONSTRAINED_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleConfig {
    pub ridge: f64,
    /// Random restarts in addition to the zero start.
    pub restarts: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            ridge: 1e-6,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MleFit {
    pub params: RewardParams,
    /// Plain log-likelihood at `params` (no ridge term).
    pub log_likelihood: f64,
    /// `LL - ridge * |theta|^2`, the maximized objective.
    pub objective: f64,
    /// Objective reached from each start, in start order.
    pub start_objectives: Vec<f64>,
    pub converged: bool,
}

/// Ridge-penalized maximum-likelihood fit over the bounded parameter class.
///
/// Every start (zero, the optional warm start, then uniform draws inside the
/// ball) runs the interior-point solver; the best objective wins.
pub fn fit_mle<R: Rng + ?Sized>(
    data: &PreferenceDataset,
    layout: FeatureLayout,
    bound: f64,
    cfg: &MleConfig,
    warm_start: Option<&[f64]>,
    rng: &mut R,
) -> Result<MleFit> {
    let stats = data.stats();
    let n = layout.stacked_dim();
    if stats.is_empty() {
        return Ok(MleFit {
            params: RewardParams::zeros(layout, bound),
            log_likelihood: 0.0,
            objective: 0.0,
            start_objectives: vec![0.0],
            converged: true,
        });
    }
    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; n]];
    if let Some(w) = warm_start {
        let mut w = w.to_vec();
        linalg::project_blocks(&mut w, layout.dim, 0.99 * bound);
        starts.push(w);
    }
    for _ in 0..cfg.restarts {
        starts.push(random_interior(layout, bound, rng));
    }

    let objective = Objective::PenalizedNegLogLik {
        stats,
        ridge: cfg.ridge,
    };
    let constraints = Constraints {
        block_dim: layout.dim,
        radius: bound,
        ll_floor: None,
        cut: None,
    };
    let opts = BarrierOptions {
        gap_tol: 1e-10,
        ..BarrierOptions::default()
    };
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    let mut start_objectives = Vec::with_capacity(starts.len());
    for start in &starts {
        // The objective is strictly convex, so an unconstrained minimizer
        // strictly inside the ball is the constrained one.
        let (theta, value, converged) = match barrier::newton_unconstrained(&objective, start, UNCONSTRAINED_STEPS)
            .filter(|t| t.chunks(layout.dim).all(|b| linalg::norm(b) < bound))
        {
            Some(t) => {
                let v = -objective.value(&t);
                (t, v, true)
            }
            None => {
                let out = barrier::minimize(&objective, &constraints, start, opts);
                (out.theta, -out.objective, out.converged)
            }
        };
        start_objectives.push(value);
        if best.as_ref().is_none_or(|(b, _, _)| value > *b) {
            best = Some((value, theta, converged));
        }
    }
    let (obj, theta, converged) = best.expect("at least one start");
    let params = RewardParams::projected(layout, bound, theta)?;
    let log_likelihood = stats.log_likelihood(params.values());
    Ok(MleFit {
        params,
        log_likelihood,
        objective: obj,
        start_objectives,
        converged,
    })
}

fn random_interior<R: Rng + ?Sized>(layout: FeatureLayout, bound: f64, rng: &mut R) -> Vec<f64> {
    let mut v = Vec::with_capacity(layout.stacked_dim());
    for _ in 0..layout.n_blocks() {
        let dir = crate::env::generators::random_unit(layout.dim, rng);
        let radius = 0.9 * bound * rng.random::<f64>().powf(1.0 / layout.dim as f64);
        v.extend(dir.into_iter().map(|x| x * radius));
    }
    v
}
