//! Log-barrier interior-point method (damped Newton on the central path)
//! for small convex programs over products of Euclidean balls, optionally
//! with one log-likelihood floor constraint `LL(theta) >= floor` and one
//! linear cut `<g, theta> <= level`.

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::preference::PairStats;

pub(crate) enum Objective<'a> {
    /// `<g, theta>`
    Linear(&'a [f64]),
    /// `theta' M theta` with `M` positive semidefinite
    Quadratic(&'a DMatrix<f64>),
    /// `-LL(theta) + ridge * |theta|^2`
    PenalizedNegLogLik { stats: &'a PairStats, ridge: f64 },
}

pub(crate) struct Constraints<'a> {
    pub block_dim: usize,
    pub radius: f64,
    pub ll_floor: Option<(&'a PairStats, f64)>,
    pub cut: Option<(&'a [f64], f64)>,
}

/// Centering stops once half the scaled Newton decrement drops below this.
const CENTERING_TOL: f64 = 1e-10;

/// Relative decrement below which Armijo comparisons are pure round-off.
const ROUNDOFF: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy)]
pub(crate) struct BarrierOptions {
    /// Stop once the duality-gap bound `m / t` falls below this.
    pub gap_tol: f64,
    pub t0: f64,
    pub growth: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        BarrierOptions {
            gap_tol: 1e-9,
            t0: 1.0,
            growth: 20.0,
            max_newton: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierOutcome {
    pub theta: Vec<f64>,
    pub objective: f64,
    /// Dual estimate for the log-likelihood floor, `1 / (t * slack)`.
    pub ll_multiplier: f64,
    pub converged: bool,
}

struct Workspace {
    grad_f0: Vec<f64>,
    grad_ll: Vec<f64>,
    hess_f0: DMatrix<f64>,
    hess_ll: DMatrix<f64>,
}

impl<'a> Objective<'a> {
    pub(crate) fn value(&self, theta: &[f64]) -> f64 {
        match self {
            Objective::Linear(g) => linalg::dot(g, theta),
            Objective::Quadratic(m) => linalg::quad_form(m, theta),
            Objective::PenalizedNegLogLik { stats, ridge } => {
                -stats.log_likelihood(theta) + ridge * linalg::dot(theta, theta)
            }
        }
    }

    fn derivatives(&self, theta: &[f64], ws: &mut Workspace) -> f64 {
        match self {
            Objective::Linear(g) => {
                ws.grad_f0.copy_from_slice(g);
                ws.hess_f0.fill(0.0);
                linalg::dot(g, theta)
            }
            Objective::Quadratic(m) => {
                let mv = linalg::mat_vec(m, theta);
                for (gi, v) in ws.grad_f0.iter_mut().zip(&mv) {
                    *gi = 2.0 * v;
                }
                ws.hess_f0.copy_from(m);
                ws.hess_f0 *= 2.0;
                linalg::dot(theta, &mv)
            }
            Objective::PenalizedNegLogLik { stats, ridge } => {
                let ll = stats.log_likelihood_hess(theta, &mut ws.grad_f0, &mut ws.hess_f0);
                for (gi, ti) in ws.grad_f0.iter_mut().zip(theta) {
                    *gi = -*gi + 2.0 * ridge * ti;
                }
                ws.hess_f0.neg_mut();
                for i in 0..theta.len() {
                    ws.hess_f0[(i, i)] += 2.0 * ridge;
                }
                -ll + ridge * linalg::dot(theta, theta)
            }
        }
    }
}

impl<'a> Constraints<'a> {
    fn n_constraints(&self, n: usize) -> usize {
        n / self.block_dim + usize::from(self.ll_floor.is_some()) + usize::from(self.cut.is_some())
    }

    /// Barrier value, or `None` outside the strict interior.
    fn barrier(&self, theta: &[f64]) -> Option<f64> {
        let r2 = self.radius * self.radius;
        let mut b = 0.0;
        for block in theta.chunks(self.block_dim) {
            let q = r2 - linalg::dot(block, block);
            if !(q > 0.0) {
                return None;
            }
            b -= q.ln();
        }
        if let Some((stats, floor)) = self.ll_floor {
            let c = stats.log_likelihood(theta) - floor;
            if !(c > 0.0) {
                return None;
            }
            b -= c.ln();
        }
        if let Some((g, level)) = self.cut {
            let c = level - linalg::dot(g, theta);
            if !(c > 0.0) {
                return None;
            }
            b -= c.ln();
        }
        Some(b)
    }

    pub fn strictly_feasible(&self, theta: &[f64]) -> bool {
        self.barrier(theta).is_some()
    }
}

/// Minimizes `objective` over the constraint set starting from a strictly
/// feasible `start`.
pub(crate) fn minimize(
    objective: &Objective<'_>,
    constraints: &Constraints<'_>,
    start: &[f64],
    opts: BarrierOptions,
) -> BarrierOutcome {
    let n = start.len();
    debug_assert!(constraints.strictly_feasible(start));
    let m = constraints.n_constraints(n) as f64;
    let mut ws = Workspace {
        grad_f0: vec![0.0; n],
        grad_ll: vec![0.0; n],
        hess_f0: DMatrix::zeros(n, n),
        hess_ll: DMatrix::zeros(n, n),
    };
    let mut theta = start.to_vec();
    let mut t = opts.t0;
    let mut converged = true;
    let mut last_slack = f64::INFINITY;
    let r2 = constraints.radius * constraints.radius;

    loop {
        // Centering: damped Newton on  f0 + barrier / t.
        let mut centered = false;
        for _ in 0..opts.max_newton {
            let f0 = objective.derivatives(&theta, &mut ws);
            let mut grad = DVector::from_column_slice(&ws.grad_f0);
            let mut hess = ws.hess_f0.clone();
            let inv_t = 1.0 / t;
            for (b, block) in theta.chunks(constraints.block_dim).enumerate() {
                let q = r2 - linalg::dot(block, block);
                let off = b * constraints.block_dim;
                for i in 0..block.len() {
                    grad[off + i] += inv_t * 2.0 * block[i] / q;
                    hess[(off + i, off + i)] += inv_t * 2.0 / q;
                    for j in 0..block.len() {
                        hess[(off + i, off + j)] += inv_t * 4.0 * block[i] * block[j] / (q * q);
                    }
                }
            }
            if let Some((stats, floor)) = constraints.ll_floor {
                let ll = stats.log_likelihood_hess(&theta, &mut ws.grad_ll, &mut ws.hess_ll);
                let c = ll - floor;
                last_slack = c;
                for i in 0..n {
                    grad[i] -= inv_t * ws.grad_ll[i] / c;
                    for j in 0..n {
                        hess[(i, j)] += inv_t
                            * (-ws.hess_ll[(i, j)] / c + ws.grad_ll[i] * ws.grad_ll[j] / (c * c));
                    }
                }
            }
            if let Some((g, level)) = constraints.cut {
                let c = level - linalg::dot(g, &theta);
                for i in 0..n {
                    grad[i] += inv_t * g[i] / c;
                    for j in 0..n {
                        hess[(i, j)] += inv_t * g[i] * g[j] / (c * c);
                    }
                }
            }
            let step = match solve_spd(hess, &grad) {
                Some(s) => s,
                None => {
                    converged = false;
                    break;
                }
            };
            // Newton decrement of the scaled function `t * f0 + barrier`.
            let decrement = grad.dot(&step);
            let current = f0 + inv_t * constraints.barrier(&theta).unwrap_or(f64::INFINITY);
            // Below the round-off floor of `current` no line search can make
            // measurable progress.
            if t * decrement / 2.0 <= CENTERING_TOL || decrement <= ROUNDOFF * (1.0 + current.abs()) {
                centered = true;
                break;
            }
            let mut s = 1.0;
            let mut accepted = false;
            let mut trial = vec![0.0; n];
            for _ in 0..40 {
                for i in 0..n {
                    trial[i] = theta[i] - s * step[i];
                }
                if let Some(bar) = constraints.barrier(&trial) {
                    let val = objective.value(&trial) + inv_t * bar;
                    if val <= current - 0.25 * s * decrement {
                        accepted = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !accepted {
                // Round-off floor reached; the point is as central as we can get.
                centered = true;
                break;
            }
            std::mem::swap(&mut theta, &mut trial);
        }
        if !centered {
            converged = false;
        }
        if m / t < opts.gap_tol {
            break;
        }
        t *= opts.growth;
    }

    let ll_multiplier = if constraints.ll_floor.is_some() && last_slack.is_finite() {
        let c = constraints
            .ll_floor
            .map(|(stats, floor)| stats.log_likelihood(&theta) - floor)
            .unwrap_or(last_slack);
        1.0 / (t * c)
    } else {
        0.0
    };
    BarrierOutcome {
        objective: objective.value(&theta),
        theta,
        ll_multiplier,
        converged,
    }
}

/// Damped Newton on `objective` with no constraints, from `start`.
///
/// Returns the minimizer when the decrement criterion is met within
/// `max_steps`; `None` otherwise. Only meaningful for strictly convex
/// objectives, where the result is the unique global minimizer.
pub(crate) fn newton_unconstrained(objective: &Objective<'_>, start: &[f64], max_steps: usize) -> Option<Vec<f64>> {
    let n = start.len();
    let mut ws = Workspace {
        grad_f0: vec![0.0; n],
        grad_ll: Vec::new(),
        hess_f0: DMatrix::zeros(n, n),
        hess_ll: DMatrix::zeros(0, 0),
    };
    let mut theta = start.to_vec();
    let mut trial = vec![0.0; n];
    for _ in 0..max_steps {
        let f0 = objective.derivatives(&theta, &mut ws);
        let grad = DVector::from_column_slice(&ws.grad_f0);
        let step = solve_spd(ws.hess_f0.clone(), &grad)?;
        let decrement = grad.dot(&step);
        if !decrement.is_finite() {
            return None;
        }
        if decrement / 2.0 <= UNCONSTRAINED_TOL {
            return Some(theta);
        }
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = theta[i] - s * step[i];
            }
            if objective.value(&trial) <= f0 - 0.25 * s * decrement {
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            // Round-off floor: accept only if already essentially optimal.
            return (decrement / 2.0 <= 1e3 * UNCONSTRAINED_TOL).then_some(theta);
        }
        std::mem::swap(&mut theta, &mut trial);
    }
    None
}

/// Newton-decrement stopping level for [`newton_unconstrained`].
const UNCONSTRAINED_TOL: f64 = 1e-15;

fn solve_spd(mut hess: DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = hess.nrows();
    for attempt in 0..6 {
        if let Some(chol) = hess.clone().cholesky() {
            return Some(chol.solve(grad));
        }
        let jitter = 1e-12 * 10f64.powi(2 * attempt);
        for i in 0..n {
            hess[(i, i)] += jitter;
        }
    }
    None
}
