//! Bradley-Terry-Luce preferences, the simulated labeler, and the
//! accumulating preference dataset.
//!
//! Label convention: `o = 1` means the first trajectory `tau0` is preferred,
//! with probability `Psi(r(tau0) - r(tau1))`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;

use crate::env::Trajectory;
use crate::error::{PbpoError, Result};
use crate::linalg;
use crate::reward::RewardParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkFunction {
    pub kind: LinkKind,
    /// `sup 1/Psi'` over the attainable reward-gap range.
    pub kappa_bound: f64,
}

impl LinkFunction {
    /// Sigmoid link with its curvature constant over gaps in `[-max_gap, max_gap]`.
    pub fn sigmoid(max_gap: f64) -> Self {
        // 1/sigma'(m) = (1 + e^m)^2 / e^m = e^m + 2 + e^-m
        let kappa_bound = max_gap.exp() + 2.0 + (-max_gap).exp();
        LinkFunction {
            kind: LinkKind::Sigmoid,
            kappa_bound,
        }
    }

    pub fn for_params(r: &RewardParams) -> Self {
        Self::sigmoid(r.max_reward_gap())
    }

    #[inline]
    pub fn prob(&self, gap: f64) -> f64 {
        match self.kind {
            LinkKind::Sigmoid => linalg::sigmoid(gap),
        }
    }

    #[inline]
    pub fn log_prob(&self, gap: f64) -> f64 {
        match self.kind {
            LinkKind::Sigmoid => linalg::log_sigmoid(gap),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub tau0: Trajectory,
    pub tau1: Trajectory,
    /// 1 when `tau0` is preferred.
    pub label: u8,
    pub iteration: usize,
}

impl PreferenceRecord {
    pub fn feature_gap(&self) -> Vec<f64> {
        linalg::sub(&self.tau0.seq_feature, &self.tau1.seq_feature)
    }
}

/// Records grouped by their (sign-canonical) feature gap.
///
/// The log-likelihood of a linear reward depends on a record only through
/// `z = phi(tau0) - phi(tau1)` and its label, so identical gaps collapse into
/// one row with win/loss counts. Solvers evaluate on these rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairStats {
    dim: usize,
    gaps: Vec<f64>,
    wins: Vec<f64>,
    losses: Vec<f64>,
    index: HashMap<Vec<u64>, usize>,
    total: usize,
}

/// Logistic quantities at one point, from a single exponential and without
/// cancellation in either tail.
struct Logistic {
    /// `-ln sigmoid(x)`
    nll_pos: f64,
    /// `-ln sigmoid(-x)`
    nll_neg: f64,
    sig_pos: f64,
    sig_neg: f64,
}

impl Logistic {
    #[inline]
    fn at(x: f64) -> Self {
        let e = (-x.abs()).exp();
        let small = e.ln_1p();
        let big = x.abs() + small;
        let hi = 1.0 / (1.0 + e);
        let lo = e * hi;
        if x >= 0.0 {
            Logistic { nll_pos: small, nll_neg: big, sig_pos: hi, sig_neg: lo }
        } else {
            Logistic { nll_pos: big, nll_neg: small, sig_pos: lo, sig_neg: hi }
        }
    }
}

impl PairStats {
    pub fn new(dim: usize) -> Self {
        PairStats {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.wins.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn gap(&self, u: usize) -> &[f64] {
        &self.gaps[u * self.dim..(u + 1) * self.dim]
    }

    /// Adds one labeled gap; `preferred_first` is `o = 1`.
    pub fn add(&mut self, gap: &[f64], preferred_first: bool) {
        debug_assert_eq!(gap.len(), self.dim);
        let flip = gap.iter().find(|&&x| x != 0.0).is_some_and(|&x| x < 0.0);
        let canon: Vec<f64> = gap
            .iter()
            .map(|&x| {
                let y = if flip { -x } else { x };
                if y == 0.0 {
                    0.0
                } else {
                    y
                }
            })
            .collect();
        let key: Vec<u64> = canon.iter().map(|x| x.to_bits()).collect();
        let u = match self.index.get(&key) {
            Some(&u) => u,
            None => {
                let u = self.wins.len();
                self.gaps.extend_from_slice(&canon);
                self.wins.push(0.0);
                self.losses.push(0.0);
                self.index.insert(key, u);
                u
            }
        };
        if preferred_first != flip {
            self.wins[u] += 1.0;
        } else {
            self.losses[u] += 1.0;
        }
        self.total += 1;
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let mut ll = 0.0;
        for u in 0..self.rows() {
            let x = linalg::dot(theta, self.gap(u));
            let p = Logistic::at(x);
            ll -= self.wins[u] * p.nll_pos + self.losses[u] * p.nll_neg;
        }
        ll
    }

    /// Log-likelihood and its gradient.
    pub fn log_likelihood_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut ll = 0.0;
        for u in 0..self.rows() {
            let z = self.gap(u);
            let p = Logistic::at(linalg::dot(theta, z));
            let (w, l) = (self.wins[u], self.losses[u]);
            ll -= w * p.nll_pos + l * p.nll_neg;
            linalg::axpy(w * p.sig_neg - l * p.sig_pos, z, grad);
        }
        ll
    }

    /// Log-likelihood, gradient and Hessian (negative semidefinite).
    pub fn log_likelihood_hess(&self, theta: &[f64], grad: &mut [f64], hess: &mut DMatrix<f64>) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.fill(0.0);
        let n = self.dim;
        let mut ll = 0.0;
        for u in 0..self.rows() {
            let z = self.gap(u);
            let p = Logistic::at(linalg::dot(theta, z));
            let (w, l) = (self.wins[u], self.losses[u]);
            ll -= w * p.nll_pos + l * p.nll_neg;
            linalg::axpy(w * p.sig_neg - l * p.sig_pos, z, grad);
            let c = (w + l) * p.sig_pos * p.sig_neg;
            if c == 0.0 {
                continue;
            }
            for j in 0..n {
                let czj = c * z[j];
                if czj == 0.0 {
                    continue;
                }
                for i in j..n {
                    hess[(i, j)] -= czj * z[i];
                }
            }
        }
        for j in 0..n {
            for i in 0..j {
                hess[(i, j)] = hess[(j, i)];
            }
        }
        ll
    }

    /// Upper bound on the Lipschitz constant of the log-likelihood gradient.
    pub fn gradient_lipschitz(&self) -> f64 {
        (0..self.rows())
            .map(|u| 0.25 * (self.wins[u] + self.losses[u]) * linalg::dot(self.gap(u), self.gap(u)))
            .sum()
    }
}

/// Append-only list of labeled pairs plus their grouped statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    records: Vec<PreferenceRecord>,
    stats: PairStats,
}

impl PreferenceDataset {
    pub fn new(stacked_dim: usize) -> Self {
        PreferenceDataset {
            records: Vec::new(),
            stats: PairStats::new(stacked_dim),
        }
    }

    pub fn push(&mut self, record: PreferenceRecord) -> Result<()> {
        if record.label > 1 {
            return Err(PbpoError::Integrity(format!("label {} is not binary", record.label)));
        }
        let dim = self.stats.dim();
        for tau in [&record.tau0, &record.tau1] {
            if tau.seq_feature.len() != dim {
                return Err(PbpoError::DimensionMismatch {
                    expected: dim,
                    actual: tau.seq_feature.len(),
                });
            }
        }
        if record.tau0.len() != record.tau1.len() {
            return Err(PbpoError::Integrity("paired trajectories differ in length".into()));
        }
        self.stats.add(&record.feature_gap(), record.label == 1);
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn stats(&self) -> &PairStats {
        &self.stats
    }

    pub fn stacked_dim(&self) -> usize {
        self.stats.dim()
    }
}

/// `Psi(r(tau0) - r(tau1))`, the probability that `tau0` is preferred.
pub fn preference_prob(link: &LinkFunction, r: &RewardParams, tau0: &Trajectory, tau1: &Trajectory) -> f64 {
    let gap = r.reward_of_feature(&tau0.seq_feature) - r.reward_of_feature(&tau1.seq_feature);
    link.prob(gap)
}

/// Draws `o` with `P(o = 1) = preference_prob(...)`; consumes one uniform draw.
pub fn sample_label<R: Rng + ?Sized>(
    link: &LinkFunction,
    r_true: &RewardParams,
    tau0: &Trajectory,
    tau1: &Trajectory,
    rng: &mut R,
) -> u8 {
    let p = preference_prob(link, r_true, tau0, tau1);
    let u: f64 = rng.random();
    u8::from(u < p)
}

/// `sum_n ln P_r(o_n | tau0_n, tau1_n)`; zero for an empty dataset.
pub fn log_likelihood(link: &LinkFunction, r: &RewardParams, data: &PreferenceDataset) -> f64 {
    match link.kind {
        LinkKind::Sigmoid => data.stats().log_likelihood(r.values()),
    }
}

/// Gradient of [`log_likelihood`] with respect to the stacked parameters.
pub fn log_likelihood_gradient(link: &LinkFunction, r: &RewardParams, data: &PreferenceDataset) -> Vec<f64> {
    let mut grad = vec![0.0; r.values().len()];
    match link.kind {
        LinkKind::Sigmoid => {
            data.stats().log_likelihood_grad(r.values(), &mut grad);
        }
    }
    grad
}
