//! The online loop, regret bookkeeping and scaling sweeps.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::env::{self, GeneratorSpec, MdpInstance, Trajectory};
use crate::error::{PbpoError, Result};
use crate::explorer::{self, CovarianceState, EnhancerSearch};
use crate::minmax::{self, SolverConfig, SolverMode, TraceRecord};
use crate::policy::PolicyParams;
use crate::preference::{self, LinkFunction, PreferenceDataset, PreferenceRecord};
use crate::reward::{self, ConfidenceSetSpec, MleConfig};
use crate::rng::SeedStreams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    PbPO,
    /// Both trajectories come from the reference policy; no enhancer.
    NoRewardAgnosticExplor,
    /// Point-estimate pipeline: fit the MLE, then ascend against it.
    NoRewardAwareExplor,
    /// The enhancer is replaced by a uniformly random deterministic table.
    RandomExploration,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::PbPO,
        Method::NoRewardAgnosticExplor,
        Method::NoRewardAwareExplor,
        Method::RandomExploration,
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::PbPO => "pbpo",
            Method::NoRewardAgnosticExplor => "no-reward-agnostic-explor",
            Method::NoRewardAwareExplor => "no-reward-aware-explor",
            Method::RandomExploration => "random-exploration",
        })
    }
}

impl FromStr for Method {
    type Err = PbpoError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s || format!("{m:?}") == s)
            .ok_or_else(|| PbpoError::config(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: GeneratorSpec,
    /// Number of online iterations `K`.
    pub iterations: usize,
    /// Preference pairs per iteration.
    pub batch: usize,
    pub delta: f64,
    pub c_zeta: f64,
    pub lambda: f64,
    pub solver: SolverConfig,
    pub enhancer: EnhancerSearch,
    pub mle: MleConfig,
    pub method: Method,
    pub seed: u64,
    /// Fill the wall-clock column; off by default so logs are reproducible.
    pub record_timing: bool,
}

impl RunConfig {
    pub fn new(env: GeneratorSpec, iterations: usize, seed: u64) -> Self {
        RunConfig {
            env,
            iterations,
            batch: 1,
            delta: 0.1,
            c_zeta: 1.0,
            lambda: 1.0,
            solver: SolverConfig::default(),
            enhancer: EnhancerSearch::default(),
            mle: MleConfig::default(),
            method: Method::PbPO,
            seed,
            record_timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.iterations == 0 {
            return Err(PbpoError::config("loop.K must be at least 1"));
        }
        if self.batch == 0 {
            return Err(PbpoError::config("loop.batch must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(PbpoError::config("loop.delta must lie in (0, 1]"));
        }
        if !(self.c_zeta > 0.0 && self.c_zeta.is_finite()) {
            return Err(PbpoError::config("loop.c_zeta must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(PbpoError::config("loop.lambda must be positive"));
        }
        self.solver.validate()
    }
}

/// One logged iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRow {
    pub k: usize,
    pub instant_regret: f64,
    pub cumulative_regret: f64,
    pub mle_log_likelihood: f64,
    pub zeta: f64,
    pub enhancer_score: f64,
    pub certified_gap: f64,
    pub wall_clock_ms: f64,
}

impl RunRow {
    pub const COLUMNS: [&'static str; 8] = [
        "k",
        "instant_regret",
        "cumulative_regret",
        "mle_log_likelihood",
        "zeta",
        "enhancer_score",
        "certified_gap",
        "wall_clock_ms",
    ];
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub rows: Vec<RunRow>,
    /// Fitted regret exponent over the window `[K/4, K]`.
    pub alpha: f64,
    pub prefactor: f64,
    /// Set when the run stopped early; the rows logged so far are kept.
    pub failure: Option<String>,
    pub final_policy: PolicyParams,
    pub dataset: PreferenceDataset,
    /// Confidence set after the last completed iteration.
    pub final_confidence: Option<ConfidenceSetSpec>,
    pub kappa_bound: f64,
    /// Solver traces tagged by iteration, when requested.
    pub trace: Vec<(usize, TraceRecord)>,
}

impl RunLog {
    pub fn final_cumulative_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cumulative_regret)
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Checks the regret-column invariants: instantaneous regret is
    /// nonnegative and the cumulative column is its running sum.
    pub fn check_regret_columns(&self) -> Result<()> {
        let mut acc = 0.0;
        for row in &self.rows {
            acc += row.instant_regret;
            if row.instant_regret < -1e-9 {
                return Err(PbpoError::Integrity(format!(
                    "negative regret {} at k={}",
                    row.instant_regret, row.k
                )));
            }
            if (acc - row.cumulative_regret).abs() > 1e-9 * acc.abs().max(1.0) {
                return Err(PbpoError::Integrity(format!(
                    "cumulative regret {} does not match running sum {acc} at k={}",
                    row.cumulative_regret, row.k
                )));
            }
        }
        Ok(())
    }
}

/// `J(pi*, r*)` cached for repeated regret evaluation.
#[derive(Debug, Clone)]
pub struct RegretOracle {
    pub optimal_policy: PolicyParams,
    pub optimal_value: f64,
}

impl RegretOracle {
    pub fn new(env: &MdpInstance) -> Result<Self> {
        let optimal_policy = env::optimal_policy(env, env.true_params())?;
        let optimal_value = env::policy_value(env, env.true_params(), &optimal_policy)?;
        Ok(RegretOracle {
            optimal_policy,
            optimal_value,
        })
    }

    pub fn regret(&self, env: &MdpInstance, pi: &PolicyParams) -> Result<f64> {
        Ok(self.optimal_value - env::policy_value(env, env.true_params(), pi)?)
    }
}

/// `J(pi*, r*) - J(pi_k, r*)` with exact values.
pub fn compute_regret_row(env: &MdpInstance, pi_k: &PolicyParams) -> Result<f64> {
    RegretOracle::new(env)?.regret(env, pi_k)
}

/// Least-squares fit of `ln R(k) = ln c + alpha ln k` over `k in [K/4, K]`,
/// skipping nonpositive entries. Returns `(alpha, c)`, NaN when fewer than
/// two usable points remain.
pub fn fit_regret_exponent(rows: &[RunRow]) -> (f64, f64) {
    let big_k = rows.len();
    let lo = (big_k / 4).max(1);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.k >= lo && r.cumulative_regret > 0.0)
        .map(|r| ((r.k as f64).ln(), r.cumulative_regret.ln()))
        .collect();
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let alpha = sxy / sxx;
    (alpha, (my - alpha * mx).exp())
}

/// The cumulative-regret curve lies on or above the chord joining its values
/// at `K/4` and `K`, the discrete concavity notion used over the fit window.
pub fn concave_in_fit_window(rows: &[RunRow]) -> bool {
    let big_k = rows.len();
    let lo = (big_k / 4).max(1);
    let Some(first) = rows.iter().find(|r| r.k == lo) else {
        return true;
    };
    let Some(last) = rows.last() else {
        return true;
    };
    if last.k == first.k {
        return true;
    }
    let span = (last.k - first.k) as f64;
    rows.iter().filter(|r| r.k >= lo).all(|r| {
        let t = (r.k - first.k) as f64 / span;
        let chord = first.cumulative_regret + t * (last.cumulative_regret - first.cumulative_regret);
        r.cumulative_regret >= chord - 1e-9
    })
}

fn random_table<R: Rng + ?Sized>(env: &MdpInstance, rng: &mut R) -> Result<PolicyParams> {
    let actions = (0..env.horizon() * env.states())
        .map(|_| rng.random_range(0..env.actions()))
        .collect();
    PolicyParams::deterministic(env.horizon(), env.states(), actions)
}

/// Builds the instance a config describes, from the `env-gen` stream.
pub fn build_instance(cfg: &RunConfig) -> Result<MdpInstance> {
    let streams = SeedStreams::new(cfg.seed);
    env::generate(&cfg.env, &mut streams.stream(SeedStreams::ENV_GEN))
}

/// Runs the online loop for `cfg.iterations` iterations.
///
/// Configuration errors are returned as `Err`; solver failures end the run
/// early with the partial log kept and [`RunLog::failure`] set.
pub fn run_online_loop(cfg: &RunConfig) -> Result<RunLog> {
    cfg.validate()?;
    let env = build_instance(cfg)?;
    run_online_loop_on(cfg, &env)
}

/// [`run_online_loop`] on a prebuilt instance.
pub fn run_online_loop_on(cfg: &RunConfig, env: &MdpInstance) -> Result<RunLog> {
    cfg.validate()?;
    let streams = SeedStreams::new(cfg.seed);
    let mut traj_rng = streams.stream(SeedStreams::TRAJECTORY);
    let mut oracle_rng = streams.stream(SeedStreams::ORACLE);
    let mut solver_rng = streams.stream(SeedStreams::SOLVER_RESTARTS);
    let mut explore_rng = streams.stream(SeedStreams::EXPLORATION);

    let layout = env.layout();
    let link = LinkFunction::for_params(env.true_params());
    let regret = RegretOracle::new(env)?;
    let mut cov = CovarianceState::new(env.stacked_dim(), cfg.lambda)?;
    let mut data = PreferenceDataset::new(env.stacked_dim());
    let mut pi = PolicyParams::uniform_for(env);
    let mut warm: Option<Vec<f64>> = None;
    let mut rows = Vec::with_capacity(cfg.iterations);
    let mut trace = Vec::new();
    let mut final_confidence = None;
    let mut failure = None;
    let mut cumulative = 0.0;

    for k in 1..=cfg.iterations {
        let started = Instant::now();
        let pi_ref = pi.clone();

        let (explore_policy, enhancer_score) = match cfg.method {
            Method::PbPO | Method::NoRewardAwareExplor => {
                let choice = explorer::optimize_enhancer(&cov, &pi_ref, env, &cfg.enhancer, &mut explore_rng)?;
                (choice.policy, choice.score)
            }
            Method::NoRewardAgnosticExplor => (pi_ref.clone(), 0.0),
            Method::RandomExploration => {
                let table = random_table(env, &mut explore_rng)?;
                let score = explorer::uncertainty_score(&cov, &pi_ref, &table, env)?;
                (table, score)
            }
        };
        for _ in 0..cfg.batch {
            let s0 = env::sample_initial_state(env, &mut traj_rng);
            let tau0: Trajectory = env::sample_trajectory_from(env, &pi_ref, s0, &mut traj_rng)?;
            let tau1 = env::sample_trajectory_from(env, &explore_policy, s0, &mut traj_rng)?;
            let label = preference::sample_label(&link, env.true_params(), &tau0, &tau1, &mut oracle_rng);
            cov.absorb(&crate::linalg::sub(&tau0.seq_feature, &tau1.seq_feature))?;
            data.push(PreferenceRecord {
                tau0,
                tau1,
                label,
                iteration: k,
            })?;
        }

        let fit = reward::fit_mle(&data, layout, env.bound(), &cfg.mle, warm.as_deref(), &mut solver_rng)?;
        warm = Some(fit.params.values().to_vec());
        let zeta = reward::zeta_schedule(k, layout, cfg.delta, cfg.c_zeta);
        let spec = ConfidenceSetSpec {
            zeta,
            mle_value: fit.log_likelihood,
            mle_params: fit.params.clone(),
            c_zeta: cfg.c_zeta,
            delta: cfg.delta,
            ridge: cfg.mle.ridge,
        };

        let solved = match (cfg.method, cfg.solver.mode) {
            (Method::NoRewardAwareExplor, _) => {
                minmax::ascend_point_estimate(env, &fit.params, &pi_ref, &cfg.solver, &mut solver_rng)
            }
            (_, SolverMode::ConstrainedExact) => {
                minmax::solve_constrained(env, &data, &spec, &pi_ref, &cfg.solver, &mut solver_rng)
            }
            (_, SolverMode::StackelbergLagrangian) => {
                minmax::stackelberg_solve(env, &data, &pi_ref, Some(&fit.params), &cfg.solver, &mut solver_rng)
            }
        };
        let solution = match solved {
            Ok(s) => s,
            Err(e @ PbpoError::Diverged(_)) => {
                failure = Some(format!("iteration {k}: {e}"));
                final_confidence = Some(spec);
                break;
            }
            Err(e) => return Err(e),
        };
        trace.extend(solution.trace.iter().map(|t| (k, *t)));
        pi = solution.policy;

        let instant = regret.regret(env, &pi)?;
        cumulative += instant;
        rows.push(RunRow {
            k,
            instant_regret: instant,
            cumulative_regret: cumulative,
            mle_log_likelihood: fit.log_likelihood,
            zeta,
            enhancer_score,
            certified_gap: solution.gap,
            wall_clock_ms: if cfg.record_timing {
                started.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
        final_confidence = Some(spec);
    }

    let (alpha, prefactor) = fit_regret_exponent(&rows);
    Ok(RunLog {
        rows,
        alpha,
        prefactor,
        failure,
        final_policy: pi,
        dataset: data,
        final_confidence,
        kappa_bound: link.kappa_bound,
        trace,
    })
}

/// One axis value of a scaling sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variation {
    Dim(usize),
    Horizon(usize),
    Iterations(usize),
    Method(Method),
    Beta(f64),
}

impl Variation {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        match *self {
            Variation::Dim(d) => cfg.env.dim = d,
            Variation::Horizon(h) => cfg.env.horizon = h,
            Variation::Iterations(k) => cfg.iterations = k,
            Variation::Method(m) => cfg.method = m,
            Variation::Beta(b) => cfg.solver.beta = b,
        }
        cfg
    }
}

impl fmt::Display for Variation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variation::Dim(d) => write!(f, "d={d}"),
            Variation::Horizon(h) => write!(f, "H={h}"),
            Variation::Iterations(k) => write!(f, "K={k}"),
            Variation::Method(m) => write!(f, "method={m}"),
            Variation::Beta(b) => write!(f, "beta={b}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellRun {
    pub variation: Variation,
    pub seed: u64,
    pub outcome: std::result::Result<RunLog, String>,
}

impl CellRun {
    /// The log of a run that completed every iteration.
    pub fn completed(&self) -> Option<&RunLog> {
        self.outcome.as_ref().ok().filter(|l| !l.is_failed())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub variation: Variation,
    pub completed: usize,
    pub failed: usize,
    pub mean_cumulative_regret: f64,
    pub stderr_cumulative_regret: f64,
    pub mean_alpha: f64,
    pub stderr_alpha: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteSummary {
    pub cells: Vec<CellSummary>,
    pub runs: Vec<CellRun>,
}

impl SuiteSummary {
    pub fn cell(&self, variation: Variation) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.variation == variation)
    }

    /// Final cumulative regret of a completed run, by cell and seed.
    pub fn final_regret(&self, variation: Variation, seed: u64) -> Option<f64> {
        self.runs
            .iter()
            .find(|r| r.variation == variation && r.seed == seed)
            .and_then(CellRun::completed)
            .map(RunLog::final_cumulative_regret)
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every `(variation, seed)` cell in parallel and aggregates per
/// variation. Failed cells are reported, not fatal.
pub fn run_scaling_suite(base: &RunConfig, variations: &[Variation], seeds: &[u64]) -> Result<SuiteSummary> {
    if seeds.len() < 3 {
        return Err(PbpoError::config("a scaling suite needs at least 3 seeds per cell"));
    }
    if variations.is_empty() {
        return Err(PbpoError::config("a scaling suite needs at least one variation"));
    }
    for v in variations {
        let mut cfg = v.apply(base);
        cfg.seed = seeds[0];
        cfg.validate()?;
    }
    let jobs: Vec<(Variation, u64)> = variations
        .iter()
        .flat_map(|v| seeds.iter().map(move |s| (*v, *s)))
        .collect();
    let runs: Vec<CellRun> = jobs
        .par_iter()
        .map(|&(variation, seed)| {
            let mut cfg = variation.apply(base);
            cfg.seed = seed;
            let outcome = run_online_loop(&cfg).map_err(|e| e.to_string());
            CellRun {
                variation,
                seed,
                outcome,
            }
        })
        .collect();

    let cells = variations
        .iter()
        .map(|&variation| {
            let of_cell: Vec<&CellRun> = runs.iter().filter(|r| r.variation == variation).collect();
            let done: Vec<&RunLog> = of_cell.iter().filter_map(|r| r.completed()).collect();
            let regrets: Vec<f64> = done.iter().map(|l| l.final_cumulative_regret()).collect();
            let alphas: Vec<f64> = done.iter().map(|l| l.alpha).filter(|a| a.is_finite()).collect();
            let (mean_cumulative_regret, stderr_cumulative_regret) = mean_stderr(&regrets);
            let (mean_alpha, stderr_alpha) = mean_stderr(&alphas);
            CellSummary {
                variation,
                completed: done.len(),
                failed: of_cell.len() - done.len(),
                mean_cumulative_regret,
                stderr_cumulative_regret,
                mean_alpha,
                stderr_alpha,
            }
        })
        .collect();
    Ok(SuiteSummary { cells, runs })
}
