//! Text artifacts: run-log CSV, summaries, policies, preference dumps and
//! instance descriptions.

use std::fmt::Write as _;

use crate::env::{self, MdpInstance};
use crate::error::{PbpoError, Result};
use crate::harness::{RunConfig, RunLog, RunRow, SuiteSummary};
use crate::minmax::TraceRecord;
use crate::policy::PolicyParams;
use crate::preference::PreferenceDataset;

/// Reals are written with 17 significant digits so they parse back exactly.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_real(s: &str, what: &'static str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| PbpoError::Parse {
        what,
        line,
        message: format!("'{s}': {e}"),
    })
}

pub fn runlog_csv(rows: &[RunRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| PbpoError::Integrity(format!("csv write: {e}"));
    w.write_record(RunRow::COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            fmt_real(r.instant_regret),
            fmt_real(r.cumulative_regret),
            fmt_real(r.mle_log_likelihood),
            fmt_real(r.zeta),
            fmt_real(r.enhancer_score),
            fmt_real(r.certified_gap),
            fmt_real(r.wall_clock_ms),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| PbpoError::Integrity(format!("csv flush: {e}")))?;
    String::from_utf8(bytes).map_err(|e| PbpoError::Integrity(e.to_string()))
}

pub fn parse_runlog_csv(text: &str) -> Result<Vec<RunRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| PbpoError::Parse {
        what: "run log",
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(RunRow::COLUMNS) {
        return Err(PbpoError::Parse {
            what: "run log",
            line: 1,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| PbpoError::Parse {
            what: "run log",
            line,
            message: e.to_string(),
        })?;
        if rec.len() != RunRow::COLUMNS.len() {
            return Err(PbpoError::Parse {
                what: "run log",
                line,
                message: format!("expected {} fields, got {}", RunRow::COLUMNS.len(), rec.len()),
            });
        }
        let k = rec[0].parse::<usize>().map_err(|e| PbpoError::Parse {
            what: "run log",
            line,
            message: format!("k: {e}"),
        })?;
        let f = |j: usize| parse_real(&rec[j], "run log", line);
        rows.push(RunRow {
            k,
            instant_regret: f(1)?,
            cumulative_regret: f(2)?,
            mle_log_likelihood: f(3)?,
            zeta: f(4)?,
            enhancer_score: f(5)?,
            certified_gap: f(6)?,
            wall_clock_ms: f(7)?,
        });
    }
    Ok(rows)
}

/// Key-value summary of a run; its presence marks the run complete.
pub fn run_summary(cfg: &RunConfig, log: &RunLog) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "status = {}", if log.is_failed() { "failed" } else { "ok" });
    if let Some(f) = &log.failure {
        let _ = writeln!(s, "failure = {f}");
    }
    let _ = writeln!(s, "method = {}", cfg.method);
    let _ = writeln!(s, "solver.mode = {}", cfg.solver.mode);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "env.generator = {}", cfg.env.kind);
    let _ = writeln!(s, "env.d = {}", cfg.env.dim);
    let _ = writeln!(s, "env.H = {}", cfg.env.horizon);
    let _ = writeln!(s, "env.actions = {}", cfg.env.actions);
    let _ = writeln!(s, "env.states = {}", cfg.env.states);
    let _ = writeln!(s, "env.B = {}", cfg.env.bound);
    let _ = writeln!(s, "env.granularity = {}", cfg.env.granularity);
    let _ = writeln!(s, "loop.K = {}", cfg.iterations);
    let _ = writeln!(s, "iterations_completed = {}", log.rows.len());
    let _ = writeln!(s, "preferences = {}", log.dataset.len());
    let _ = writeln!(s, "final_cumulative_regret = {}", fmt_real(log.final_cumulative_regret()));
    let _ = writeln!(s, "alpha = {}", fmt_real(log.alpha));
    let _ = writeln!(s, "prefactor = {}", fmt_real(log.prefactor));
    let _ = writeln!(s, "kappa_bound = {}", fmt_real(log.kappa_bound));
    s
}

pub fn suite_summary(summary: &SuiteSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "cells = {}", summary.cells.len());
    let _ = writeln!(s, "runs = {}", summary.runs.len());
    let failed: usize = summary.cells.iter().map(|c| c.failed).sum();
    let _ = writeln!(s, "failed_runs = {failed}");
    for c in &summary.cells {
        let _ = writeln!(
            s,
            "cell {} completed={} failed={} mean_cumulative_regret={} stderr_cumulative_regret={} mean_alpha={} stderr_alpha={}",
            c.variation,
            c.completed,
            c.failed,
            fmt_real(c.mean_cumulative_regret),
            fmt_real(c.stderr_cumulative_regret),
            fmt_real(c.mean_alpha),
            fmt_real(c.stderr_alpha),
        );
    }
    for r in &summary.runs {
        match &r.outcome {
            Ok(log) => {
                let _ = writeln!(
                    s,
                    "run {} seed={} status={} final_cumulative_regret={} alpha={}",
                    r.variation,
                    r.seed,
                    if log.is_failed() { "failed" } else { "ok" },
                    fmt_real(log.final_cumulative_regret()),
                    fmt_real(log.alpha),
                );
            }
            Err(e) => {
                let _ = writeln!(s, "run {} seed={} status=error message={e}", r.variation, r.seed);
            }
        }
    }
    s
}

/// `kind`, dimensions, then one number per line.
pub fn policy_text(policy: &PolicyParams) -> String {
    let mut s = String::new();
    match policy {
        PolicyParams::Softmax { horizon, dim, weights } => {
            let _ = writeln!(s, "kind softmax");
            let _ = writeln!(s, "horizon {horizon}");
            let _ = writeln!(s, "dim {dim}");
            for w in weights {
                let _ = writeln!(s, "{}", fmt_real(*w));
            }
        }
        PolicyParams::Deterministic { horizon, states, actions } => {
            let _ = writeln!(s, "kind deterministic");
            let _ = writeln!(s, "horizon {horizon}");
            let _ = writeln!(s, "states {states}");
            for a in actions {
                let _ = writeln!(s, "{a}");
            }
        }
    }
    s
}

pub fn parse_policy_text(text: &str) -> Result<PolicyParams> {
    let err = |line: usize, message: String| PbpoError::Parse {
        what: "policy",
        line,
        message,
    };
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 3 {
        return Err(err(lines.len(), "truncated header".into()));
    }
    let field = |i: usize, name: &str| -> Result<usize> {
        let rest = lines[i]
            .strip_prefix(name)
            .ok_or_else(|| err(i + 1, format!("expected '{name}'")))?;
        rest.trim().parse().map_err(|e| err(i + 1, format!("{name}: {e}")))
    };
    match lines[0].trim() {
        "kind softmax" => {
            let horizon = field(1, "horizon")?;
            let dim = field(2, "dim")?;
            let weights = lines[3..]
                .iter()
                .enumerate()
                .map(|(i, l)| parse_real(l, "policy", i + 4))
                .collect::<Result<Vec<_>>>()?;
            PolicyParams::softmax(horizon, dim, weights)
        }
        "kind deterministic" => {
            let horizon = field(1, "horizon")?;
            let states = field(2, "states")?;
            let actions = lines[3..]
                .iter()
                .enumerate()
                .map(|(i, l)| l.trim().parse().map_err(|e| err(i + 4, format!("{e}"))))
                .collect::<Result<Vec<usize>>>()?;
            PolicyParams::deterministic(horizon, states, actions)
        }
        other => Err(err(1, format!("unknown kind line '{other}'"))),
    }
}

fn join_actions(actions: &[usize]) -> String {
    actions.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// One record per line: `iteration<TAB>actions0<TAB>actions1<TAB>label`,
/// actions joined by commas; `label = 1` means the first trajectory won.
pub fn preference_dump(data: &PreferenceDataset) -> String {
    let mut s = String::from("# iteration\tactions0\tactions1\tlabel\n");
    for r in data.records() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            r.iteration,
            join_actions(&r.tau0.actions),
            join_actions(&r.tau1.actions),
            r.label
        );
    }
    s
}

/// `iteration step gap log_likelihood slack`, one solver step per line.
pub fn trace_text(trace: &[(usize, TraceRecord)]) -> String {
    let mut s = String::from("# iteration step gap log_likelihood slack\n");
    for (k, t) in trace {
        let _ = writeln!(
            s,
            "{k} {} {} {} {}",
            t.step,
            fmt_real(t.gap),
            fmt_real(t.log_likelihood),
            fmt_real(t.slack)
        );
    }
    s
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ")
}

/// Human-readable instance description: sizes, features, true parameters
/// and the optimal policy's actions.
pub fn describe_instance(env: &MdpInstance) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "states_per_step = {}", env.states());
    let _ = writeln!(s, "actions = {}", env.actions());
    let _ = writeln!(s, "horizon = {}", env.horizon());
    let _ = writeln!(s, "dim = {}", env.dim());
    let _ = writeln!(s, "granularity = {}", env.granularity());
    let _ = writeln!(s, "bound = {}", env.bound());
    let _ = writeln!(s, "initial_dist = {}", fmt_vec(env.initial_dist()));
    let _ = writeln!(s, "true_params:");
    for (b, block) in env.true_params().blocks().enumerate() {
        let _ = writeln!(s, "  block {b}: {}", fmt_vec(block));
    }
    let _ = writeln!(s, "features (h s a -> next: phi):");
    for h in 0..env.horizon() {
        for st in 0..env.states() {
            for a in 0..env.actions() {
                let _ = writeln!(
                    s,
                    "  {h} {st} {a} -> {}: {}",
                    env.next_state(h, st, a),
                    fmt_vec(env.feature(h, st, a))
                );
            }
        }
    }
    let pi_star = env::optimal_policy(env, env.true_params())?;
    let value = env::policy_value(env, env.true_params(), &pi_star)?;
    let _ = writeln!(s, "optimal_value = {value:.6}");
    let _ = writeln!(s, "optimal_actions (h s -> a):");
    if let PolicyParams::Deterministic { actions, .. } = &pi_star {
        for h in 0..env.horizon() {
            let row = &actions[h * env.states()..(h + 1) * env.states()];
            let _ = writeln!(s, "  h={h}: {}", join_actions(row));
        }
    }
    Ok(s)
}
