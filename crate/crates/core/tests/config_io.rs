use pbpo_core::config::{self, SCHEMA};
use pbpo_core::io;
use pbpo_core::{
    parse_and_validate, parse_experiment, run_online_loop, GeneratorKind, Granularity, Method, PolicyParams, RunRow,
    SolverMode, Variation,
};
use proptest::prelude::*;

const MINIMAL: &str = "env.generator = bandit\nenv.d = 3\nloop.K = 5\nseed = 7\n";

fn with(extra: &str) -> String {
    format!("{MINIMAL}{extra}")
}

#[test]
fn defaults_fill_every_optional_key() {
    let cfg = parse_and_validate(MINIMAL, &[]).unwrap();
    assert_eq!(cfg.env.kind, GeneratorKind::Bandit);
    assert_eq!((cfg.env.dim, cfg.env.horizon, cfg.env.actions, cfg.env.states), (3, 1, 10, 1));
    assert_eq!(cfg.env.bound, 1.0);
    assert_eq!(cfg.env.granularity, Granularity::SequenceLevel);
    assert_eq!((cfg.iterations, cfg.batch, cfg.seed), (5, 1, 7));
    assert_eq!((cfg.delta, cfg.c_zeta, cfg.lambda), (0.1, 1.0, 1.0));
    assert_eq!(cfg.method, Method::PbPO);
    assert_eq!(cfg.solver.mode, SolverMode::ConstrainedExact);
    assert_eq!(cfg.solver.beta, 1.0);
    assert_eq!(cfg.solver.clip_epsilon, 0.2);
    assert_eq!((cfg.solver.outer_steps, cfg.solver.inner_steps), (300, 50));
    assert_eq!((cfg.solver.policy_step, cfg.solver.reward_step, cfg.solver.tolerance), (0.2, 0.05, 1e-5));
    assert_eq!((cfg.enhancer.restarts, cfg.enhancer.steps, cfg.enhancer.enumeration_cap), (5, 500, 4096));
    assert_eq!(cfg.enhancer.step_size, 0.1);
    assert!(!cfg.record_timing);
}

#[test]
fn chain_defaults_to_three_states() {
    let text = "env.generator = chain\nenv.d = 2\nenv.H = 3\nloop.K = 2\nseed = 0\n";
    let cfg = parse_and_validate(text, &[]).unwrap();
    assert_eq!(cfg.env.states, config::DEFAULT_CHAIN_STATES);
}

#[test]
fn out_of_range_delta_names_the_key() {
    let err = parse_and_validate(&with("loop.delta = 1.5\n"), &[]).unwrap_err();
    assert!(err.to_string().contains("loop.delta"), "{err}");
}

#[test]
fn every_error_names_its_key() {
    let cases = [
        ("env.d = 0\n", "env.d", true),
        ("loop.c_zeta = -1\n", "loop.c_zeta", false),
        ("solver.clip_epsilon = 1\n", "solver.clip_epsilon", false),
        ("solver.beta = -2\n", "solver.beta", false),
        ("solver.mode = sideways\n", "solver.mode", false),
        ("method = greedy\n", "method", false),
        ("env.granularity = word\n", "env.granularity", false),
        ("policy.estimator = guess\n", "policy.estimator", false),
        ("env.H = 2\n", "env.H", false),
        ("suite.seeds = 1,2\n", "suite.seeds", false),
        ("bogus.key = 1\n", "bogus.key", false),
        ("seed = 3\n", "seed", false),
    ];
    for (extra, key, replace) in cases {
        let text = if replace { MINIMAL.replace("env.d = 3\n", extra) } else { with(extra) };
        let err = parse_and_validate(&text, &[]).unwrap_err();
        assert!(err.to_string().contains(key), "{extra:?}: {err}");
    }
    for required in ["env.generator", "env.d", "loop.K", "seed"] {
        let text: String = MINIMAL.lines().filter(|l| !l.starts_with(required)).map(|l| format!("{l}\n")).collect();
        let err = parse_and_validate(&text, &[]).unwrap_err();
        assert!(err.to_string().contains(required), "{err}");
    }
}

#[test]
fn overrides_win_over_the_file() {
    let cfg = parse_and_validate(&with("loop.delta = 0.2\n"), &["loop.delta=0.05".into(), "loop.delta=0.3".into()]).unwrap();
    assert_eq!(cfg.delta, 0.3);
    let err = parse_and_validate(MINIMAL, &["nonsense".into()]).unwrap_err();
    assert!(err.to_string().contains("override"));
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let text = "# header\n\nenv.generator = bandit # inline\nenv.d = 3\n  \nloop.K = 5\nseed = 7\n";
    assert_eq!(parse_and_validate(text, &[]).unwrap(), parse_and_validate(MINIMAL, &[]).unwrap());
}

#[test]
fn suite_keys_become_variations() {
    let exp = parse_experiment(&with("suite.d = 3, 6\nsuite.method = pbpo,random-exploration\nsuite.seeds = 4,5,6\n"), &[]).unwrap();
    assert_eq!(
        exp.suite.variations,
        vec![Variation::Dim(3), Variation::Dim(6), Variation::Method(Method::PbPO), Variation::Method(Method::RandomExploration)]
    );
    assert_eq!(exp.suite_seeds(), vec![4, 5, 6]);
    let plain = parse_experiment(MINIMAL, &[]).unwrap();
    assert_eq!(plain.suite_seeds(), vec![7, 8, 9]);
}

#[test]
fn schema_has_unique_keys() {
    let mut keys: Vec<&str> = SCHEMA.iter().map(|(k, _)| *k).collect();
    keys.sort_unstable();
    let n = keys.len();
    keys.dedup();
    assert_eq!(keys.len(), n);
}

#[test]
fn run_log_round_trips_through_csv() {
    let cfg = parse_and_validate(&with("loop.record_timing = false\n"), &[]).unwrap();
    let log = run_online_loop(&cfg).unwrap();
    let text = io::runlog_csv(&log.rows).unwrap();
    assert_eq!(text.lines().next().unwrap(), RunRow::COLUMNS.join(","));
    assert_eq!(io::parse_runlog_csv(&text).unwrap(), log.rows);
}

#[test]
fn malformed_csv_reports_its_line() {
    let text = format!("{}\n1,2,3\n", RunRow::COLUMNS.join(","));
    let err = io::parse_runlog_csv(&text).unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
    assert!(io::parse_runlog_csv("a,b\n").is_err());
}

#[test]
fn policies_round_trip_through_text() {
    let soft = PolicyParams::softmax(2, 2, vec![0.1, -3.5e-7, 1.0 / 3.0, 12.0]).unwrap();
    assert_eq!(io::parse_policy_text(&io::policy_text(&soft)).unwrap(), soft);
    let table = PolicyParams::deterministic(2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
    assert_eq!(io::parse_policy_text(&io::policy_text(&table)).unwrap(), table);
    assert!(io::parse_policy_text("kind mystery\nhorizon 1\ndim 1\n").is_err());
}

#[test]
fn preference_dump_has_one_line_per_record() {
    let cfg = parse_and_validate(MINIMAL, &[]).unwrap();
    let log = run_online_loop(&cfg).unwrap();
    let dump = io::preference_dump(&log.dataset);
    let lines: Vec<&str> = dump.lines().collect();
    assert_eq!(lines[0], "# iteration\tactions0\tactions1\tlabel");
    assert_eq!(lines.len(), 1 + log.dataset.len());
    for (line, rec) in lines[1..].iter().zip(log.dataset.records()) {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[3], rec.label.to_string());
    }
}

#[test]
fn summary_marks_status() {
    let cfg = parse_and_validate(MINIMAL, &[]).unwrap();
    let log = run_online_loop(&cfg).unwrap();
    let s = io::run_summary(&cfg, &log);
    assert!(s.starts_with("status = ok\n"));
    assert!(s.contains("iterations_completed = 5"));
}

proptest! {
    #[test]
    fn reals_round_trip_exactly(x in proptest::num::f64::ANY) {
        let back: f64 = io::fmt_real(x).parse().unwrap();
        if x.is_nan() {
            prop_assert!(back.is_nan());
        } else {
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn valid_numeric_overrides_are_applied(delta in 0.001f64..=1.0, c in 0.01f64..100.0, k in 1usize..10_000) {
        let overrides = vec![format!("loop.delta={delta}"), format!("loop.c_zeta={c}"), format!("loop.K={k}")];
        let cfg = parse_and_validate(MINIMAL, &overrides).unwrap();
        prop_assert_eq!(cfg.delta, delta);
        prop_assert_eq!(cfg.c_zeta, c);
        prop_assert_eq!(cfg.iterations, k);
    }
}
