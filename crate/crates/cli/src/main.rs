//! `pbpo`: run online preference-based policy optimization experiments from
//! flat `key = value` config files.
//!
//! Exit codes: 0 on success, 1 on invalid input (config, arguments, files),
//! 2 when a solver fails or a run cannot finish.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use pbpo_core::config::{load_experiment, ExperimentConfig};
use pbpo_core::harness::{build_instance, run_online_loop, run_scaling_suite, Variation};
use pbpo_core::{io, PbpoError};

/// Marks a finished run; its presence blocks reuse of the directory.
const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Parser)]
#[command(name = "pbpo", version, about = "Online preference-based policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the online loop once and write its artifacts.
    Run(OutputArgs),
    /// Run every configured variation over several seeds.
    Suite(OutputArgs),
    /// Parse and validate a config without running anything.
    ValidateConfig(ConfigArgs),
    /// Describe the generated instance (features, true parameters, optimal actions).
    DumpInstance(DumpArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Config file with one `key = value` per line.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config key; may be repeated, later values win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory, created if absent.
    #[arg(long, short)]
    out: PathBuf,
    /// Overwrite a directory that already holds a completed run.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Write `instance.txt` here instead of printing it.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Invalid(anyhow::Error),
    Solver(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Solver(_) => 2,
        }
    }
}

impl From<PbpoError> for Failure {
    fn from(e: PbpoError) -> Self {
        match e {
            PbpoError::Config(_) | PbpoError::Parse { .. } | PbpoError::Io { .. } => Failure::Invalid(e.into()),
            _ => Failure::Solver(e.into()),
        }
    }
}

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    Ok(load_experiment(&args.config, &args.overrides)?)
}

fn prepare_dir(dir: &Path, force: bool) -> Result<(), Failure> {
    if dir.join(SUMMARY_FILE).exists() && !force {
        return Err(invalid(anyhow!(
            "{} already holds a completed run; pass --force to overwrite it",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(invalid)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(invalid)
}

fn cell_file(variation: &Variation, seed: u64) -> String {
    let tag: String = variation
        .to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("cell_{tag}_seed{seed}.csv")
}

fn run(args: &OutputArgs) -> Result<(), Failure> {
    let exp = load(&args.config)?;
    prepare_dir(&args.out, args.force)?;
    let cfg = exp.run;
    let log = run_online_loop(&cfg)?;
    write(&args.out, "runlog.csv", &io::runlog_csv(&log.rows)?)?;
    write(&args.out, "policy.txt", &io::policy_text(&log.final_policy))?;
    write(&args.out, "preferences.txt", &io::preference_dump(&log.dataset))?;
    if cfg.solver.record_trace {
        write(&args.out, "trace.txt", &io::trace_text(&log.trace))?;
    }
    // Written last so a crash never leaves a directory that looks complete.
    write(&args.out, SUMMARY_FILE, &io::run_summary(&cfg, &log))?;
    match &log.failure {
        Some(f) => Err(Failure::Solver(anyhow!("run failed at {f}"))),
        None => Ok(()),
    }
}

fn suite(args: &OutputArgs) -> Result<(), Failure> {
    let exp = load(&args.config)?;
    let seeds = exp.suite_seeds();
    let variations = if exp.suite.variations.is_empty() {
        vec![Variation::Method(exp.run.method)]
    } else {
        exp.suite.variations.clone()
    };
    prepare_dir(&args.out, args.force)?;
    let summary = run_scaling_suite(&exp.run, &variations, &seeds)?;
    for r in &summary.runs {
        if let Ok(log) = &r.outcome {
            write(&args.out, &cell_file(&r.variation, r.seed), &io::runlog_csv(&log.rows)?)?;
        }
    }
    write(&args.out, SUMMARY_FILE, &io::suite_summary(&summary))?;
    let failed: usize = summary.cells.iter().map(|c| c.failed).sum();
    if failed > 0 {
        return Err(Failure::Solver(anyhow!("{failed} suite run(s) failed; see {SUMMARY_FILE}")));
    }
    Ok(())
}

fn dump_instance(args: &DumpArgs) -> Result<(), Failure> {
    let exp = load(&args.config)?;
    let env = build_instance(&exp.run)?;
    let text = io::describe_instance(&env)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))
                .map_err(invalid)?;
            write(dir, "instance.txt", &text)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => run(a),
        Command::Suite(a) => suite(a),
        Command::ValidateConfig(a) => load(a).map(|_| println!("config ok")),
        Command::DumpInstance(a) => dump_instance(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Invalid(e) | Failure::Solver(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
