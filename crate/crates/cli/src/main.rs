//! `syncdmpc`: run, verify and post-process self-triggered distributed MPC
//! experiments.
//!
//! ```text
//! syncdmpc verify --fixture sec5
//! syncdmpc run --fixture sec5 --seed 3 --strict --out-dir out
//! syncdmpc plotdata --trace out --out-dir out/plots
//! ```
//!
//! Trace verbosity is read from `SYNCDMPC_TRACE` (`quiet`, `events`, `full`);
//! log output from `RUST_LOG`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use syncdmpc::config::ExperimentConfig;
use syncdmpc::trace::{write_dir, Verbosity, TRACE_ENV};
use syncdmpc::{plotdata, sim, verify, Error};

#[derive(Parser)]
#[command(name = "syncdmpc", version, about = "Self-triggered distributed MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write traces.
    Run(RunArgs),
    /// Evaluate the offline configuration gates.
    Verify(Source),
    /// Turn a trace directory into per-figure tables.
    Plotdata(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    /// Three robots with synthesized terminal ingredients.
    Sec5,
    /// The same robots with the printed terminal weights and gains.
    Sec5Printed,
}

#[derive(Args)]
struct Source {
    /// Experiment configuration (TOML).
    #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
    config: Option<PathBuf>,
    /// Bundled configuration.
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
    /// Absolute disturbance bound applied to every agent.
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Number of closed-loop steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Disturbance seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Abort on the first failed verification hook.
    #[arg(long)]
    strict: bool,
    /// Trace directory [default: config `output.dir`, else `out`].
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory containing `agent_<id>.csv` files.
    #[arg(long)]
    trace: PathBuf,
    /// Directory for the figure tables [default: the trace directory].
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Source {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.fixture) {
            (Some(path), _) => {
                ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?
            }
            (None, Some(Fixture::Sec5Printed)) => ExperimentConfig::sec5_printed(),
            (None, _) => ExperimentConfig::sec5(),
        };
        if let Some(eta) = self.eta {
            for a in &mut cfg.agents {
                a.eta = Some(eta);
            }
        }
        Ok(cfg)
    }
}

fn cmd_verify(source: &Source) -> Result<ExitCode> {
    let cfg = source.load()?;
    let (report, _) = verify::assess(&cfg)?;
    print!("{}", report.render());
    for (id, gate, detail) in report.failures() {
        eprintln!("agent {id}: gate `{gate}` failed: {detail}");
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let verbosity = Verbosity::from_env()?;
    let mut cfg = args.source.load()?;
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.strict |= args.strict;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let exp = verify::build(&cfg)?;
    let start = Instant::now();
    let (report, trace) = match sim::run(&exp) {
        Err(Error::Verification(msg)) => {
            eprintln!("strict verification failed: {msg}");
            return Ok(ExitCode::FAILURE);
        }
        other => other?,
    };
    let elapsed = start.elapsed();
    write_dir(&out_dir, &trace, &report, verbosity)
        .with_context(|| format!("writing traces to {}", out_dir.display()))?;

    println!(
        "{} agents, {} steps, seed {} in {:.2} s",
        report.agents.len(),
        report.steps,
        report.seed,
        elapsed.as_secs_f64()
    );
    println!("agent  solves  samples  terminal  max_m  fallbacks  recoveries  |e(end)|");
    for a in &report.agents {
        println!(
            "{:>5}  {:>6}  {:>7}  {:>8}  {:>5}  {:>9}  {:>10}  {:.3e}",
            a.id, a.solves, a.samples, a.terminal_steps, a.max_phase, a.fallbacks, a.recoveries, a.final_error_norm
        );
    }
    for (name, h) in &report.hooks {
        println!("hook {name}: {} checked, {} failed", h.checked, h.failed);
    }
    println!("traces written to {}", out_dir.display());
    Ok(if report.hook_failures() == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_plotdata(args: &PlotArgs) -> Result<ExitCode> {
    let out_dir = args.out_dir.clone().unwrap_or_else(|| args.trace.clone());
    for f in plotdata::from_trace_dir(&args.trace, &out_dir)? {
        println!("{}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(source) => cmd_verify(source),
        Command::Plotdata(args) => cmd_plotdata(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.to_string().contains(TRACE_ENV) {
                eprintln!("hint: unset {TRACE_ENV} or set it to quiet, events or full");
            }
            ExitCode::from(2)
        }
    }
}
