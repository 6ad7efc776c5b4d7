use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use voi_sched::commands::{cmd_check, cmd_iterate, cmd_policy, cmd_simulate, cmd_solve, cmd_sweep, Context};
use voi_sched::config::RunConfig;
use voi_sched::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NONCONVERGENCE: u8 = 2;
const EXIT_CHECK_FAILED: u8 = 3;

/// Optimal VoI transmission scheduling for networked LQG control.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults reproduce the reference experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides sim.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Riccati solutions, gains, Σ and Ξ.
    Solve,
    /// Relative value iteration for h and J*.
    Iterate,
    /// VoI decision map and its threshold estimate.
    Policy,
    /// Monte Carlo evaluation of the configured policy.
    Simulate,
    /// Threshold searches, cost comparison and rate–regulation table.
    Sweep,
    /// Structural checks; exits with status 3 when any fails.
    Check,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_USAGE,
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let ctx = Context::new(cfg, cli.out, cli.seed);
    match cli.command {
        Command::Solve => {
            let art = cmd_solve(&ctx)?;
            println!("L = {:?}", voi_sched::linalg::to_rows(&art.steady_state.l));
            for (name, r) in &art.steady_state.residuals {
                println!("{name} residual {r:.3e}");
            }
        }
        Command::Iterate => {
            let art = cmd_iterate(&ctx)?;
            println!(
                "J* = {} after {} sweeps (span residual {:.3e})",
                art.jstar,
                art.report.iterations,
                art.report.final_residual()
            );
        }
        Command::Policy => {
            let art = cmd_policy(&ctx)?;
            match (&art.eta, &art.eta_note) {
                (Some(e), _) => println!("eta = {} (consistency {:.4})", e.eta, e.consistency),
                (None, Some(note)) => println!("no threshold estimate: {note}"),
                _ => {}
            }
        }
        Command::Simulate => {
            let s = cmd_simulate(&ctx)?.summary;
            println!(
                "{}: J = {} ± {}, rate = {}, regulation = {}, diverged {}",
                s.policy, s.j.mean, s.j.stderr, s.rate.mean, s.regulation.mean, s.diverged
            );
        }
        Command::Sweep => {
            let art = cmd_sweep(&ctx)?;
            for p in &art.thresholds {
                println!("theta {} {}: eta* = {} cost {}", p.theta, p.family.name(), p.eta_star, p.cost);
            }
        }
        Command::Check => {
            let art = cmd_check(&ctx)?;
            println!("structure {}", if art.structure.passed { "ok" } else { "FAILED" });
            println!("stability {}", if art.stability.passed { "ok" } else { "FAILED" });
            return Ok(art.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
