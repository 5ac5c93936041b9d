use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dynbound::cli::{self, Outcome};
use dynbound::config::ExperimentConfig;
use dynbound::Result;

/// Solver and verification runner for the half-space problem with a
/// dynamic boundary condition.
#[derive(Parser)]
#[command(name = "dynbound", version)]
struct Args {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default configuration.
    Init,
    /// Check exponent admissibility.
    CheckParams,
    /// Run the fixed-point iteration.
    Solve {
        /// Record wall-clock time per iteration.
        #[arg(long)]
        timing: bool,
    },
    /// Run the verifiers against a stored solution.
    Verify {
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Run the empirical inequality probes.
    Probe,
}

fn load(args: &Args) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn run(args: &Args) -> Result<Outcome> {
    if let Command::Init = args.command {
        return Ok(Outcome { code: cli::EXIT_OK, report: cli::cmd_init() });
    }
    let cfg = load(args)?;
    match &args.command {
        Command::Init => unreachable!(),
        Command::CheckParams => cli::cmd_check_params(&cfg),
        Command::Solve { timing } => cli::cmd_solve(&cfg, *timing),
        Command::Verify { solution } => {
            let path = solution.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir).join("solution.bin"));
            cli::cmd_verify(&cfg, &path)
        }
        Command::Probe => cli::cmd_probe(&cfg),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(t) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("dynbound: {e}");
            return ExitCode::from(cli::EXIT_FAILED as u8);
        }
    }
    match run(&args) {
        Ok(o) => {
            print!("{}", o.report);
            ExitCode::from(o.code as u8)
        }
        Err(e) => {
            eprintln!("dynbound: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
