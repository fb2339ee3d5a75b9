use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hand_sim::{
    check_trace, exit_code, parse_config, run_scenario, run_sweep, Bound, Override, SweepError,
    EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME,
};

#[derive(Parser)]
#[command(
    name = "hand-sim",
    version,
    about = "Hybrid accelerated gradient experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Step size (overrides `solver.h`).
        #[arg(long)]
        h: Option<f64>,
        /// Only report failures.
        #[arg(long)]
        quiet: bool,
    },
    /// Run a scenario once per value of one config key.
    Sweep {
        config: PathBuf,
        /// Dotted key path, e.g. `solver.h` or `hand.t_max`.
        #[arg(long)]
        param: String,
        /// Comma-separated values; each is parsed as JSON, else as a string.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Re-verify a rate bound on a trace CSV.
    Check {
        trace: PathBuf,
        #[arg(long, value_enum)]
        bound: Bound,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match Cli::parse().command {
        Command::Run {
            config,
            out,
            seed,
            h,
            quiet,
        } => run(config, out, seed, h, quiet),
        Command::Sweep {
            config,
            param,
            values,
            out,
            quiet,
        } => sweep(config, param, values, out, quiet),
        Command::Check { trace, bound } => check(trace, bound),
    };
    ExitCode::from(code as u8)
}

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    h: Option<f64>,
    quiet: bool,
) -> i32 {
    let mut ov = Vec::new();
    if let Some(out) = out {
        ov.push(Override::new("output", out.display().to_string().into()));
    }
    if let Some(seed) = seed {
        ov.push(Override::new("seed", seed.into()));
    }
    if let Some(h) = h {
        ov.push(Override::new("solver.h", h.into()));
    }
    let resolved = match parse_config(&config, &ov) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let summary = match run_scenario(&resolved) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_RUNTIME;
        }
    };
    for c in &summary.checks {
        if !quiet || !c.passed {
            println!(
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
    }
    if !quiet {
        println!(
            "{} -> {}",
            summary.scenario,
            resolved.spec.output.join("summary.json").display()
        );
    }
    exit_code(&summary)
}

fn sweep(
    config: PathBuf,
    param: String,
    values: Vec<String>,
    out: Option<PathBuf>,
    quiet: bool,
) -> i32 {
    let values: Vec<String> = values
        .into_iter()
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    let out = out.unwrap_or_else(|| PathBuf::from("out").join("sweep"));
    match run_sweep(&config, &param, &values, &out, &[]) {
        Ok(s) => {
            for r in &s.runs {
                if !quiet || !r.passed {
                    println!(
                        "{} {param}={}: {}",
                        if r.passed { "PASS" } else { "FAIL" },
                        r.value,
                        r.output.display()
                    );
                }
            }
            if !quiet {
                println!(
                    "{} runs -> {}",
                    s.runs.len(),
                    out.join("sweep.json").display()
                );
            }
            if s.passed {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(SweepError::Config(e)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn check(trace: PathBuf, bound: Bound) -> i32 {
    match check_trace(&trace, bound) {
        Ok(r) => {
            println!(
                "{} {:?} on {}: {} samples, worst margin {:e}, {} violations (tolerance {:e})",
                if r.satisfied { "PASS" } else { "FAIL" },
                bound,
                trace.display(),
                r.checked,
                r.worst_margin,
                r.violations,
                r.tolerance
            );
            if r.satisfied {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}
