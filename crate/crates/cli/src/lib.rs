//! Experiment runner for the hybrid accelerated gradient simulator.
//!
//! [`run_scenario`] executes one resolved [`ScenarioSpec`] and writes its
//! artifacts; [`run_sweep`] varies one config key over a list of values;
//! [`check_trace`] re-verifies a rate bound on a trace CSV offline.

pub mod artifacts;
pub mod config;
pub mod scenarios;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hand_core::analysis::{beta_for_trace, check_thm1_rate, check_thm2_rate, RateReport};
use hand_core::{Hand, HandKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use artifacts::{ArtifactSink, Summary, PLOT_FILE, SUMMARY_FILE};
pub use config::{
    parse_config, parse_config_str, ConfigError, Override, ResolvedConfig, ScenarioId, ScenarioSpec,
};

/// Exit status when every check passed.
pub const EXIT_OK: i32 = 0;
/// Exit status when at least one bound check failed.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit status for unreadable or invalid configuration.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for I/O or simulation errors.
pub const EXIT_RUNTIME: i32 = 3;

/// Runs one scenario and writes `summary.json`, `plot.gp` and the trace CSVs
/// into `spec.output`.
pub fn run_scenario(resolved: &ResolvedConfig) -> Result<Summary> {
    let spec = &resolved.spec;
    let mut sink = ArtifactSink::new(&spec.output, spec.experiment.eps)?;
    log::info!("running {} into {}", spec.scenario, spec.output.display());
    let outcome =
        scenarios::run(spec, &mut sink).with_context(|| format!("scenario {}", spec.scenario))?;
    let dims: Vec<usize> = spec.build_costs().iter().map(|f| f.dim()).collect();
    std::fs::write(
        sink.dir().join(PLOT_FILE),
        artifacts::plot_script(&sink.runs, &dims),
    )?;
    let summary = Summary {
        scenario: spec.scenario.to_string(),
        passed: outcome.checks.iter().all(|c| c.passed),
        config: spec.clone(),
        defaulted_keys: resolved.defaulted.clone(),
        constants: outcome.constants,
        checks: outcome.checks,
        runs: sink.runs,
        data: outcome.data,
    };
    artifacts::write_summary(&spec.output, &summary)?;
    Ok(summary)
}

/// Exit status as a function of the check reports only.
pub fn exit_code(summary: &Summary) -> i32 {
    if summary.checks.iter().all(|c| c.passed) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: serde_json::Value,
    pub output: PathBuf,
    pub passed: bool,
    pub failed_checks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub param: String,
    pub passed: bool,
    pub runs: Vec<SweepEntry>,
}

pub const SWEEP_FILE: &str = "sweep.json";

/// Thread count for sweeps: `HAND_SIM_THREADS` if set, else rayon's default.
pub fn sweep_threads() -> Result<Option<usize>> {
    match std::env::var("HAND_SIM_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| {
                format!("HAND_SIM_THREADS must be a positive integer, got `{v}`")
            })?;
            if n == 0 {
                bail!("HAND_SIM_THREADS must be a positive integer, got 0");
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

/// Resolves one config per value (failing fast on any invalid one), runs them
/// in parallel and writes `sweep.json` into `out`. Each run writes into
/// `out/<key>=<value>`. Entries keep the order of `values`.
pub fn run_sweep(
    config_path: &Path,
    param: &str,
    values: &[String],
    out: &Path,
    base_overrides: &[Override],
) -> std::result::Result<SweepSummary, SweepError> {
    let leaf = param.rsplit('.').next().unwrap_or(param);
    let mut resolved = Vec::new();
    for raw in values {
        let dir = out.join(artifacts::sanitize(&format!("{leaf}={raw}")));
        let mut ov = base_overrides.to_vec();
        ov.push(Override::parse(param, raw));
        ov.push(Override::new(
            "output",
            serde_json::Value::String(dir.display().to_string()),
        ));
        resolved.push((parse_config(config_path, &ov)?, raw));
    }
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(SweepError::Runtime)?;
    let job = || -> Result<Vec<SweepEntry>> {
        resolved
            .par_iter()
            .map(|(cfg, raw)| {
                let summary = run_scenario(cfg)?;
                Ok(SweepEntry {
                    value: Override::parse(param, raw).value,
                    output: cfg.spec.output.clone(),
                    passed: summary.passed,
                    failed_checks: summary
                        .checks
                        .iter()
                        .filter(|c| !c.passed)
                        .map(|c| c.name.clone())
                        .collect(),
                })
            })
            .collect()
    };
    let runs = match sweep_threads().map_err(SweepError::Runtime)? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building the sweep thread pool")
            .map_err(SweepError::Runtime)?
            .install(job),
        None => job(),
    }
    .map_err(SweepError::Runtime)?;
    let summary = SweepSummary {
        param: param.to_string(),
        passed: runs.iter().all(|r| r.passed),
        runs,
    };
    let mut text =
        serde_json::to_string_pretty(&summary).map_err(|e| SweepError::Runtime(e.into()))?;
    text.push('\n');
    std::fs::write(out.join(SWEEP_FILE), text)
        .with_context(|| format!("writing {}", out.join(SWEEP_FILE).display()))
        .map_err(SweepError::Runtime)?;
    Ok(summary)
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Thm1,
    Thm2,
}

/// Re-checks a rate bound on a trace CSV. The cost, HAND parameters and step
/// size are taken from the `summary.json` next to the CSV.
pub fn check_trace(csv_path: &Path, bound: Bound) -> Result<RateReport> {
    let dir = csv_path.parent().unwrap_or(Path::new("."));
    let summary = artifacts::read_summary(&dir.join(SUMMARY_FILE))?;
    let file = csv_path
        .file_name()
        .and_then(|s| s.to_str())
        .context("trace path has no file name")?;
    let entry = summary
        .runs
        .iter()
        .find(|r| r.csv == file)
        .with_context(|| {
            format!(
                "{file} is not listed in {}",
                dir.join(SUMMARY_FILE).display()
            )
        })?;
    let kind = entry
        .system
        .hand_kind()
        .with_context(|| format!("{file} is a nominal ODE run; rate bounds need a HAND run"))?;
    let params = entry.hand.context("run entry has no HAND parameters")?;
    let cost = summary
        .config
        .costs
        .get(entry.cost_index)
        .context("run entry refers to a missing cost")?
        .build()?;
    let trace = artifacts::read_trace_csv(csv_path, entry)?;
    let l = cost.require_lipschitz()?;
    let tol = 1e-6 + summary.config.experiment.slack_factor * l * entry.solver.h;
    let report = match bound {
        Bound::Thm1 => {
            let beta = beta_for_trace(&trace, &cost, &params)?;
            check_thm1_rate(&trace, &cost, &params, beta, tol)?
        }
        Bound::Thm2 => {
            if kind != HandKind::Hand2 {
                bail!("the exponential bound applies to HAND-2 runs");
            }
            let hand = Hand::new(kind, cost, params)?;
            check_thm2_rate(&trace, &hand, tol)?
        }
    };
    Ok(report)
}
