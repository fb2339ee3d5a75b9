//! Trace CSVs, the summary JSON and the gnuplot script.
//!
//! Trace columns: `t, j, tau, x1_0.., x2_0.., f_gap, V, dist_A, event`.
//! Floats are written with 17 significant digits so that traces read back
//! bit-exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hand_core::analysis::lyapunov;
use hand_core::dynamics::{OdeParams, Representation};
use hand_core::hands::target_distance;
use hand_core::state::HybridTime;
use hand_core::trace::JumpRecord;
use hand_core::{
    CostFunction, HandKind, HandParams, HybridState, PointKind, SolverConfig, Termination, Trace,
    TracePoint,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ScenarioSpec;

/// Which system produced a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemTag {
    Hand1,
    Hand2,
    NominalVelocity,
    NominalMomentum,
}

impl SystemTag {
    pub fn hand(kind: HandKind) -> Self {
        match kind {
            HandKind::Hand1 => SystemTag::Hand1,
            HandKind::Hand2 => SystemTag::Hand2,
        }
    }

    pub fn nominal(rep: Representation) -> Self {
        match rep {
            Representation::Velocity => SystemTag::NominalVelocity,
            Representation::Momentum => SystemTag::NominalMomentum,
        }
    }

    pub fn hand_kind(self) -> Option<HandKind> {
        match self {
            SystemTag::Hand1 => Some(HandKind::Hand1),
            SystemTag::Hand2 => Some(HandKind::Hand2),
            _ => None,
        }
    }
}

/// Per-sample derived columns.
///
/// For HAND runs `V` is the Lyapunov function and `dist_A` the distance to
/// `{x*} × {x*} × [T_min, T_max]`. Nominal runs use the same formulas with the
/// clock left free and the `x2` target set to `0` (velocity form) or `x*`
/// (momentum form).
#[derive(Debug, Clone)]
pub struct Monitor {
    cost: CostFunction,
    c: f64,
    xstar: Vec<f64>,
    kind: MonitorKind,
}

#[derive(Debug, Clone)]
enum MonitorKind {
    Hand(HandParams),
    Nominal { x2_target: Vec<f64> },
}

impl Monitor {
    pub fn hand(cost: &CostFunction, params: HandParams) -> Result<Self> {
        Ok(Self {
            xstar: cost.require_xstar()?.to_vec(),
            cost: cost.clone(),
            c: params.c,
            kind: MonitorKind::Hand(params),
        })
    }

    pub fn nominal(cost: &CostFunction, params: &OdeParams, rep: Representation) -> Result<Self> {
        let xstar = cost.require_xstar()?.to_vec();
        let x2_target = match rep {
            Representation::Velocity => vec![0.0; xstar.len()],
            Representation::Momentum => xstar.clone(),
        };
        Ok(Self {
            cost: cost.clone(),
            c: params.c,
            xstar,
            kind: MonitorKind::Nominal { x2_target },
        })
    }

    /// `(f_gap, V, dist_A)`.
    pub fn columns(&self, z: &HybridState) -> Result<(f64, f64, f64)> {
        let gap = self.cost.suboptimality(z.x1())?;
        match &self.kind {
            MonitorKind::Hand(p) => Ok((
                gap,
                lyapunov(z, &self.cost, self.c)?,
                target_distance(z, &self.xstar, p),
            )),
            MonitorKind::Nominal { x2_target } => {
                let d1 = sq_dist(z.x1(), &self.xstar);
                let d2 = sq_dist(z.x2(), x2_target);
                let tau = z.tau();
                Ok((gap, 0.5 * d2 + self.c * tau * tau * gap, (d1 + d2).sqrt()))
            }
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "j".into(), "tau".into()];
    h.extend((0..n).map(|i| format!("x1_{i}")));
    h.extend((0..n).map(|i| format!("x2_{i}")));
    h.extend(["f_gap", "V", "dist_A", "event"].map(String::from));
    h
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn write_trace_csv(path: &Path, trace: &Trace, monitor: &Monitor) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv_writer(std::io::BufWriter::new(file));
    let n = monitor.xstar.len();
    w.write_record(csv_header(n))?;
    let mut row = Vec::with_capacity(2 * n + 7);
    for p in &trace.points {
        let z = &p.state;
        let (gap, v, d) = monitor.columns(z)?;
        row.clear();
        row.push(fmt_f64(p.time.t));
        row.push(p.time.j.to_string());
        row.push(fmt_f64(z.tau()));
        row.extend(z.x1().iter().chain(z.x2()).map(|&x| fmt_f64(x)));
        row.extend([gap, v, d].map(fmt_f64));
        row.push(p.kind.as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds a trace from its CSV. Jump records are reconstructed from the
/// sample preceding each `jump` row; `termination` and `config` come from the
/// run entry.
pub fn read_trace_csv(path: &Path, entry: &RunEntry) -> Result<Trace> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header.len() < 7 || !(header.len() - 7).is_multiple_of(2) {
        bail!("{}: unexpected trace header {header:?}", path.display());
    }
    let n = (header.len() - 7) / 2;
    if header != csv_header(n) {
        bail!("{}: unexpected trace header {header:?}", path.display());
    }
    let mut points: Vec<TracePoint> = Vec::new();
    let mut events = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .with_context(|| format!("{}: row {}: column {}", path.display(), i + 2, k))
        };
        let t = num(0)?;
        let j: u64 = rec[1]
            .parse()
            .with_context(|| format!("{}: row {}: bad j", path.display(), i + 2))?;
        let tau = num(2)?;
        let x1 = (0..n).map(|k| num(3 + k)).collect::<Result<Vec<_>>>()?;
        let x2 = (0..n).map(|k| num(3 + n + k)).collect::<Result<Vec<_>>>()?;
        let kind = match &rec[2 * n + 6] {
            "flow" => PointKind::Flow,
            "jump" => PointKind::Jump,
            "fault" => PointKind::Fault,
            other => bail!("{}: row {}: unknown event `{other}`", path.display(), i + 2),
        };
        let point = TracePoint {
            time: HybridTime::new(t, j),
            state: HybridState::new(&x1, &x2, tau),
            kind,
        };
        if kind == PointKind::Jump {
            let pre = points
                .last()
                .with_context(|| format!("{}: trace starts with a jump", path.display()))?;
            events.push(JumpRecord {
                time: pre.time,
                pre: pre.state.clone(),
                post: point.state.clone(),
            });
        }
        points.push(point);
    }
    Ok(Trace {
        points,
        events,
        termination: entry.termination.clone(),
        config: entry.solver.clone(),
    })
}

/// Metadata of one simulated run, as listed in the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub name: String,
    pub csv: String,
    pub system: SystemTag,
    pub cost: String,
    pub cost_index: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hand: Option<HandParams>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ode: Option<OdeParams>,
    pub solver: SolverConfig,
    pub termination: Termination,
    pub jumps: usize,
    pub points: usize,
    pub final_time: f64,
    pub time_to_eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured quantity compared against `limit`, when there is one.
    pub value: Option<f64>,
    pub limit: Option<f64>,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            value: None,
            limit: None,
            detail: detail.into(),
        }
    }

    /// Passes iff `value <= limit` (NaN fails).
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= limit,
            value: Some(value),
            limit: Some(limit),
            detail: format!("{value:e} <= {limit:e}"),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub passed: bool,
    pub config: ScenarioSpec,
    pub defaulted_keys: Vec<String>,
    pub constants: BTreeMap<String, Value>,
    pub checks: Vec<CheckResult>,
    pub runs: Vec<RunEntry>,
    pub data: BTreeMap<String, Value>,
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOT_FILE: &str = "plot.gp";

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<PathBuf> {
    let path = dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Gnuplot script with one page per run: position and momentum against `t`,
/// and the sub-optimality gap on a log scale.
pub fn plot_script(runs: &[RunEntry], dims: &[usize]) -> String {
    let mut s = String::new();
    s.push_str("# gnuplot -persist plot.gp\n");
    s.push_str("set datafile separator ','\n");
    s.push_str("set key autotitle columnhead\n");
    s.push_str("set xlabel 't'\n");
    for run in runs {
        let n = dims[run.cost_index];
        s.push_str(&format!("\nset title '{}'\n", run.name));
        s.push_str("set multiplot layout 2,1\n");
        s.push_str("unset logscale y\n");
        let mut curves = Vec::new();
        for i in 0..2 * n {
            curves.push(format!("'{}' using 1:{} with lines", run.csv, 4 + i));
        }
        s.push_str(&format!("plot {}\n", curves.join(", ")));
        s.push_str("set logscale y\n");
        s.push_str(&format!(
            "plot '{}' using 1:{} with lines\n",
            run.csv,
            4 + 2 * n
        ));
        s.push_str("unset multiplot\n");
        s.push_str("pause -1\n");
    }
    s
}

/// Collects runs while writing their CSVs into the output directory.
pub struct ArtifactSink {
    dir: PathBuf,
    pub runs: Vec<RunEntry>,
    pub eps: f64,
}

impl ArtifactSink {
    pub fn new(dir: &Path, eps: f64) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            runs: Vec::new(),
            eps,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        name: &str,
        system: SystemTag,
        cost: &CostFunction,
        cost_index: usize,
        hand: Option<HandParams>,
        ode: Option<OdeParams>,
        trace: &Trace,
        monitor: &Monitor,
    ) -> Result<&RunEntry> {
        let csv = format!("{}.csv", sanitize(name));
        if self.runs.iter().any(|r| r.csv == csv) {
            bail!("duplicate run name {name}");
        }
        write_trace_csv(&self.dir.join(&csv), trace, monitor)?;
        let tte = hand_core::analysis::time_to_epsilon(trace, cost, self.eps)?.map(|t| t.t);
        self.runs.push(RunEntry {
            name: name.to_string(),
            csv,
            system,
            cost: cost.label().to_string(),
            cost_index,
            hand,
            ode,
            solver: trace.config.clone(),
            termination: trace.termination.clone(),
            jumps: trace.events.len(),
            points: trace.points.len(),
            final_time: trace.last().map_or(0.0, |p| p.time.t),
            time_to_eps: tte,
        });
        Ok(self.runs.last().expect("just pushed"))
    }
}

/// File-name-safe version of a run name.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '=') {
                c
            } else {
                '_'
            }
        })
        .collect()
}
