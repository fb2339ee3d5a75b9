//! Fixed-step simulation of hybrid systems `z' = F(z)` on `C`, `z+ = G(z)` on `D`.
//!
//! Flows are discretized with an explicit Runge-Kutta map `F_h`. The jump set is
//! augmented to `D_h = D ∪ {F_h(y) : y ∈ C, F_h(y) ∉ C}`, which is realized by
//! remembering whether the current state came out of a flow step.

mod integrators;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use integrators::{
    euler_step, integrate_flow, regularity_defect, rk_step, ButcherTableau, FlowPerturbation,
    StepFault, Stepper,
};

use crate::config::{JumpPolicy, SolverConfig};
use crate::error::{check_dim, Error, Result};
use crate::signal::DisturbanceSpec;
use crate::state::{HybridState, HybridTime};
use crate::trace::{FaultKind, JumpRecord, PointKind, Termination, Trace, TracePoint};

/// A vector field on the flat state `[x1, x2, tau]`.
pub trait FlowMap {
    fn flow(&self, z: &[f64], dz: &mut [f64]) -> Result<()>;
}

impl<F> FlowMap for F
where
    F: Fn(&[f64], &mut [f64]) -> Result<()>,
{
    fn flow(&self, z: &[f64], dz: &mut [f64]) -> Result<()> {
        self(z, dz)
    }
}

/// Hybrid data `(C, F, D, G)` over flat states of length `state_len()`.
pub trait HybridSystem: Send + Sync {
    /// Length of the flat state vector (`2n + 1` for the systems in this crate).
    fn state_len(&self) -> usize;

    fn flow(&self, z: &[f64], dz: &mut [f64]) -> Result<()>;

    fn jump(&self, z: &[f64], out: &mut [f64]) -> Result<()>;

    /// Membership in `C`, with the set inflated by `inflation >= 0`.
    fn in_flow_set(&self, z: &[f64], inflation: f64) -> bool;

    /// Membership in `D`, with the set inflated by `inflation >= 0`.
    fn in_jump_set(&self, z: &[f64], inflation: f64) -> bool;

    /// Flow time left before the state leaves `C` along the nominal flow, if
    /// the system knows it (clock-driven systems do).
    fn remaining_flow_time(&self, _z: &[f64]) -> Option<f64> {
        None
    }
}

/// Adapts a [`HybridSystem`] to a [`FlowMap`].
pub struct SystemFlow<'a, S: ?Sized>(pub &'a S);

impl<S: HybridSystem + ?Sized> FlowMap for SystemFlow<'_, S> {
    fn flow(&self, z: &[f64], dz: &mut [f64]) -> Result<()> {
        self.0.flow(z, dz)
    }
}

/// The six admissible perturbations of the perturbed hybrid system:
/// `z' = F(z + e1) + e2` on `C + e3`, `z+ = G(z + e4) + e5` on `D + e6`.
///
/// `e1`, `e2`, `e4` and `e5` act on the flat state and must have its length;
/// `e3` and `e6` only contribute their norm as a set inflation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSet {
    pub e1: DisturbanceSpec,
    pub e2: DisturbanceSpec,
    pub e3: DisturbanceSpec,
    pub e4: DisturbanceSpec,
    pub e5: DisturbanceSpec,
    pub e6: DisturbanceSpec,
}

impl PerturbationSet {
    pub fn zero(state_len: usize) -> Self {
        let z = DisturbanceSpec::zero(state_len);
        Self {
            e1: z.clone(),
            e2: z.clone(),
            e3: DisturbanceSpec::zero(1),
            e4: z.clone(),
            e5: z,
            e6: DisturbanceSpec::zero(1),
        }
    }

    pub fn with_state_noise(mut self, e1: DisturbanceSpec) -> Self {
        self.e1 = e1;
        self
    }

    pub fn with_dynamics_noise(mut self, e2: DisturbanceSpec) -> Self {
        self.e2 = e2;
        self
    }

    pub fn with_flow_inflation(mut self, e3: DisturbanceSpec) -> Self {
        self.e3 = e3;
        self
    }

    pub fn with_jump_state_noise(mut self, e4: DisturbanceSpec) -> Self {
        self.e4 = e4;
        self
    }

    pub fn with_jump_output_noise(mut self, e5: DisturbanceSpec) -> Self {
        self.e5 = e5;
        self
    }

    pub fn with_jump_inflation(mut self, e6: DisturbanceSpec) -> Self {
        self.e6 = e6;
        self
    }

    pub fn is_zero(&self) -> bool {
        [&self.e1, &self.e2, &self.e3, &self.e4, &self.e5, &self.e6]
            .iter()
            .all(|e| e.is_zero())
    }

    pub fn check_dims(&self, state_len: usize) -> Result<()> {
        for e in [&self.e1, &self.e2, &self.e4, &self.e5] {
            check_dim(state_len, e.dim())?;
        }
        Ok(())
    }

    fn inflation(spec: &DisturbanceSpec, t: f64, buf: &mut Vec<f64>) -> f64 {
        if spec.is_zero() {
            return 0.0;
        }
        buf.resize(spec.dim(), 0.0);
        spec.eval_into(t, buf);
        crate::norm(buf)
    }
}

/// How the current state was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    Flow,
    Jump,
}

/// Membership in the discretization-augmented jump set `D_h`.
pub fn dh_membership<S: HybridSystem + ?Sized>(sys: &S, z: &[f64], provenance: Provenance) -> bool {
    dh_inflated(sys, z, provenance, 0.0, 0.0)
}

fn dh_inflated<S: HybridSystem + ?Sized>(
    sys: &S,
    z: &[f64],
    provenance: Provenance,
    infl_c: f64,
    infl_d: f64,
) -> bool {
    sys.in_jump_set(z, infl_d) || (provenance == Provenance::Flow && !sys.in_flow_set(z, infl_c))
}

/// Absolute tolerance for clock comparisons; covers the roundoff accumulated by
/// repeated `tau += h` over one flow interval.
pub const CLOCK_TOL: f64 = 1e-9;

/// Decides whether to jump from a state in `C ∩ D_h`. States in `D_h \ C`
/// always jump, whatever the policy.
pub fn jump_policy_decide<S: HybridSystem + ?Sized, R: Rng + ?Sized>(
    policy: JumpPolicy,
    z: &[f64],
    sys: &S,
    h: f64,
    rng: &mut R,
) -> bool {
    if !sys.in_flow_set(z, 0.0) {
        return true;
    }
    let left = sys.remaining_flow_time(z);
    match policy {
        JumpPolicy::EarliestJump => true,
        JumpPolicy::LatestJump => left.is_some_and(|r| r <= CLOCK_TOL),
        JumpPolicy::UniformRandom { .. } => match left {
            None => true,
            Some(r) => {
                let q = h / (r.max(0.0) + h);
                rng.random::<f64>() < q
            }
        },
    }
}

fn fault_trace(
    mut points: Vec<TracePoint>,
    events: Vec<JumpRecord>,
    cfg: &SolverConfig,
    time: HybridTime,
    state: HybridState,
    kind: FaultKind,
    message: String,
) -> Trace {
    log::debug!("simulation fault at {time:?}: {message}");
    points.push(TracePoint {
        time,
        state,
        kind: PointKind::Fault,
    });
    Trace {
        points,
        events,
        termination: Termination::Fault { kind, message },
        config: cfg.clone(),
    }
}

fn blow_up(z: &[f64], limit: f64) -> Option<String> {
    if z.iter().any(|v| !v.is_finite()) {
        return Some("numerical blow-up: non-finite state".into());
    }
    let n = crate::norm(z);
    if n > limit {
        return Some(format!("numerical blow-up: |z| = {n:e} exceeds {limit:e}"));
    }
    None
}

/// Simulates the discretized (and optionally perturbed) hybrid system from `z0`.
///
/// Flow time advances as `t = k h`; each loop iteration either applies one
/// jump or takes one flow step. Faults are returned as traces with a
/// [`Termination::Fault`], not as errors. Errors are reserved for invalid input.
pub fn simulate<S: HybridSystem + ?Sized>(
    sys: &S,
    z0: &HybridState,
    cfg: &SolverConfig,
    pert: Option<&PerturbationSet>,
) -> Result<Trace> {
    cfg.validate()?;
    let len = sys.state_len();
    check_dim(len, z0.as_slice().len())?;
    if let Some(p) = pert {
        p.check_dims(len)?;
    }
    if !z0.is_finite() {
        return Err(Error::Precondition("initial state is not finite".into()));
    }

    let mut noise = Vec::new();
    let infl = |p: Option<&PerturbationSet>, t: f64, buf: &mut Vec<f64>| match p {
        None => (0.0, 0.0),
        Some(p) => (
            PerturbationSet::inflation(&p.e3, t, buf),
            PerturbationSet::inflation(&p.e6, t, buf),
        ),
    };
    let (c0, d0) = infl(pert, 0.0, &mut noise);
    if !sys.in_flow_set(z0.as_slice(), c0) && !sys.in_jump_set(z0.as_slice(), d0) {
        return Err(Error::Precondition(
            "initial state lies outside C ∪ D".into(),
        ));
    }

    let h = cfg.h;
    let max_steps = cfg.max_steps();
    let tableau = cfg.integrator.tableau();
    let mut stepper = Stepper::new(tableau, len);
    let flow = SystemFlow(sys);
    let flow_pert = pert.map(|p| FlowPerturbation {
        state: &p.e1,
        dynamics: &p.e2,
    });
    let mut rng = match cfg.jump_policy {
        JumpPolicy::UniformRandom { seed } => ChaCha8Rng::seed_from_u64(seed),
        _ => ChaCha8Rng::seed_from_u64(0),
    };

    let mut z = z0.clone();
    let mut post = z0.clone();
    let mut shifted = vec![0.0; len];
    let mut k: u64 = 0;
    let mut j: u64 = 0;
    let mut provenance = Provenance::Initial;
    let mut last_recorded = HybridTime::ZERO;
    let mut points = vec![TracePoint {
        time: HybridTime::ZERO,
        state: z.clone(),
        kind: PointKind::Flow,
    }];
    let mut events = Vec::new();

    let termination = loop {
        let t = k as f64 * h;
        if k >= max_steps {
            break Termination::Horizon;
        }
        let (ic, id) = infl(pert, t, &mut noise);
        let in_c = sys.in_flow_set(z.as_slice(), ic);
        let in_dh = dh_inflated(sys, z.as_slice(), provenance, ic, id);
        if !in_c && !in_dh {
            let time = HybridTime::new(t, j);
            return Ok(fault_trace(
                points,
                events,
                cfg,
                time,
                z,
                FaultKind::EscapedDomain,
                "escaped hybrid domain: state left C_h ∪ D_h".into(),
            ));
        }
        let do_jump =
            in_dh && (!in_c || jump_policy_decide(cfg.jump_policy, z.as_slice(), sys, h, &mut rng));

        if do_jump {
            if j >= cfg.max_jumps {
                break Termination::JumpCap;
            }
            let time = HybridTime::new(t, j);
            if last_recorded != time {
                points.push(TracePoint {
                    time,
                    state: z.clone(),
                    kind: PointKind::Flow,
                });
            }
            let jump_res = match pert {
                Some(p) if !p.e4.is_zero() => {
                    p.e4.eval_into(t, &mut shifted);
                    for (s, v) in shifted.iter_mut().zip(z.as_slice()) {
                        *s += v;
                    }
                    sys.jump(&shifted, post.as_mut_slice())
                }
                _ => sys.jump(z.as_slice(), post.as_mut_slice()),
            };
            if let Err(e) = jump_res {
                return Ok(fault_trace(
                    points,
                    events,
                    cfg,
                    time,
                    z,
                    FaultKind::BlowUp,
                    format!("jump map failed: {e}"),
                ));
            }
            if let Some(p) = pert {
                if !p.e5.is_zero() {
                    p.e5.eval_into(t, &mut shifted);
                    for (o, e) in post.as_mut_slice().iter_mut().zip(&shifted) {
                        *o += e;
                    }
                }
            }
            j += 1;
            let after = HybridTime::new(t, j);
            if let Some(msg) = blow_up(post.as_slice(), cfg.blowup_norm) {
                events.push(JumpRecord {
                    time,
                    pre: z.clone(),
                    post: post.clone(),
                });
                return Ok(fault_trace(
                    points,
                    events,
                    cfg,
                    after,
                    post,
                    FaultKind::BlowUp,
                    msg,
                ));
            }
            events.push(JumpRecord {
                time,
                pre: z.clone(),
                post: post.clone(),
            });
            std::mem::swap(&mut z, &mut post);
            points.push(TracePoint {
                time: after,
                state: z.clone(),
                kind: PointKind::Jump,
            });
            last_recorded = after;
            provenance = Provenance::Jump;
            continue;
        }

        if let Err(fault) = stepper.step(&flow, z.as_mut_slice(), t, h, flow_pert) {
            let time = HybridTime::new(t, j);
            return Ok(fault_trace(
                points,
                events,
                cfg,
                time,
                z,
                FaultKind::BlowUp,
                fault.message,
            ));
        }
        k += 1;
        provenance = Provenance::Flow;
        let time = HybridTime::new(k as f64 * h, j);
        if let Some(msg) = blow_up(z.as_slice(), cfg.blowup_norm) {
            return Ok(fault_trace(
                points,
                events,
                cfg,
                time,
                z,
                FaultKind::BlowUp,
                msg,
            ));
        }
        if k.is_multiple_of(cfg.record_stride) {
            points.push(TracePoint {
                time,
                state: z.clone(),
                kind: PointKind::Flow,
            });
            last_recorded = time;
        }
    };

    let time = HybridTime::new(k as f64 * h, j);
    if last_recorded != time {
        points.push(TracePoint {
            time,
            state: z,
            kind: PointKind::Flow,
        });
    }
    Ok(Trace {
        points,
        events,
        termination,
        config: cfg.clone(),
    })
}
