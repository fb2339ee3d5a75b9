//! Continuous-time vector fields: the time-varying accelerated ODE in its two
//! first-order forms, the HAND flow map and the perturbation layer.

use serde::{Deserialize, Serialize};

use crate::cost::CostFunction;
use crate::engine::{HybridSystem, CLOCK_TOL};
use crate::error::{check_dim, invalid, Error, Result};
use crate::signal::DisturbanceSpec;

/// Parameters of `x'' + (ell/t) x' + c p^2 t^(p-2) grad f(x) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeParams {
    pub p: f64,
    pub c: f64,
    pub ell: f64,
    pub t0: f64,
}

impl OdeParams {
    pub fn new(p: f64, c: f64, ell: f64, t0: f64) -> Result<Self> {
        let params = Self { p, c, ell, t0 };
        params.validate()?;
        Ok(params)
    }

    /// The Nesterov case `p = 2`, `ell = 3`, `c = 1/4`.
    pub fn nesterov(t0: f64) -> Result<Self> {
        Self::new(2.0, 0.25, 3.0, t0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 2.0 && self.p.is_finite()) {
            return Err(invalid("p", format!("must be >= 2, got {}", self.p)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(invalid("c", format!("must be > 0, got {}", self.c)));
        }
        if !(self.ell > 1.0 && self.ell.is_finite()) {
            return Err(invalid("ell", format!("must be > 1, got {}", self.ell)));
        }
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(invalid("t0", format!("must be > 0, got {}", self.t0)));
        }
        Ok(())
    }
}

/// Which first-order form of the ODE to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// `x1 = x`, `x2 = x'`.
    #[default]
    Velocity,
    /// `x1 = x`, `x2 = x + t x' / (ell - 1)`.
    Momentum,
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTime(t))
    }
}

/// Velocity form, written into `dx1`, `dx2`.
pub fn nominal_flow_rep1_into(
    t: f64,
    x1: &[f64],
    x2: &[f64],
    params: &OdeParams,
    f: &CostFunction,
    dx1: &mut [f64],
    dx2: &mut [f64],
) -> Result<()> {
    check_time(t)?;
    check_dim(f.dim(), x1.len())?;
    check_dim(f.dim(), x2.len())?;
    f.gradient_into(x1, dx2);
    let damping = params.ell / t;
    let gain = params.c * params.p * params.p * t.powf(params.p - 2.0);
    dx1.copy_from_slice(x2);
    for (d, v) in dx2.iter_mut().zip(x2) {
        *d = -damping * v - gain * *d;
    }
    Ok(())
}

pub fn nominal_flow_rep1(
    t: f64,
    x1: &[f64],
    x2: &[f64],
    params: &OdeParams,
    f: &CostFunction,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut dx1 = vec![0.0; x1.len()];
    let mut dx2 = vec![0.0; x1.len()];
    nominal_flow_rep1_into(t, x1, x2, params, f, &mut dx1, &mut dx2)?;
    Ok((dx1, dx2))
}

/// Momentum form, written into `dx1`, `dx2`.
pub fn nominal_flow_rep2_into(
    t: f64,
    x1: &[f64],
    x2: &[f64],
    params: &OdeParams,
    f: &CostFunction,
    dx1: &mut [f64],
    dx2: &mut [f64],
) -> Result<()> {
    check_time(t)?;
    check_dim(f.dim(), x1.len())?;
    check_dim(f.dim(), x2.len())?;
    let lm1 = params.ell - 1.0;
    let rate = lm1 / t;
    for ((d, a), b) in dx1.iter_mut().zip(x1).zip(x2) {
        *d = rate * (b - a);
    }
    f.gradient_into(x1, dx2);
    let gain = params.c * params.p * params.p * t.powf(params.p - 1.0) / lm1;
    for d in dx2.iter_mut() {
        *d *= -gain;
    }
    Ok(())
}

pub fn nominal_flow_rep2(
    t: f64,
    x1: &[f64],
    x2: &[f64],
    params: &OdeParams,
    f: &CostFunction,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut dx1 = vec![0.0; x1.len()];
    let mut dx2 = vec![0.0; x1.len()];
    nominal_flow_rep2_into(t, x1, x2, params, f, &mut dx1, &mut dx2)?;
    Ok((dx1, dx2))
}

/// Maps a velocity-form state `(x, x')` at time `t` to momentum form.
pub fn velocity_to_momentum(t: f64, x: &[f64], v: &[f64], params: &OdeParams) -> Vec<f64> {
    let s = t / (params.ell - 1.0);
    x.iter().zip(v).map(|(a, b)| a + s * b).collect()
}

/// HAND flow for order `p` on the flat state `[x1, x2, tau]`:
/// `((p/tau)(x2 - x1), -c p tau^(p-1) grad f(x1), 1)`.
pub fn hand_flow_into(z: &[f64], c: f64, p: f64, f: &CostFunction, dz: &mut [f64]) -> Result<()> {
    let n = f.dim();
    check_dim(2 * n + 1, z.len())?;
    check_dim(z.len(), dz.len())?;
    let tau = z[2 * n];
    check_time(tau)?;
    let (x1, x2) = (&z[..n], &z[n..2 * n]);
    let (d1, rest) = dz.split_at_mut(n);
    let d2 = &mut rest[..n];
    let rate = p / tau;
    for ((d, a), b) in d1.iter_mut().zip(x1).zip(x2) {
        *d = rate * (b - a);
    }
    f.gradient_into(x1, d2);
    let gain = if p == 2.0 {
        2.0 * c * tau
    } else {
        c * p * tau.powf(p - 1.0)
    };
    for d in d2.iter_mut() {
        *d *= -gain;
    }
    dz[2 * n] = 1.0;
    Ok(())
}

/// The `p = 2` HAND flow `((2/tau)(x2 - x1), -2 c tau grad f(x1), 1)`.
pub fn hand_flow(z: &crate::HybridState, c: f64, f: &CostFunction) -> Result<Vec<f64>> {
    hand_flow_general(z, c, 2.0, f)
}

pub fn hand_flow_general(
    z: &crate::HybridState,
    c: f64,
    p: f64,
    f: &CostFunction,
) -> Result<Vec<f64>> {
    let mut dz = vec![0.0; z.as_slice().len()];
    hand_flow_into(z.as_slice(), c, p, f, &mut dz)?;
    Ok(dz)
}

/// A time-varying vector field `x' = F(t, x)`.
pub trait TimeVaryingFlow: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()>;
}

/// The nominal ODE on `x = [x1, x2]` in either representation.
#[derive(Debug, Clone)]
pub struct NominalFlow {
    pub params: OdeParams,
    pub rep: Representation,
    pub cost: CostFunction,
}

impl NominalFlow {
    pub fn new(cost: CostFunction, params: OdeParams, rep: Representation) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, rep, cost })
    }
}

impl TimeVaryingFlow for NominalFlow {
    fn dim(&self) -> usize {
        2 * self.cost.dim()
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let n = self.cost.dim();
        check_dim(2 * n, x.len())?;
        check_dim(2 * n, dx.len())?;
        let (x1, x2) = x.split_at(n);
        let (d1, d2) = dx.split_at_mut(n);
        match self.rep {
            Representation::Velocity => {
                nominal_flow_rep1_into(t, x1, x2, &self.params, &self.cost, d1, d2)
            }
            Representation::Momentum => {
                nominal_flow_rep2_into(t, x1, x2, &self.params, &self.cost, d1, d2)
            }
        }
    }
}

/// `x' = F(t, x + e_s(t)) + e_a(t)`.
#[derive(Debug, Clone)]
pub struct PerturbedFlow<F> {
    inner: F,
    e_s: DisturbanceSpec,
    e_a: DisturbanceSpec,
}

pub fn perturbed_flow<F: TimeVaryingFlow>(
    inner: F,
    e_s: DisturbanceSpec,
    e_a: DisturbanceSpec,
) -> Result<PerturbedFlow<F>> {
    check_dim(inner.dim(), e_s.dim())?;
    check_dim(inner.dim(), e_a.dim())?;
    Ok(PerturbedFlow { inner, e_s, e_a })
}

impl<F: TimeVaryingFlow> TimeVaryingFlow for PerturbedFlow<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        if self.e_s.is_zero() {
            self.inner.eval(t, x, dx)?;
        } else {
            let mut shifted = self.e_s.eval(t);
            for (s, v) in shifted.iter_mut().zip(x) {
                *s += v;
            }
            self.inner.eval(t, &shifted, dx)?;
        }
        if !self.e_a.is_zero() {
            for (d, e) in dx.iter_mut().zip(self.e_a.eval(t)) {
                *d += e;
            }
        }
        Ok(())
    }
}

/// The nominal ODE as a hybrid system with empty jump set. The clock
/// coordinate carries the ODE time: `tau = t0 + t`, `tau' = 1`.
#[derive(Debug, Clone)]
pub struct NominalOde {
    flow: NominalFlow,
}

impl NominalOde {
    pub fn new(cost: CostFunction, params: OdeParams, rep: Representation) -> Result<Self> {
        Ok(Self {
            flow: NominalFlow::new(cost, params, rep)?,
        })
    }

    pub fn params(&self) -> &OdeParams {
        &self.flow.params
    }

    pub fn representation(&self) -> Representation {
        self.flow.rep
    }

    pub fn cost(&self) -> &CostFunction {
        &self.flow.cost
    }

    /// Initial hybrid state for `x(t0) = x0`, `x'(t0) = v0`, in this
    /// system's representation.
    pub fn initial_state(&self, x0: &[f64], v0: &[f64]) -> crate::HybridState {
        let t0 = self.flow.params.t0;
        match self.flow.rep {
            Representation::Velocity => crate::HybridState::new(x0, v0, t0),
            Representation::Momentum => {
                let x2 = velocity_to_momentum(t0, x0, v0, &self.flow.params);
                crate::HybridState::new(x0, &x2, t0)
            }
        }
    }
}

impl HybridSystem for NominalOde {
    fn state_len(&self) -> usize {
        2 * self.flow.cost.dim() + 1
    }

    fn flow(&self, z: &[f64], dz: &mut [f64]) -> Result<()> {
        let m = z.len() - 1;
        let t = z[m];
        self.flow.eval(t, &z[..m], &mut dz[..m])?;
        dz[m] = 1.0;
        Ok(())
    }

    fn jump(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(z);
        Ok(())
    }

    fn in_flow_set(&self, z: &[f64], inflation: f64) -> bool {
        z[z.len() - 1] >= self.flow.params.t0 - CLOCK_TOL - inflation
    }

    fn in_jump_set(&self, _z: &[f64], _inflation: f64) -> bool {
        false
    }
}

/// `∫_{s_k}^{s_k + r} ell / (s + 1) ds = ell ln(1 + r / (s_k + 1))`.
pub fn limiting_integral(ell2: f64, s_k: f64, r: f64) -> f64 {
    ell2 * (r / (s_k + 1.0)).ln_1p()
}
