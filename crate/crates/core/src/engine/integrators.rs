//! Explicit Runge-Kutta flow discretizations `F_h`.

use serde::{Deserialize, Serialize};

use super::FlowMap;
use crate::error::{invalid, Result};
use crate::signal::DisturbanceSpec;
use crate::state::HybridState;

/// Explicit Butcher tableau with strictly lower-triangular `a` and `sum(b) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ButcherTableau {
    pub label: String,
    /// `a[k]` holds the coefficients `a_{k,0..k}`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl ButcherTableau {
    pub fn new(label: impl Into<String>, a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let stages = b.len();
        if stages == 0 {
            return Err(invalid("b", "need at least one stage"));
        }
        if a.len() != stages {
            return Err(invalid(
                "a",
                format!("expected {stages} rows, got {}", a.len()),
            ));
        }
        for (k, row) in a.iter().enumerate() {
            if row.len() != k {
                return Err(invalid(
                    "a",
                    format!(
                        "row {k} must have {k} entries (explicit scheme), got {}",
                        row.len()
                    ),
                ));
            }
        }
        let sum: f64 = b.iter().sum();
        if (sum - 1.0).abs() > 1e-14 {
            return Err(invalid("b", format!("weights must sum to 1, got {sum}")));
        }
        Ok(Self {
            label: label.into(),
            a,
            b,
        })
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// Stage abscissae `c_k = sum_j a_{kj}`.
    pub fn nodes(&self) -> Vec<f64> {
        self.a.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn euler() -> Self {
        Self::new("euler", vec![vec![]], vec![1.0]).unwrap()
    }

    pub fn midpoint() -> Self {
        Self::new("midpoint", vec![vec![], vec![0.5]], vec![0.0, 1.0]).unwrap()
    }

    pub fn heun() -> Self {
        Self::new("heun", vec![vec![], vec![1.0]], vec![0.5, 0.5]).unwrap()
    }

    /// Kutta's third-order method.
    pub fn rk3() -> Self {
        Self::new(
            "rk3",
            vec![vec![], vec![0.5], vec![-1.0, 2.0]],
            vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        )
        .unwrap()
    }

    /// The classical fourth-order method.
    pub fn rk4() -> Self {
        Self::new(
            "rk4",
            vec![vec![], vec![0.5], vec![0.0, 0.5], vec![0.0, 0.0, 1.0]],
            vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        )
        .unwrap()
    }
}

/// Why a single step could not be completed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFault {
    pub message: String,
}

/// Flow perturbations `z' = F(z + e1(t)) + e2(t)`.
#[derive(Debug, Clone, Copy)]
pub struct FlowPerturbation<'a> {
    pub state: &'a DisturbanceSpec,
    pub dynamics: &'a DisturbanceSpec,
}

/// Reusable RK stepper holding stage scratch buffers.
#[derive(Debug, Clone)]
pub struct Stepper {
    tableau: ButcherTableau,
    nodes: Vec<f64>,
    k: Vec<Vec<f64>>,
    stage: Vec<f64>,
    shifted: Vec<f64>,
    noise: Vec<f64>,
    acc: Vec<f64>,
}

impl Stepper {
    pub fn new(tableau: ButcherTableau, len: usize) -> Self {
        let s = tableau.stages();
        Self {
            nodes: tableau.nodes(),
            tableau,
            k: vec![vec![0.0; len]; s],
            stage: vec![0.0; len],
            shifted: vec![0.0; len],
            noise: vec![0.0; len],
            acc: vec![0.0; len],
        }
    }

    pub fn tableau(&self) -> &ButcherTableau {
        &self.tableau
    }

    fn eval<F: FlowMap + ?Sized>(
        &mut self,
        f: &F,
        stage_idx: usize,
        t: f64,
        pert: Option<FlowPerturbation<'_>>,
    ) -> std::result::Result<(), StepFault> {
        let out = &mut self.k[stage_idx];
        let res = match pert {
            None => f.flow(&self.stage, out),
            Some(p) => {
                let base = if p.state.is_zero() {
                    f.flow(&self.stage, out)
                } else {
                    p.state.eval_into(t, &mut self.noise);
                    for ((s, z), e) in self.shifted.iter_mut().zip(&self.stage).zip(&self.noise) {
                        *s = z + e;
                    }
                    f.flow(&self.shifted, out)
                };
                if base.is_ok() && !p.dynamics.is_zero() {
                    p.dynamics.eval_into(t, &mut self.noise);
                    for (o, e) in out.iter_mut().zip(&self.noise) {
                        *o += e;
                    }
                }
                base
            }
        };
        res.map_err(|e| StepFault {
            message: e.to_string(),
        })?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(StepFault {
                message: format!("non-finite flow value in stage {stage_idx}"),
            });
        }
        Ok(())
    }

    /// Advances `z` in place by one step `F_h`. `t` is the hybrid flow time of
    /// `z`, used only to evaluate the disturbances at the stage times.
    pub fn step<F: FlowMap + ?Sized>(
        &mut self,
        f: &F,
        z: &mut [f64],
        t: f64,
        h: f64,
        pert: Option<FlowPerturbation<'_>>,
    ) -> std::result::Result<(), StepFault> {
        let s = self.tableau.stages();
        for k in 0..s {
            self.stage.copy_from_slice(z);
            for j in 0..k {
                let a = self.tableau.a[k][j];
                if a != 0.0 {
                    for (g, kj) in self.stage.iter_mut().zip(&self.k[j]) {
                        *g += h * a * kj;
                    }
                }
            }
            let tk = t + self.nodes[k] * h;
            self.eval(f, k, tk, pert)?;
        }
        self.acc.fill(0.0);
        for k in 0..s {
            let b = self.tableau.b[k];
            if b != 0.0 {
                for (a, kk) in self.acc.iter_mut().zip(&self.k[k]) {
                    *a += b * kk;
                }
            }
        }
        for (zi, a) in z.iter_mut().zip(&self.acc) {
            *zi += h * a;
        }
        Ok(())
    }
}

/// `F_h(z) = z + h F(z)`.
pub fn euler_step<F: FlowMap + ?Sized>(
    f: &F,
    z: &HybridState,
    h: f64,
) -> std::result::Result<HybridState, StepFault> {
    rk_step(f, z, h, &ButcherTableau::euler())
}

/// `F_h(z) = z + h sum_k b_k F(g_k)` with `g_k = z + h sum_{j<k} a_kj F(g_j)`.
pub fn rk_step<F: FlowMap + ?Sized>(
    f: &F,
    z: &HybridState,
    h: f64,
    tab: &ButcherTableau,
) -> std::result::Result<HybridState, StepFault> {
    let mut out = z.clone();
    let mut stepper = Stepper::new(tab.clone(), z.as_slice().len());
    stepper.step(f, out.as_mut_slice(), 0.0, h, None)?;
    Ok(out)
}

/// Integrates `n_steps` flow steps without any jump logic.
pub fn integrate_flow<F: FlowMap + ?Sized>(
    f: &F,
    z0: &HybridState,
    h: f64,
    n_steps: u64,
    tab: &ButcherTableau,
) -> std::result::Result<HybridState, StepFault> {
    let mut z = z0.clone();
    let mut stepper = Stepper::new(tab.clone(), z.as_slice().len());
    for i in 0..n_steps {
        stepper.step(f, z.as_mut_slice(), i as f64 * h, h, None)?;
    }
    Ok(z)
}

/// `|F_h(z) - z - h F(z)| / h`. For a regular discretization this is at most
/// `rho(h)` with `rho(h) -> 0`; for explicit RK schemes it is `O(h)`.
pub fn regularity_defect<F: FlowMap + ?Sized>(
    f: &F,
    z: &HybridState,
    h: f64,
    tab: &ButcherTableau,
) -> std::result::Result<f64, StepFault> {
    let stepped = rk_step(f, z, h, tab)?;
    let mut dz = vec![0.0; z.as_slice().len()];
    f.flow(z.as_slice(), &mut dz).map_err(|e| StepFault {
        message: e.to_string(),
    })?;
    let defect: f64 = stepped
        .as_slice()
        .iter()
        .zip(z.as_slice())
        .zip(&dz)
        .map(|((s, z0), d)| {
            let r = s - z0 - h * d;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    Ok(defect / h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Result as CoreResult;

    fn growth(z: &[f64], dz: &mut [f64]) -> CoreResult<()> {
        dz.copy_from_slice(z);
        Ok(())
    }

    #[test]
    fn tableau_validation() {
        assert!(ButcherTableau::new("bad", vec![vec![]], vec![0.5]).is_err());
        assert!(ButcherTableau::new("implicit", vec![vec![0.5]], vec![1.0]).is_err());
        for t in [
            ButcherTableau::euler(),
            ButcherTableau::midpoint(),
            ButcherTableau::heun(),
            ButcherTableau::rk3(),
            ButcherTableau::rk4(),
        ] {
            assert!((t.b.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(ButcherTableau::rk4().nodes(), vec![0.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn rk4_on_exponential_growth() {
        // Stages for z' = z, z = 1, h = 0.1:
        //   k1 = 1, k2 = 1.05, k3 = 1.0525, k4 = 1.10525
        //   z + h/6 (k1 + 2 k2 + 2 k3 + k4) = 1.1051708333...
        let k1: f64 = 1.0;
        let k2 = 1.0 + 0.05 * k1;
        let k3 = 1.0 + 0.05 * k2;
        let k4 = 1.0 + 0.1 * k3;
        let expected = 1.0 + 0.1 / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        assert!((expected - 1.105_170_833_333_333).abs() < 1e-15);

        let z = HybridState::from_flat(vec![1.0]);
        let out = rk_step(&growth, &z, 0.1, &ButcherTableau::rk4()).unwrap();
        assert!((out.as_slice()[0] - expected).abs() < 1e-15);
        assert!((out.as_slice()[0] - 0.1_f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn zero_field_leaves_state() {
        let zero = |_: &[f64], dz: &mut [f64]| -> CoreResult<()> {
            dz.fill(0.0);
            Ok(())
        };
        let z = HybridState::new(&[1.0, -2.0], &[3.0, 4.0], 1.5);
        assert_eq!(euler_step(&zero, &z, 0.1).unwrap(), z);
        assert_eq!(rk_step(&zero, &z, 0.1, &ButcherTableau::rk4()).unwrap(), z);
    }

    #[test]
    fn non_finite_flow_faults() {
        let bad = |_: &[f64], dz: &mut [f64]| -> CoreResult<()> {
            dz.fill(f64::NAN);
            Ok(())
        };
        let z = HybridState::from_flat(vec![1.0]);
        assert!(euler_step(&bad, &z, 0.1).is_err());
    }
}
