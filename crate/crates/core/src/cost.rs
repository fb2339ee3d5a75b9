//! Cost functions with optional curvature and minimizer metadata.
//!
//! Gradients are always supplied analytically. Finite differences are only
//! used by [`grad_check`] to validate a provider, never inside a simulation.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_dim, invalid, Error, Result};

/// A smooth objective `f: R^n -> R` with an analytic gradient.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Writes `grad f(x)` into `out` (length `dim`).
    fn gradient(&self, x: &[f64], out: &mut [f64]);

    /// `f(x) - f*` computed without cancellation, when the objective knows how.
    fn gap(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// An [`Objective`] together with the constants the certificates need:
/// strong-convexity modulus `mu`, gradient Lipschitz constant `L`, and the
/// minimizer `(x*, f*)`.
#[derive(Clone)]
pub struct CostFunction {
    objective: Arc<dyn Objective>,
    label: String,
    mu: Option<f64>,
    lipschitz: Option<f64>,
    xstar: Option<Vec<f64>>,
    fstar: Option<f64>,
}

impl fmt::Debug for CostFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostFunction")
            .field("label", &self.label)
            .field("dim", &self.dim())
            .field("mu", &self.mu)
            .field("lipschitz", &self.lipschitz)
            .field("xstar", &self.xstar)
            .field("fstar", &self.fstar)
            .finish()
    }
}

impl CostFunction {
    pub fn new(label: impl Into<String>, objective: impl Objective + 'static) -> Self {
        Self {
            objective: Arc::new(objective),
            label: label.into(),
            mu: None,
            lipschitz: None,
            xstar: None,
            fstar: None,
        }
    }

    /// Builds a cost from a value closure and a gradient closure.
    pub fn from_fns<V, G>(label: impl Into<String>, dim: usize, value: V, gradient: G) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::new(
            label,
            FnObjective {
                dim,
                value,
                gradient,
            },
        )
    }

    /// Attaches `0 < mu <= L`.
    pub fn with_curvature(mut self, mu: Option<f64>, lipschitz: Option<f64>) -> Result<Self> {
        if let Some(l) = lipschitz {
            if !(l.is_finite() && l >= 0.0) {
                return Err(invalid(
                    "lipschitz",
                    format!("must be finite and >= 0, got {l}"),
                ));
            }
        }
        if let Some(m) = mu {
            if !(m.is_finite() && m > 0.0) {
                return Err(invalid("mu", format!("must be finite and > 0, got {m}")));
            }
            if let Some(l) = lipschitz {
                if m > l {
                    return Err(invalid("mu", format!("mu = {m} exceeds L = {l}")));
                }
            }
        }
        self.mu = mu;
        self.lipschitz = lipschitz;
        Ok(self)
    }

    pub fn with_minimizer(mut self, xstar: Vec<f64>, fstar: f64) -> Result<Self> {
        check_dim(self.dim(), xstar.len())?;
        if !fstar.is_finite() || xstar.iter().any(|v| !v.is_finite()) {
            return Err(invalid("xstar", "minimizer must be finite"));
        }
        self.xstar = Some(xstar);
        self.fstar = Some(fstar);
        Ok(self)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn mu(&self) -> Option<f64> {
        self.mu
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn xstar(&self) -> Option<&[f64]> {
        self.xstar.as_deref()
    }

    pub fn fstar(&self) -> Option<f64> {
        self.fstar
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.objective.value(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.objective.gradient(x, &mut g);
        g
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.objective.gradient(x, out);
    }

    /// Sub-optimality `f(x) - f*`. Requires `fstar`.
    pub fn suboptimality(&self, x: &[f64]) -> Result<f64> {
        let fstar = self.require_fstar()?;
        Ok(self
            .objective
            .gap(x)
            .unwrap_or_else(|| self.objective.value(x) - fstar))
    }

    pub fn require_xstar(&self) -> Result<&[f64]> {
        self.xstar.as_deref().ok_or_else(|| self.missing("xstar"))
    }

    pub fn require_fstar(&self) -> Result<f64> {
        self.fstar.ok_or_else(|| self.missing("fstar"))
    }

    pub fn require_mu(&self) -> Result<f64> {
        self.mu.ok_or_else(|| self.missing("mu"))
    }

    pub fn require_lipschitz(&self) -> Result<f64> {
        self.lipschitz.ok_or_else(|| self.missing("lipschitz"))
    }

    fn missing(&self, field: &'static str) -> Error {
        Error::MissingMetadata {
            cost: self.label.clone(),
            field,
        }
    }

    /// Checks the metadata invariants: `0 < mu <= L` and a vanishing gradient
    /// at `x*`.
    pub fn validate(&self) -> Result<()> {
        if let (Some(m), Some(l)) = (self.mu, self.lipschitz) {
            if !(0.0 < m && m <= l) {
                return Err(invalid(
                    "mu",
                    format!("need 0 < mu <= L, got mu={m}, L={l}"),
                ));
            }
        }
        if let Some(xs) = &self.xstar {
            let g = crate::norm(&self.gradient(xs));
            let scale = self.lipschitz.unwrap_or(1.0).max(1.0);
            if g > 1e-10 * scale {
                return Err(invalid("xstar", format!("|grad f(x*)| = {g:e} is not ~0")));
            }
        }
        Ok(())
    }
}

struct FnObjective<V, G> {
    dim: usize,
    value: V,
    gradient: G,
}

impl<V, G> Objective for FnObjective<V, G>
where
    V: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }
}

/// `f(x) = 1/2 x'Qx + b'x`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    n: usize,
    /// Row-major.
    q: Vec<f64>,
    b: Vec<f64>,
    xstar: Option<Vec<f64>>,
}

impl Quadratic {
    fn qx(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.q[i * self.n..(i + 1) * self.n];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut qx = vec![0.0; self.n];
        self.qx(x, &mut qx);
        let quad: f64 = qx.iter().zip(x).map(|(a, b)| a * b).sum();
        let lin: f64 = self.b.iter().zip(x).map(|(a, b)| a * b).sum();
        0.5 * quad + lin
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.qx(x, out);
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
    }

    fn gap(&self, x: &[f64]) -> Option<f64> {
        // 1/2 (x - x*)' Q (x - x*), nonnegative and free of cancellation.
        let xs = self.xstar.as_ref()?;
        let d: Vec<f64> = x.iter().zip(xs).map(|(a, b)| a - b).collect();
        let mut qd = vec![0.0; self.n];
        self.qx(&d, &mut qd);
        Some(0.5 * qd.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>())
    }
}

/// Builds `f(x) = 1/2 x'Qx + b'x` from a symmetric positive-semidefinite `Q`.
///
/// When `Q` is positive definite, `mu = lambda_min`, `L = lambda_max`,
/// `x* = -Q^{-1} b` and `f* = b'x*/2` are filled in. A singular `Q` is
/// accepted only when `b` lies in its range; the minimizer is then not unique
/// and is left unset.
pub fn make_quadratic(q: &[Vec<f64>], b: &[f64]) -> Result<CostFunction> {
    let n = b.len();
    if n == 0 {
        return Err(invalid("b", "dimension must be positive"));
    }
    check_dim(n, q.len())?;
    for row in q {
        check_dim(n, row.len())?;
    }
    let scale = q
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((q[i][j] - q[j][i]).abs());
        }
    }
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }

    let flat: Vec<f64> = q.iter().flatten().copied().collect();
    let mat = DMatrix::from_row_slice(n, n, &flat);
    let eig = mat.clone().symmetric_eigen();
    let lmin = eig.eigenvalues.min();
    let lmax = eig.eigenvalues.max();
    let tol = 1e-12 * scale;
    if lmin < -tol {
        return Err(Error::NotPositiveSemidefinite(lmin));
    }

    let mut quad = Quadratic {
        n,
        q: flat,
        b: b.to_vec(),
        xstar: None,
    };

    if lmin > tol {
        let chol = mat
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveSemidefinite(lmin))?;
        let rhs = nalgebra::DVector::from_iterator(n, b.iter().map(|v| -v));
        let mut xs = chol.solve(&rhs);
        // one step of iterative refinement
        let resid = &rhs - &mat * &xs;
        xs += chol.solve(&resid);
        let xstar: Vec<f64> = xs.iter().copied().collect();
        let fstar = 0.5 * b.iter().zip(&xstar).map(|(a, c)| a * c).sum::<f64>();
        quad.xstar = Some(xstar.clone());
        CostFunction::new("quadratic", quad)
            .with_curvature(Some(lmin), Some(lmax))?
            .with_minimizer(xstar, fstar)
    } else {
        // b must be orthogonal to the null space.
        let bn = crate::norm(b);
        for (k, lam) in eig.eigenvalues.iter().enumerate() {
            if lam.abs() <= tol {
                let v = eig.eigenvectors.column(k);
                let proj: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                if proj.abs() > 1e-10 * bn.max(1.0) {
                    return Err(Error::NoMinimizer);
                }
            }
        }
        let l = if lmax > 0.0 { Some(lmax) } else { None };
        CostFunction::new("quadratic", quad).with_curvature(None, l)
    }
}

/// `ln cosh(d)` evaluated without overflow or cancellation.
fn log_cosh(d: f64) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        let s = (0.5 * a).sinh();
        (2.0 * s * s).ln_1p()
    } else {
        a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
    }
}

/// `f(x) = sum_i ln cosh(x_i - a_i) + mu/2 |x - a|^2`: smooth, strongly
/// convex with modulus `mu`, gradient Lipschitz with `L = 1 + mu`, and
/// asymptotically linear apart from the quadratic term.
#[derive(Debug, Clone)]
pub struct LogCosh {
    center: Vec<f64>,
    mu: f64,
}

impl Objective for LogCosh {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.center)
            .map(|(xi, ai)| {
                let d = xi - ai;
                log_cosh(d) + 0.5 * self.mu * d * d
            })
            .sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), ai) in out.iter_mut().zip(x).zip(&self.center) {
            let d = xi - ai;
            *o = d.tanh() + self.mu * d;
        }
    }

    fn gap(&self, x: &[f64]) -> Option<f64> {
        Some(self.value(x))
    }
}

pub fn make_log_cosh(center: Vec<f64>, mu: f64) -> Result<CostFunction> {
    if center.is_empty() {
        return Err(invalid("center", "dimension must be positive"));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(invalid("mu", format!("must be > 0, got {mu}")));
    }
    CostFunction::new(
        "log-cosh",
        LogCosh {
            center: center.clone(),
            mu,
        },
    )
    .with_curvature(Some(mu), Some(1.0 + mu))?
    .with_minimizer(center, 0.0)
}

/// Maximum over coordinates of
/// `|central difference - gradient_i| / max(1, |gradient_i|)`.
pub fn grad_check(f: &CostFunction, x: &[f64], fd_step: f64) -> f64 {
    let g = f.gradient(x);
    let mut xp = x.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        xp[i] = x[i] + fd_step;
        let up = f.value(&xp);
        xp[i] = x[i] - fd_step;
        let down = f.value(&xp);
        xp[i] = x[i];
        let fd = (up - down) / (2.0 * fd_step);
        worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1.0));
    }
    worst
}

/// Bundled test functions.
pub mod corpus {
    use super::*;

    /// The scalar cost `x^2 / (2 p^2)` of the non-uniformity example.
    pub fn example1(p: f64) -> CostFunction {
        make_quadratic(&[vec![1.0 / (p * p)]], &[0.0])
            .expect("positive scalar quadratic")
            .with_label("example1")
    }

    /// `|x|^2 / 2` in `n` dimensions (`mu = L = 1`).
    pub fn half_square(n: usize) -> CostFunction {
        let q: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        make_quadratic(&q, &vec![0.0; n])
            .expect("identity is positive definite")
            .with_label(format!("half-square-{n}"))
    }

    /// `diag(1, 4)` with `b = (1, 0)`; minimizer `(-1, 0)`.
    pub fn diag_1_4() -> CostFunction {
        make_quadratic(&[vec![1.0, 0.0], vec![0.0, 4.0]], &[1.0, 0.0])
            .expect("diagonal positive definite")
            .with_label("diag-1-4")
    }

    /// A coupled 3-D quadratic with a tridiagonal Hessian.
    pub fn coupled3() -> CostFunction {
        make_quadratic(
            &[
                vec![2.0, 1.0, 0.0],
                vec![1.0, 3.0, 1.0],
                vec![0.0, 1.0, 4.0],
            ],
            &[1.0, -2.0, 0.5],
        )
        .expect("diagonally dominant")
        .with_label("coupled-3")
    }

    pub fn log_cosh2() -> CostFunction {
        make_log_cosh(vec![0.5, -1.0], 0.5).expect("valid log-cosh")
    }

    pub fn quadratic_corpus() -> Vec<CostFunction> {
        vec![example1(2.0), half_square(1), diag_1_4(), coupled3()]
    }

    /// Quadratic corpus plus the non-quadratic log-cosh member.
    pub fn bundled_corpus() -> Vec<CostFunction> {
        let mut v = quadratic_corpus();
        v.push(log_cosh2());
        v
    }
}
