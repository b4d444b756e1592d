//! Generating functions whose derivatives are obtained numerically.

use std::fmt;
use std::sync::Arc;

use super::GeneratingFunction;
use crate::error::{FgpError, Result};
use crate::market::{Matrix, Vector};

type Scalar = Arc<dyn Fn(&Vector, &Vector) -> f64 + Send + Sync>;

/// Relative tolerance of the Richardson check done on construction.
pub const RICHARDSON_TOL: f64 = 1e-6;

fn grad_step(v: f64) -> f64 {
    f64::EPSILON.cbrt() * v.abs().max(1.0)
}

fn hess_step(v: f64) -> f64 {
    f64::EPSILON.powf(0.25) * v.abs().max(1.0)
}

/// A user-supplied `H(y, f)` differentiated by central differences.
#[derive(Clone)]
pub struct FiniteDifferenceGf {
    n: usize,
    k: usize,
    f: Scalar,
}

impl fmt::Debug for FiniteDifferenceGf {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("FiniteDifferenceGf")
            .field("n", &self.n)
            .field("k", &self.k)
            .finish()
    }
}

fn central(f: &dyn Fn(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

fn richardson_ok(coarse: f64, fine: f64) -> bool {
    let refined = (4.0 * fine - coarse) / 3.0;
    (coarse - refined).abs() <= RICHARDSON_TOL * refined.abs().max(1.0)
}

impl FiniteDifferenceGf {
    /// Wrap `f`, checking the difference quotients against a Richardson
    /// extrapolation at the probe state.
    pub fn new<F>(n: usize, aux_dim: usize, f: F, probe_y: &Vector, probe_f: &Vector) -> Result<Self>
    where
        F: Fn(&Vector, &Vector) -> f64 + Send + Sync + 'static,
    {
        if n == 0 || probe_y.len() != n || probe_f.len() != aux_dim {
            return Err(FgpError::validation(
                "probe",
                "probe point does not match the dimensions",
            ));
        }
        let gf = Self {
            n,
            k: aux_dim,
            f: Arc::new(f),
        };
        if !(gf.f)(probe_y, probe_f).is_finite() {
            return Err(FgpError::validation(
                "generating_function",
                "not finite at the probe point",
            ));
        }
        for i in 0..n {
            let line = |t: f64| {
                let mut y = probe_y.clone();
                y[i] += t;
                (gf.f)(&y, probe_f)
            };
            let h = grad_step(probe_y[i]);
            if !richardson_ok(central(&line, h), central(&line, h / 2.0)) {
                return Err(FgpError::validation(
                    "generating_function",
                    format!("finite-difference gradient {i} fails the Richardson check"),
                ));
            }
            let second = |h: f64| (line(2.0 * h) - 2.0 * line(0.0) + line(-2.0 * h)) / (4.0 * h * h);
            let h = hess_step(probe_y[i]);
            if !richardson_ok(second(h), second(h / 2.0)) {
                return Err(FgpError::validation(
                    "generating_function",
                    format!("finite-difference Hessian ({i},{i}) fails the Richardson check"),
                ));
            }
        }
        Ok(gf)
    }

    fn shifted(&self, y: &Vector, f: &Vector, i: usize, t: f64) -> f64 {
        let mut y = y.clone();
        y[i] += t;
        (self.f)(&y, f)
    }
}

impl GeneratingFunction for FiniteDifferenceGf {
    fn name(&self) -> String {
        "finite-difference".into()
    }
    fn n(&self) -> usize {
        self.n
    }
    fn aux_dim(&self) -> usize {
        self.k
    }
    fn value(&self, y: &Vector, f: &Vector) -> f64 {
        (self.f)(y, f)
    }
    fn grad_l(&self, y: &Vector, f: &Vector) -> Vector {
        Vector::from_fn(self.n, |i, _| {
            let h = grad_step(y[i]);
            (self.shifted(y, f, i, h) - self.shifted(y, f, i, -h)) / (2.0 * h)
        })
    }
    fn hess_l(&self, y: &Vector, f: &Vector) -> Matrix {
        let n = self.n;
        let steps: Vec<f64> = y.iter().map(|v| hess_step(*v)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let eval = |si: f64, sj: f64| {
                    let mut z = y.clone();
                    z[i] += si * steps[i];
                    z[j] += sj * steps[j];
                    (self.f)(&z, f)
                };
                let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                    / (4.0 * steps[i] * steps[j]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
    fn grad_f(&self, y: &Vector, f: &Vector) -> Vector {
        Vector::from_fn(self.k, |j, _| {
            let h = grad_step(f[j]);
            let mut up = f.clone();
            let mut dn = f.clone();
            up[j] += h;
            dn[j] -= h;
            ((self.f)(y, &up) - (self.f)(y, &dn)) / (2.0 * h)
        })
    }
    fn has_analytic_derivatives(&self) -> bool {
        false
    }
}

/// One sampled gradient table `(y_k, ∂H/∂y_i (y_k))`, knots increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    knots: Vec<f64>,
    slopes: Vec<f64>,
    cumulative: Vec<f64>,
}

impl GradientTable {
    pub fn new(knots: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != slopes.len() {
            return Err(FgpError::validation(
                "gradient_table",
                "need at least two knots with one slope each",
            ));
        }
        if knots.iter().chain(&slopes).any(|v| !v.is_finite()) {
            return Err(FgpError::validation("gradient_table", "entries must be finite"));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FgpError::validation(
                "gradient_table",
                "knots must be strictly increasing",
            ));
        }
        let mut cumulative = vec![0.0];
        for k in 1..knots.len() {
            let area = 0.5 * (slopes[k] + slopes[k - 1]) * (knots[k] - knots[k - 1]);
            cumulative.push(cumulative[k - 1] + area);
        }
        Ok(Self {
            knots,
            slopes,
            cumulative,
        })
    }

    fn segment(&self, y: f64) -> usize {
        self.knots.partition_point(|k| *k <= y).clamp(1, self.knots.len() - 1) - 1
    }

    /// Linearly interpolated slope, constant beyond the table.
    pub fn slope(&self, y: f64) -> f64 {
        let last = self.knots.len() - 1;
        if y <= self.knots[0] {
            return self.slopes[0];
        }
        if y >= self.knots[last] {
            return self.slopes[last];
        }
        let j = self.segment(y);
        let w = (y - self.knots[j]) / (self.knots[j + 1] - self.knots[j]);
        self.slopes[j] + w * (self.slopes[j + 1] - self.slopes[j])
    }

    /// Antiderivative of [`slope`](Self::slope) vanishing at the first knot.
    pub fn integral(&self, y: f64) -> f64 {
        let last = self.knots.len() - 1;
        if y <= self.knots[0] {
            return self.slopes[0] * (y - self.knots[0]);
        }
        if y >= self.knots[last] {
            return self.cumulative[last] + self.slopes[last] * (y - self.knots[last]);
        }
        let j = self.segment(y);
        self.cumulative[j] + 0.5 * (self.slopes[j] + self.slope(y)) * (y - self.knots[j])
    }
}

/// Separable `H(y) = Σ_i g_i(y_i)` specified by sampled gradient tables.
/// Hessians are central differences of the interpolated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedSeparable {
    tables: Vec<GradientTable>,
}

impl TabulatedSeparable {
    /// `finite_difference_hessian` must be set: the tables carry no curvature.
    pub fn new(tables: Vec<GradientTable>, finite_difference_hessian: bool) -> Result<Self> {
        if !finite_difference_hessian {
            return Err(FgpError::validation(
                "finite_difference_hessian",
                "gradient tables require the finite-difference Hessian flag",
            ));
        }
        if tables.is_empty() {
            return Err(FgpError::validation("gradient_table", "need one table per asset"));
        }
        Ok(Self { tables })
    }
}

impl GeneratingFunction for TabulatedSeparable {
    fn name(&self) -> String {
        "gradient-table".into()
    }
    fn n(&self) -> usize {
        self.tables.len()
    }
    fn value(&self, y: &Vector, _f: &Vector) -> f64 {
        self.tables.iter().zip(y.iter()).map(|(t, v)| t.integral(*v)).sum()
    }
    fn grad_l(&self, y: &Vector, _f: &Vector) -> Vector {
        Vector::from_iterator(y.len(), self.tables.iter().zip(y.iter()).map(|(t, v)| t.slope(*v)))
    }
    fn hess_l(&self, y: &Vector, _f: &Vector) -> Matrix {
        let d = Vector::from_iterator(
            y.len(),
            self.tables.iter().zip(y.iter()).map(|(t, v)| {
                let h = grad_step(*v);
                (t.slope(v + h) - t.slope(v - h)) / (2.0 * h)
            }),
        );
        Matrix::from_diagonal(&d)
    }
    fn has_analytic_derivatives(&self) -> bool {
        false
    }
}
