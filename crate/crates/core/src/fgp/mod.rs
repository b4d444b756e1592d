//! Generating functions, the portfolios they generate, and the pathwise
//! master-equation decomposition of their returns.
//!
//! A generating function `H(y, f)` is evaluated at numéraire-relative log
//! prices `y = L^ρ` and an auxiliary finite-variation process `f = F`. It
//! generates the weights `π = λρ + ∇_l H` with `λ = 1 − 1'∇_l H`, and
//!
//! ```text
//! log(V^π_T / V^ρ_T) = H(L^ρ_T, F_T) − H(L^ρ_0, F_0) − ∫ ∇_f H' dF + ∫ h dt
//! h = γ*_π − λ γ*_ρ − ½ Σ D²_ij H a^ρ_ij.
//! ```

pub mod builtin;
pub mod numeric;

use std::fmt::Debug;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FgpError, Result};
use crate::market::{relative_covariance_unchecked, LogPath, Matrix, PathSet, Schedule, TimeGrid, Vector};
use crate::numerics::trapezoid;
use crate::portfolio::{
    excess_growth_rate, realized_excess_growth, wealth_from_weights, Numeraire, NumerairePath, WeightProcess,
};

pub use builtin::{
    gauge_transform, Diversity, GaugeTransformed, Linear, PassiveLogSumExp, Quadratic, ScalarFn, Switching,
};
pub use numeric::{FiniteDifferenceGf, TabulatedSeparable};

/// A generating function `H(y, f)` with `y ∈ ℝⁿ` and auxiliary `f ∈ ℝᵏ`.
pub trait GeneratingFunction: Send + Sync + Debug {
    fn name(&self) -> String;
    /// Number of assets `n`.
    fn n(&self) -> usize;
    /// Auxiliary dimension `k`, zero for deterministic generating functions.
    fn aux_dim(&self) -> usize {
        0
    }
    fn value(&self, y: &Vector, f: &Vector) -> f64;
    fn grad_l(&self, y: &Vector, f: &Vector) -> Vector;
    /// Symmetric `n × n` Hessian in `y`.
    fn hess_l(&self, y: &Vector, f: &Vector) -> Matrix;
    fn grad_f(&self, _y: &Vector, _f: &Vector) -> Vector {
        Vector::zeros(self.aux_dim())
    }
    /// `H(y + κ1) = κ + H(y)` for all `y` and `κ`.
    fn translation_equivariant(&self) -> bool {
        false
    }
    fn has_analytic_derivatives(&self) -> bool {
        true
    }
    /// Message when `y` lies outside the region where `H` is meant to be used.
    fn domain_warning(&self, _y: &Vector) -> Option<String> {
        None
    }
}

pub type Gf = Arc<dyn GeneratingFunction>;

/// Sampled auxiliary process `F`, one `k`-vector per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryProcess {
    k: usize,
    len: usize,
    values: Vec<f64>,
}

impl AuxiliaryProcess {
    pub fn new(rows: &[Vector]) -> Result<Self> {
        let len = rows.len();
        if len == 0 {
            return Err(FgpError::validation(
                "aux",
                "auxiliary process needs at least one sample",
            ));
        }
        let k = rows[0].len();
        let mut values = Vec::with_capacity(len * k);
        for (m, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(FgpError::validation(
                    "aux",
                    format!("row {m} has length {}, expected {k}", r.len()),
                ));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(FgpError::validation("aux", format!("nonfinite value at step {m}")));
            }
            values.extend(r.iter());
        }
        Ok(Self { k, len, values })
    }

    /// The trivial process with `k = 0`.
    pub fn empty(len: usize) -> Self {
        Self {
            k: 0,
            len,
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn at(&self, m: usize) -> Vector {
        Vector::from_column_slice(&self.values[m * self.k..(m + 1) * self.k])
    }

    /// `Σ_m ‖F_{m+1} − F_m‖₁` on the grid.
    pub fn total_variation(&self) -> f64 {
        let k = self.k;
        (0..self.len.saturating_sub(1))
            .map(|m| {
                (0..k)
                    .map(|j| (self.values[(m + 1) * k + j] - self.values[m * k + j]).abs())
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Everything an auxiliary source may look at when building `F` for a path.
pub struct PathContext<'a> {
    pub path: &'a LogPath,
    pub relative: &'a LogPath,
    pub numeraire: &'a NumerairePath,
    pub grid: &'a TimeGrid,
    pub covariance: Option<&'a Schedule<Matrix>>,
}

/// Builds the auxiliary process of a path. Must be adapted: `F_m` may only
/// depend on data up to step `m`.
pub trait AuxiliarySource: Sync {
    fn build(&self, ctx: &PathContext) -> Result<AuxiliaryProcess>;
}

/// No auxiliary argument.
pub struct NoAux;

impl AuxiliarySource for NoAux {
    fn build(&self, ctx: &PathContext) -> Result<AuxiliaryProcess> {
        Ok(AuxiliaryProcess::empty(ctx.path.len()))
    }
}

impl AuxiliarySource for AuxiliaryProcess {
    fn build(&self, ctx: &PathContext) -> Result<AuxiliaryProcess> {
        if self.len != ctx.path.len() {
            return Err(FgpError::validation("aux", "auxiliary process does not match the grid"));
        }
        Ok(self.clone())
    }
}

impl<F> AuxiliarySource for F
where
    F: Fn(&PathContext) -> Result<AuxiliaryProcess> + Sync,
{
    fn build(&self, ctx: &PathContext) -> Result<AuxiliaryProcess> {
        self(ctx)
    }
}

/// Switch indicator `F_t = 1{t ≤ τ}` where `τ` is the first grid time at which
/// the relative log price of `asset` has moved by at least `barrier` from its
/// start, capped at `latest` so every path switches.
///
/// On the grid the jump becomes a linear ramp over the step after `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchAtHittingTime {
    pub asset: usize,
    pub barrier: f64,
    /// Latest switch time in years.
    pub latest: f64,
}

impl SwitchAtHittingTime {
    /// Grid index of `τ`, always below the last index.
    pub fn switch_index(&self, relative: &LogPath, grid: &TimeGrid) -> usize {
        let start = relative.row(0)[self.asset];
        let last = relative.len() - 2;
        (0..=last)
            .find(|&m| (relative.row(m)[self.asset] - start).abs() >= self.barrier || grid.time(m) >= self.latest)
            .unwrap_or(last)
    }
}

impl AuxiliarySource for SwitchAtHittingTime {
    fn build(&self, ctx: &PathContext) -> Result<AuxiliaryProcess> {
        if self.asset >= ctx.relative.n() {
            return Err(FgpError::validation("switch.asset", "asset index out of range"));
        }
        let tau = self.switch_index(ctx.relative, ctx.grid);
        let rows: Vec<Vector> = (0..ctx.path.len())
            .map(|m| Vector::from_element(1, if m <= tau { 1.0 } else { 0.0 }))
            .collect();
        AuxiliaryProcess::new(&rows)
    }
}

/// Weights generated by `H` along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct FgpWeights {
    pub weights: WeightProcess,
    pub lambda: Vec<f64>,
    /// Number of steps at which `H` reported a domain warning.
    pub domain_warnings: usize,
    pub first_warning: Option<String>,
}

fn check_dims(h: &dyn GeneratingFunction, relative: &LogPath, aux: &AuxiliaryProcess) -> Result<()> {
    if h.n() != relative.n() {
        return Err(FgpError::validation(
            "generating_function",
            format!("expects {} assets, path has {}", h.n(), relative.n()),
        ));
    }
    if h.aux_dim() != aux.dim() || aux.len() != relative.len() {
        return Err(FgpError::validation(
            "aux",
            format!(
                "generating function needs a {}-dimensional auxiliary process of length {}",
                h.aux_dim(),
                relative.len()
            ),
        ));
    }
    Ok(())
}

/// One evaluated state: weights, `λ` and gradient.
fn generate(h: &dyn GeneratingFunction, y: &Vector, f: &Vector, rho: &Vector, step: usize) -> Result<(Vector, f64)> {
    let g = h.grad_l(y, f);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(FgpError::Evaluation {
            step,
            reason: "gradient is not finite".into(),
        });
    }
    let lambda = 1.0 - g.sum();
    let mut pi = rho * lambda + g;
    // Put the rounding error of 1'π − 1 on the numéraire direction.
    let drift = pi.sum() - 1.0;
    if drift != 0.0 {
        pi -= rho * drift;
    }
    Ok((pi, lambda))
}

/// `π = λρ + ∇_l H(L^ρ, F)` with `λ = 1 − 1'∇_l H` at every grid point.
pub fn fgp_weights(
    h: &dyn GeneratingFunction,
    relative: &LogPath,
    aux: &AuxiliaryProcess,
    rho: &WeightProcess,
) -> Result<FgpWeights> {
    check_dims(h, relative, aux)?;
    if rho.len() != relative.len() {
        return Err(FgpError::validation("rho", "numéraire weights do not match the grid"));
    }
    let mut weights = Vec::with_capacity(relative.len());
    let mut lambda = Vec::with_capacity(relative.len());
    let mut domain_warnings = 0;
    let mut first_warning = None;
    for m in 0..relative.len() {
        let y = relative.vector(m);
        if let Some(w) = h.domain_warning(&y) {
            domain_warnings += 1;
            first_warning.get_or_insert_with(|| format!("step {m}: {w}"));
        }
        let (pi, l) = generate(h, &y, &aux.at(m), rho.at(m), m)?;
        weights.push(pi);
        lambda.push(l);
    }
    Ok(FgpWeights {
        weights: WeightProcess::new(h.name(), 1.0, weights)?,
        lambda,
        domain_warnings,
        first_warning,
    })
}

/// `h = γ*_π − λγ*_ρ − ½ Σ D²_ij H a^ρ_ij` from the Hessian of `H` at the
/// current state.
pub fn variance_capture(hess: &Matrix, pi: &Vector, lambda: f64, rho: &Vector, a_rho: &Matrix) -> f64 {
    let curvature = hess.component_mul(a_rho).sum();
    excess_growth_rate(pi, a_rho) - lambda * excess_growth_rate(rho, a_rho) - 0.5 * curvature
}

/// Decomposition of one path's relative log return.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasterEquationReport {
    /// `log(V^π_T/V^π_0) − log(V^ρ_T/V^ρ_0)` from the self-financing oracle.
    pub lhs: f64,
    pub delta_h: f64,
    /// `∫ ∇_f H' dF` (trapezoidal).
    pub aux_integral: f64,
    /// `−∫ ∇_f H' dF`, the term entering the decomposition.
    pub aux_correction: f64,
    /// `∫ h dt` accumulated from realized increments.
    pub drift_integral: f64,
    pub residual: f64,
    /// Largest `|residual|` of the running decomposition over the grid.
    pub max_abs_residual: f64,
    /// `∫ h dt` from the model covariance (trapezoidal), when available.
    pub drift_integral_model: Option<f64>,
    pub residual_model: Option<f64>,
    pub lambda_max_abs: f64,
    pub aux_total_variation: f64,
    pub log_wealth_pi: f64,
    pub log_wealth_rho: f64,
    pub domain_warnings: usize,
}

/// Shared inputs of a master-equation evaluation.
pub struct MasterEquationSetup<'a> {
    pub h: &'a dyn GeneratingFunction,
    pub numeraire: &'a Numeraire,
    pub aux: &'a dyn AuxiliarySource,
    pub grid: &'a TimeGrid,
    /// Model covariance for the model-based drift; optional.
    pub covariance: Option<&'a Schedule<Matrix>>,
}

/// Per-path output with the intermediate series used by other modules.
#[derive(Debug, Clone)]
pub struct MasterEquationPath {
    pub report: MasterEquationReport,
    pub weights: FgpWeights,
    pub relative: LogPath,
    pub aux: AuxiliaryProcess,
    pub numeraire: NumerairePath,
    pub log_wealth: Vec<f64>,
}

/// `L^ρ = L − log V^ρ` from a log-wealth series.
pub fn relative_from_log_wealth(path: &LogPath, log_wealth: &[f64]) -> Result<LogPath> {
    if log_wealth.len() != path.len() {
        return Err(FgpError::validation(
            "rho_wealth",
            "numéraire wealth does not match the path",
        ));
    }
    let mut values = Vec::with_capacity(path.len() * path.n());
    for (m, &lv) in log_wealth.iter().enumerate() {
        if !lv.is_finite() {
            return Err(FgpError::DegenerateNumeraire {
                step: m,
                value: lv.exp(),
            });
        }
        values.extend(path.row(m).iter().map(|l| l - lv));
    }
    LogPath::from_rows(path.n(), values)
}

/// Evaluate the master equation along one path.
///
/// The drift `∫ h dt` is accumulated per step as
/// `γ̂*_π − λ γ̂*_ρ − ½ x'D²H x` with `x = ΔL^ρ` and the discrete excess
/// growth `γ̂*_θ = log Σ θ_i e^{x_i} − θ'x`, which makes the residual the
/// third-order Taylor remainder of `H` along the path.
pub fn master_equation_path(setup: &MasterEquationSetup, path: &LogPath) -> Result<MasterEquationPath> {
    let h = setup.h;
    let numeraire = setup.numeraire.realize(path)?;
    let relative = relative_from_log_wealth(path, &numeraire.log_wealth)?;
    let aux = setup.aux.build(&PathContext {
        path,
        relative: &relative,
        numeraire: &numeraire,
        grid: setup.grid,
        covariance: setup.covariance,
    })?;
    let weights = fgp_weights(h, &relative, &aux, &numeraire.weights)?;
    let log_wealth = wealth_from_weights(path, &weights.weights)?;

    let len = path.len();
    let dt = setup.grid.dt();
    let k = aux.dim();
    let rho_w = &numeraire.weights;
    let h0 = h.value(&relative.vector(0), &aux.at(0));
    let mut h_prev = h0;
    let mut grad_f_prev = if k > 0 {
        h.grad_f(&relative.vector(0), &aux.at(0))
    } else {
        Vector::zeros(0)
    };
    let mut aux_integral = 0.0;
    let mut drift = 0.0;
    let mut max_abs_residual: f64 = 0.0;
    let mut model_h = Vec::with_capacity(if setup.covariance.is_some() { len } else { 0 });
    let mut x = vec![0.0; path.n()];
    let mut hess = h.hess_l(&relative.vector(0), &aux.at(0));

    for m in 0..len {
        let pi = weights.weights.at(m);
        let lambda = weights.lambda[m];
        if let Some(cov) = setup.covariance {
            let a_rho = relative_covariance_unchecked(cov.at(setup.grid.time(m)), rho_w.at(m));
            model_h.push(variance_capture(&hess, pi, lambda, rho_w.at(m), &a_rho));
        }
        if m + 1 == len {
            break;
        }
        let (r0, r1) = (relative.row(m), relative.row(m + 1));
        for i in 0..x.len() {
            x[i] = r1[i] - r0[i];
        }
        let bankrupt = |label: &str| FgpError::Bankruptcy {
            label: label.into(),
            step: m + 1,
            factor: f64::NAN,
        };
        let g_pi = realized_excess_growth(pi, &x).ok_or_else(|| bankrupt("pi"))?;
        let g_rho = realized_excess_growth(rho_w.at(m), &x).ok_or_else(|| bankrupt("rho"))?;
        let xv = Vector::from_column_slice(&x);
        drift += g_pi - lambda * g_rho - 0.5 * xv.dot(&(&hess * &xv));

        let y1 = relative.vector(m + 1);
        let f1 = aux.at(m + 1);
        if k > 0 {
            let grad_f = h.grad_f(&y1, &f1);
            let df = &f1 - aux.at(m);
            aux_integral += 0.5 * (&grad_f_prev + &grad_f).dot(&df);
            grad_f_prev = grad_f;
        }
        let h1 = h.value(&y1, &f1);
        if !h1.is_finite() {
            return Err(FgpError::Evaluation {
                step: m + 1,
                reason: "generating function value is not finite".into(),
            });
        }
        h_prev = h1;
        hess = h.hess_l(&y1, &f1);

        let lhs = (log_wealth[m + 1] - log_wealth[0]) - (numeraire.log_wealth[m + 1] - numeraire.log_wealth[0]);
        let running = lhs - (h1 - h0 - aux_integral + drift);
        max_abs_residual = max_abs_residual.max(running.abs());
    }

    let last = len - 1;
    let lhs = (log_wealth[last] - log_wealth[0]) - (numeraire.log_wealth[last] - numeraire.log_wealth[0]);
    let delta_h = h_prev - h0;
    let aux_correction = -aux_integral;
    let residual = lhs - (delta_h + aux_correction + drift);
    let drift_integral_model = setup.covariance.map(|_| trapezoid(&model_h, dt));
    let report = MasterEquationReport {
        lhs,
        delta_h,
        aux_integral,
        aux_correction,
        drift_integral: drift,
        residual,
        max_abs_residual: max_abs_residual.max(residual.abs()),
        drift_integral_model,
        residual_model: drift_integral_model.map(|d| lhs - (delta_h + aux_correction + d)),
        lambda_max_abs: weights.lambda.iter().fold(0.0, |acc: f64, l| acc.max(l.abs())),
        aux_total_variation: aux.total_variation(),
        log_wealth_pi: log_wealth[last] - log_wealth[0],
        log_wealth_rho: numeraire.log_wealth[last] - numeraire.log_wealth[0],
        domain_warnings: weights.domain_warnings,
    };
    Ok(MasterEquationPath {
        report,
        weights,
        relative,
        aux,
        numeraire,
        log_wealth,
    })
}

/// [`master_equation_path`] over an ensemble, in parallel. Failures are
/// reported per path.
pub fn master_equation(setup: &MasterEquationSetup, paths: &PathSet) -> Vec<Result<MasterEquationReport>> {
    paths
        .paths
        .par_iter()
        .map(|p| master_equation_path(setup, p).map(|r| r.report))
        .collect()
}

/// Discrete residuals of the two relative-return lemmas, one entry per step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaResiduals {
    /// `Δlog(V^π/V^ρ) − Σ π_i ΔL^ρ_i − γ*_π dt`.
    pub relative_return: Vec<f64>,
    /// `Σ ρ_i ΔX^ρ_i / X^ρ_i`.
    pub self_weighted: Vec<f64>,
}

impl LemmaResiduals {
    pub fn mean_abs(series: &[f64]) -> f64 {
        series.iter().map(|r| r.abs()).sum::<f64>() / series.len().max(1) as f64
    }
}

pub fn lemma_residuals(
    pi: &WeightProcess,
    rho: &WeightProcess,
    path: &LogPath,
    covariance: &Schedule<Matrix>,
    grid: &TimeGrid,
) -> Result<LemmaResiduals> {
    let v_pi = wealth_from_weights(path, pi)?;
    let v_rho = wealth_from_weights(path, rho)?;
    let relative = relative_from_log_wealth(path, &v_rho)?;
    let dt = grid.dt();
    let n = path.n();
    let mut first = Vec::with_capacity(path.len() - 1);
    let mut second = Vec::with_capacity(path.len() - 1);
    for m in 0..path.len() - 1 {
        let (r0, r1) = (relative.row(m), relative.row(m + 1));
        let a = covariance.at(grid.time(m));
        let lin: f64 = (0..n).map(|i| pi.at(m)[i] * (r1[i] - r0[i])).sum();
        let dlog = (v_pi[m + 1] - v_pi[m]) - (v_rho[m + 1] - v_rho[m]);
        first.push(dlog - lin - excess_growth_rate(pi.at(m), a) * dt);
        second.push((0..n).map(|i| rho.at(m)[i] * (r1[i] - r0[i]).exp_m1()).sum());
    }
    Ok(LemmaResiduals {
        relative_return: first,
        self_weighted: second,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivarianceReport {
    pub lambda_max_abs: f64,
    pub equivariance_residual: f64,
    pub samples: usize,
}

/// Sample states `y ∈ [−2, 2]ⁿ` and shifts `κ ∈ [−5, 5]` and report the
/// largest `|H(y + κ1) − H(y) − κ|` and `|λ(y)|`.
pub fn check_translation_equivariance(h: &dyn GeneratingFunction, samples: usize, seed: u64) -> EquivarianceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = h.n();
    let mut lambda_max_abs: f64 = 0.0;
    let mut residual: f64 = 0.0;
    for _ in 0..samples {
        let y = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let f = Vector::from_fn(h.aux_dim(), |_, _| rng.random_range(0.0..1.0));
        let kappa: f64 = rng.random_range(-5.0..5.0);
        let shifted = y.add_scalar(kappa);
        residual = residual.max((h.value(&shifted, &f) - h.value(&y, &f) - kappa).abs());
        lambda_max_abs = lambda_max_abs.max((1.0 - h.grad_l(&y, &f).sum()).abs());
    }
    EquivarianceReport {
        lambda_max_abs,
        equivariance_residual: residual,
        samples,
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Compare analytic derivatives against central differences.
    pub fn fd_check(h: &dyn GeneratingFunction, y: &Vector, f: &Vector) {
        let eps = 1e-5;
        let n = y.len();
        let g = h.grad_l(y, f);
        let hs = h.hess_l(y, f);
        for i in 0..n {
            let mut up = y.clone();
            let mut dn = y.clone();
            up[i] += eps;
            dn[i] -= eps;
            let fd = (h.value(&up, f) - h.value(&dn, f)) / (2.0 * eps);
            assert!(
                (fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()),
                "{}: grad {i}: {fd} vs {}",
                h.name(),
                g[i]
            );
            let col = (h.grad_l(&up, f) - h.grad_l(&dn, f)) / (2.0 * eps);
            for j in 0..n {
                assert!(
                    (col[j] - hs[(j, i)]).abs() < 1e-6 * (1.0 + hs[(j, i)].abs()),
                    "{}: hess ({j},{i}): {} vs {}",
                    h.name(),
                    col[j],
                    hs[(j, i)]
                );
            }
        }
        assert!(
            (&hs - hs.transpose()).amax() < 1e-12,
            "{}: Hessian not symmetric",
            h.name()
        );
        let gf = h.grad_f(y, f);
        for j in 0..f.len() {
            let mut up = f.clone();
            let mut dn = f.clone();
            up[j] += eps;
            dn[j] -= eps;
            let fd = (h.value(y, &up) - h.value(y, &dn)) / (2.0 * eps);
            assert!(
                (fd - gf[j]).abs() < 1e-6 * (1.0 + gf[j].abs()),
                "{}: grad_f {j}: {fd} vs {}",
                h.name(),
                gf[j]
            );
        }
    }
}
