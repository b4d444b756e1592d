//! Immunizing generating functions against factor exposures by projecting
//! their argument onto the orthogonal complement of the factors.
//!
//! For orthonormal factors `b¹..bᴷ` and `P = I − Σ bᵏbᵏ'` the immunized
//! function is `H̃(y, b) = H(Py)`. Its portfolio satisfies
//! `(bᵏ)'(π − λρ) = 0`, and the factors enter the master equation as an
//! auxiliary process.

use std::io::Read;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FgpError, Result};
use crate::fgp::{
    master_equation_path, AuxiliaryProcess, AuxiliarySource, GeneratingFunction, Gf, MasterEquationSetup, PathContext,
};
use crate::market::{LogPath, Matrix, PathSet, Schedule, TimeGrid, Vector};
use crate::numerics::mean;
use crate::portfolio::{Numeraire, NumerairePath, WeightProcess};

/// Tolerance on `bᵏ'bʲ = δ_kj`.
pub const ORTHONORMAL_TOL: f64 = 1e-10;
/// Smallest admissible Gram–Schmidt pivot, relative to the raw vector norm.
pub const PIVOT_TOL: f64 = 1e-10;
/// Smallest admissible numéraire variance rate in the CAPM factor.
pub const MIN_NUMERAIRE_VARIANCE: f64 = 1e-12;

/// Largest deviation of the Gram matrix from the identity.
pub fn orthonormality_defect(b: &[Vector]) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, bk) in b.iter().enumerate() {
        for (j, bj) in b.iter().enumerate().skip(k) {
            let target = if k == j { 1.0 } else { 0.0 };
            worst = worst.max((bk.dot(bj) - target).abs());
        }
    }
    worst
}

fn check_orthonormal(b: &[Vector], n: usize) -> Result<()> {
    if b.iter().any(|v| v.len() != n) {
        return Err(FgpError::validation(
            "factors",
            format!("factor vectors must have length {n}"),
        ));
    }
    if b.len() > n {
        return Err(FgpError::validation("factors", "more factors than assets"));
    }
    let defect = orthonormality_defect(b);
    if !(defect <= ORTHONORMAL_TOL) {
        return Err(FgpError::validation(
            "factors",
            format!("factors are not orthonormal (defect {defect:e}); orthonormalize them first"),
        ));
    }
    Ok(())
}

fn project_unchecked(y: &Vector, b: &[Vector]) -> Vector {
    let mut out = y.clone();
    for bk in b {
        out -= bk * bk.dot(y);
    }
    out
}

/// `P^⊥(y, b) = y − Σ (y'bᵏ) bᵏ`.
pub fn project_orthogonal(y: &Vector, b: &[Vector]) -> Result<Vector> {
    check_orthonormal(b, y.len())?;
    Ok(project_unchecked(y, b))
}

/// Modified Gram–Schmidt. Fails on the first vector whose residual after
/// projection is below [`PIVOT_TOL`] times its norm.
pub fn orthonormalize(raw: &[Vector]) -> Result<Vec<Vector>> {
    let mut out: Vec<Vector> = Vec::with_capacity(raw.len());
    for (index, v) in raw.iter().enumerate() {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FgpError::validation("factors", format!("factor {index} is not finite")));
        }
        if let Some(first) = out.first() {
            if first.len() != v.len() {
                return Err(FgpError::validation("factors", "factor vectors differ in length"));
            }
        }
        let scale = v.norm();
        let mut w = v.clone();
        for q in &out {
            let c = q.dot(&w);
            w -= q * c;
        }
        let pivot = w.norm();
        if !(pivot > PIVOT_TOL * scale) || scale == 0.0 {
            return Err(FgpError::RankDeficient { index, pivot });
        }
        out.push(w / pivot);
    }
    Ok(out)
}

/// `n^{−1/2} 1`: exposure to the overall price level.
pub fn price_level_factor(n: usize) -> Vector {
    Vector::from_element(n, 1.0 / (n as f64).sqrt())
}

/// `K` orthonormal factors at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaFactors {
    n: usize,
    k: usize,
    steps: Vec<Vec<Vector>>,
}

impl BetaFactors {
    /// Orthonormalize raw factors step by step.
    pub fn from_raw(n: usize, raw: &[Vec<Vector>]) -> Result<Self> {
        if raw.is_empty() {
            return Err(FgpError::validation("factors", "empty factor series"));
        }
        let k = raw[0].len();
        let mut steps = Vec::with_capacity(raw.len());
        for r in raw {
            if r.len() != k || r.iter().any(|v| v.len() != n) {
                return Err(FgpError::validation("factors", "factor series has inconsistent shape"));
            }
            steps.push(orthonormalize(r)?);
        }
        Ok(Self { n, k, steps })
    }

    /// Already orthonormal factors; validated, not modified.
    pub fn from_orthonormal(n: usize, steps: Vec<Vec<Vector>>) -> Result<Self> {
        if steps.is_empty() {
            return Err(FgpError::validation("factors", "empty factor series"));
        }
        let k = steps[0].len();
        for (m, s) in steps.iter().enumerate() {
            if s.len() != k {
                return Err(FgpError::validation(
                    "factors",
                    format!("step {m} has {} factors, expected {k}", s.len()),
                ));
            }
            check_orthonormal(s, n)?;
        }
        Ok(Self { n, k, steps })
    }

    pub fn constant(n: usize, raw: &[Vector], len: usize) -> Result<Self> {
        let b = orthonormalize(raw)?;
        if b.iter().any(|v| v.len() != n) {
            return Err(FgpError::validation(
                "factors",
                format!("factor vectors must have length {n}"),
            ));
        }
        Ok(Self {
            n,
            k: b.len(),
            steps: vec![b; len],
        })
    }

    /// Unpack factors from an auxiliary process laid out factor by factor.
    pub fn from_aux(n: usize, aux: &AuxiliaryProcess) -> Result<Self> {
        if n == 0 || aux.dim() % n != 0 {
            return Err(FgpError::validation(
                "factors",
                "auxiliary dimension is not a multiple of n",
            ));
        }
        let steps = (0..aux.len()).map(|m| unpack(&aux.at(m), n)).collect();
        Self::from_orthonormal(n, steps)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn at(&self, m: usize) -> &[Vector] {
        &self.steps[m]
    }

    /// Worst orthonormality defect over all steps.
    pub fn certificate(&self) -> f64 {
        self.steps.iter().map(|s| orthonormality_defect(s)).fold(0.0, f64::max)
    }

    pub fn to_aux(&self) -> Result<AuxiliaryProcess> {
        let rows: Vec<Vector> = self.steps.iter().map(|s| pack(s, self.n)).collect();
        AuxiliaryProcess::new(&rows)
    }
}

impl AuxiliarySource for BetaFactors {
    fn build(&self, ctx: &PathContext) -> Result<AuxiliaryProcess> {
        if self.len() != ctx.path.len() {
            return Err(FgpError::validation("factors", "factor series does not match the grid"));
        }
        self.to_aux()
    }
}

fn pack(b: &[Vector], n: usize) -> Vector {
    let mut out = Vector::zeros(b.len() * n);
    for (k, bk) in b.iter().enumerate() {
        out.rows_mut(k * n, n).copy_from(bk);
    }
    out
}

fn unpack(f: &Vector, n: usize) -> Vec<Vector> {
    (0..f.len() / n).map(|k| f.rows(k * n, n).into_owned()).collect()
}

/// `H̃(y, b) = H(P^⊥(y, b))` with the `K` factors passed as the auxiliary
/// argument, factor by factor.
#[derive(Debug, Clone)]
pub struct ImmunizedGf {
    inner: Gf,
    k: usize,
}

pub fn immunized_gf(inner: Gf, k: usize) -> Result<ImmunizedGf> {
    if inner.aux_dim() != 0 {
        return Err(FgpError::validation(
            "generating_function",
            "immunization needs a generating function without auxiliary arguments",
        ));
    }
    if k > inner.n() {
        return Err(FgpError::validation("factors", "more factors than assets"));
    }
    Ok(ImmunizedGf { inner, k })
}

impl ImmunizedGf {
    fn parts(&self, y: &Vector, f: &Vector) -> (Vec<Vector>, Vector) {
        let b = unpack(f, y.len());
        let py = project_unchecked(y, &b);
        (b, py)
    }

    fn projector(b: &[Vector], n: usize) -> Matrix {
        let mut p = Matrix::identity(n, n);
        for bk in b {
            p -= bk * bk.transpose();
        }
        p
    }
}

impl GeneratingFunction for ImmunizedGf {
    fn name(&self) -> String {
        format!("immunized({})", self.inner.name())
    }
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn aux_dim(&self) -> usize {
        self.k * self.inner.n()
    }
    fn value(&self, y: &Vector, f: &Vector) -> f64 {
        let (_, py) = self.parts(y, f);
        self.inner.value(&py, &Vector::zeros(0))
    }
    fn grad_l(&self, y: &Vector, f: &Vector) -> Vector {
        let (b, py) = self.parts(y, f);
        project_unchecked(&self.inner.grad_l(&py, &Vector::zeros(0)), &b)
    }
    fn hess_l(&self, y: &Vector, f: &Vector) -> Matrix {
        let (b, py) = self.parts(y, f);
        let p = Self::projector(&b, y.len());
        let inner = self.inner.hess_l(&py, &Vector::zeros(0));
        let out = &p * inner * &p;
        (&out + out.transpose()) * 0.5
    }
    fn grad_f(&self, y: &Vector, f: &Vector) -> Vector {
        let n = y.len();
        let (b, py) = self.parts(y, f);
        let g = self.inner.grad_l(&py, &Vector::zeros(0));
        let mut out = Vector::zeros(self.k * n);
        for (k, bk) in b.iter().enumerate() {
            let bg = bk.dot(&g);
            let by = bk.dot(y);
            for i in 0..n {
                out[k * n + i] = -bg * y[i] - by * g[i];
            }
        }
        out
    }
}

/// `max_k |(bᵏ)'(π − λρ)|` at every step.
pub fn immunization_residual(
    pi: &WeightProcess,
    lambda: &[f64],
    rho: &WeightProcess,
    beta: &BetaFactors,
) -> Result<Vec<f64>> {
    if pi.len() != beta.len() || rho.len() != beta.len() || lambda.len() != beta.len() {
        return Err(FgpError::validation("factors", "series lengths differ"));
    }
    Ok((0..beta.len())
        .map(|m| {
            let exposure = pi.at(m) - rho.at(m) * lambda[m];
            beta.at(m).iter().map(|b| b.dot(&exposure).abs()).fold(0.0, f64::max)
        })
        .collect())
}

/// Where the covariances behind the CAPM factor come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceSource {
    /// Model covariance `a_t` sampled on the grid.
    Model,
    /// Realized covariation of log prices with the numéraire's log wealth.
    Realized,
}

/// Raw CAPM factor `β̃_i = [aρ]_i / a_ρρ − 1`, with both covariances
/// averaged over the trailing `window` steps.
///
/// Grid points before the first full window carry the first full-window
/// estimate; with realized covariances this is a burn-in that looks ahead.
pub fn capm_beta_factor(
    path: &LogPath,
    numeraire: &NumerairePath,
    grid: &TimeGrid,
    covariance: Option<&Schedule<Matrix>>,
    window: usize,
    source: CovarianceSource,
) -> Result<Vec<Vector>> {
    if window == 0 {
        return Err(FgpError::validation("window", "window must cover at least one step"));
    }
    let n = path.n();
    let len = path.len();
    // Per-sample contributions, then trailing sums.
    let mut cross: Vec<Vector> = Vec::with_capacity(len);
    let mut var: Vec<f64> = Vec::with_capacity(len);
    match source {
        CovarianceSource::Model => {
            let cov = covariance.ok_or_else(|| FgpError::validation("covariance", "model covariance required"))?;
            for m in 0..len {
                let rho = numeraire.weights.at(m);
                let a_rho = cov.at(grid.time(m)) * rho;
                var.push(rho.dot(&a_rho));
                cross.push(a_rho);
            }
        }
        CovarianceSource::Realized => {
            if len < 2 {
                return Err(FgpError::validation("path", "need at least one increment"));
            }
            let lv = &numeraire.log_wealth;
            for m in 0..len {
                // Sample m carries the increment ending at m.
                let j = m.max(1);
                let dv = lv[j] - lv[j - 1];
                let dl = path.increment(j - 1);
                var.push(dv * dv);
                cross.push(dl * dv);
            }
        }
    }
    // Before the first full window the factor is held at the first
    // full-window estimate, so the warm-up adds no jumps.
    let anchor = (window - 1).min(len - 1);
    let mut out = Vec::with_capacity(len);
    let mut sum_cross = Vector::zeros(n);
    let mut sum_var = 0.0;
    for m in 0..len {
        sum_cross += &cross[m];
        sum_var += var[m];
        if m >= window {
            sum_cross -= &cross[m - window];
            sum_var -= var[m - window];
        }
        if m < anchor {
            continue;
        }
        let count = (m + 1).min(window) as f64;
        if !(sum_var / count
            >= MIN_NUMERAIRE_VARIANCE
                * if source == CovarianceSource::Realized {
                    grid.dt()
                } else {
                    1.0
                })
        {
            return Err(FgpError::Estimation(format!(
                "numéraire variance too small for the CAPM factor at step {m}"
            )));
        }
        let beta = sum_cross.map(|c| c / sum_var).add_scalar(-1.0);
        if m == anchor {
            out.extend(std::iter::repeat_n(beta.clone(), anchor));
        }
        out.push(beta);
    }
    Ok(out)
}

/// Auxiliary source producing orthonormalized CAPM factors, optionally
/// preceded by the price-level factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapmFactors {
    pub window: usize,
    pub source: CovarianceSource,
    pub with_price_level: bool,
}

impl CapmFactors {
    pub fn k(&self) -> usize {
        if self.with_price_level {
            2
        } else {
            1
        }
    }

    pub fn factors(&self, ctx: &PathContext) -> Result<BetaFactors> {
        let raw = capm_beta_factor(
            ctx.path,
            ctx.numeraire,
            ctx.grid,
            ctx.covariance,
            self.window,
            self.source,
        )?;
        let n = ctx.path.n();
        let series: Vec<Vec<Vector>> = raw
            .into_iter()
            .map(|b| {
                if self.with_price_level {
                    vec![price_level_factor(n), b]
                } else {
                    vec![b]
                }
            })
            .collect();
        BetaFactors::from_raw(n, &series)
    }
}

impl AuxiliarySource for CapmFactors {
    fn build(&self, ctx: &PathContext) -> Result<AuxiliaryProcess> {
        self.factors(ctx)?.to_aux()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImmunizationPath {
    pub path: usize,
    pub max_exposure: f64,
    pub max_abs_residual: f64,
    pub residual: f64,
    pub max_certificate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImmunizationReport {
    pub k: usize,
    pub n_paths: usize,
    /// Largest per-step `|(bᵏ)'(π − λρ)|` over all paths.
    pub max_exposure: f64,
    /// Largest orthonormality defect of the factors actually used.
    pub max_certificate: f64,
    pub max_abs_residual: f64,
    pub mean_abs_residual: f64,
    /// Share of paths whose running master-equation residual is below `tolerance`.
    pub fraction_within: f64,
    pub tolerance: f64,
    #[serde(skip)]
    pub paths: Vec<ImmunizationPath>,
}

/// Immunize `inner` against the factors produced by `factors` and run the
/// master equation on every path, recording factor exposure and residuals.
pub fn immunization_study(
    inner: Gf,
    factors: &CapmFactors,
    numeraire: &Numeraire,
    paths: &PathSet,
    covariance: Option<&Schedule<Matrix>>,
    tolerance: f64,
) -> Result<ImmunizationReport> {
    let h = immunized_gf(inner, factors.k())?;
    let n = h.n();
    let setup = MasterEquationSetup {
        h: &h,
        numeraire,
        aux: factors,
        grid: &paths.grid,
        covariance,
    };
    let rows: Vec<Result<ImmunizationPath>> = paths
        .paths
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let out = master_equation_path(&setup, p)?;
            let beta = BetaFactors::from_aux(n, &out.aux)?;
            let exposure =
                immunization_residual(&out.weights.weights, &out.weights.lambda, &out.numeraire.weights, &beta)?;
            Ok(ImmunizationPath {
                path: k,
                max_exposure: exposure.iter().copied().fold(0.0, f64::max),
                max_abs_residual: out.report.max_abs_residual,
                residual: out.report.residual,
                max_certificate: beta.certificate(),
            })
        })
        .collect();
    let rows: Vec<ImmunizationPath> = rows.into_iter().collect::<Result<_>>()?;
    let fold = |f: fn(&ImmunizationPath) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let abs: Vec<f64> = rows.iter().map(|r| r.residual.abs()).collect();
    Ok(ImmunizationReport {
        k: factors.k(),
        n_paths: rows.len(),
        max_exposure: fold(|r| r.max_exposure),
        max_certificate: fold(|r| r.max_certificate),
        max_abs_residual: fold(|r| r.max_abs_residual),
        mean_abs_residual: mean(&abs),
        fraction_within: rows.iter().filter(|r| r.max_abs_residual < tolerance).count() as f64
            / rows.len().max(1) as f64,
        tolerance,
        paths: rows,
    })
}

/// Read `time, b^1_1..b^1_n, b^2_1..` rows; factors must be orthonormal.
pub fn read_factor_csv<R: Read>(input: R, n: usize) -> Result<(Vec<f64>, BetaFactors)> {
    let io = |e: csv::Error| FgpError::Io {
        path: "factor csv".into(),
        reason: e.to_string(),
    };
    let mut rdr = csv::Reader::from_reader(input);
    let width = rdr.headers().map_err(io)?.len();
    if n == 0 || width < 1 + n || (width - 1) % n != 0 {
        return Err(FgpError::validation(
            "factors",
            format!("expected 1 + K·{n} columns, found {width}"),
        ));
    }
    let mut times = Vec::new();
    let mut steps = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(io)?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| FgpError::validation("factors", format!("row {}: {e}", row + 1)))?;
        times.push(vals[0]);
        steps.push(unpack(&Vector::from_column_slice(&vals[1..]), n));
    }
    Ok((times, BetaFactors::from_orthonormal(n, steps)?))
}
