//! Itô markets on log prices: specification, simulation and covariance
//! utilities.
//!
//! Log prices follow `dL = γ dt + σ dW` with `σ` an `n × d` matrix. The
//! instantaneous covariance of log prices is `a = σσ'`, and quantities
//! measured against a numéraire `ρ` use the relative covariance `a^ρ`.

mod ingest;

pub use ingest::{read_price_csv, read_price_csv_from};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{FgpError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Tolerance for "weights sum to one" checks on user-supplied vectors.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A coefficient that is either constant or piecewise constant in time.
///
/// Breakpoints are `(start_time, value)` pairs in increasing time order; the
/// first breakpoint must start at zero.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule<T> {
    Constant(T),
    Piecewise(Vec<(f64, T)>),
}

impl<T> Schedule<T> {
    pub fn at(&self, t: f64) -> &T {
        match self {
            Schedule::Constant(v) => v,
            Schedule::Piecewise(pieces) => {
                let idx = pieces.partition_point(|(start, _)| *start <= t);
                &pieces[idx.saturating_sub(1)].1
            }
        }
    }

    pub fn values(&self) -> Vec<&T> {
        match self {
            Schedule::Constant(v) => vec![v],
            Schedule::Piecewise(p) => p.iter().map(|(_, v)| v).collect(),
        }
    }

    fn check_breakpoints(&self, field: &str) -> Result<()> {
        if let Schedule::Piecewise(p) = self {
            if p.is_empty() {
                return Err(FgpError::validation(field, "empty schedule"));
            }
            if p[0].0 != 0.0 {
                return Err(FgpError::validation(field, "first breakpoint must start at 0"));
            }
            if p.windows(2).any(|w| !(w[1].0 > w[0].0)) || p.iter().any(|(t, _)| !t.is_finite()) {
                return Err(FgpError::validation(
                    field,
                    "breakpoints must be finite and strictly increasing",
                ));
            }
        }
        Ok(())
    }
}

/// Drift and volatility of an `n`-asset Itô market driven by `d` Brownian motions.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec {
    n: usize,
    d: usize,
    gamma: Schedule<Vector>,
    sigma: Schedule<Matrix>,
    money_market_index: Option<usize>,
    l0: Vector,
}

impl MarketSpec {
    pub fn new(
        gamma: Schedule<Vector>,
        sigma: Schedule<Matrix>,
        money_market_index: Option<usize>,
        l0: Vector,
    ) -> Result<Self> {
        let n = l0.len();
        if n == 0 {
            return Err(FgpError::validation("L0", "market needs at least one asset"));
        }
        gamma.check_breakpoints("gamma")?;
        sigma.check_breakpoints("sigma")?;
        let d = sigma.values()[0].ncols();
        if d < n {
            return Err(FgpError::validation(
                "d",
                format!("Brownian dimension {d} is smaller than asset count {n}"),
            ));
        }
        for g in gamma.values() {
            if g.len() != n {
                return Err(FgpError::validation(
                    "gamma",
                    format!("expected {n} entries, got {}", g.len()),
                ));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(FgpError::validation("gamma", "drift must be finite"));
            }
        }
        for s in sigma.values() {
            if s.nrows() != n || s.ncols() != d {
                return Err(FgpError::validation(
                    "sigma",
                    format!("expected {n}x{d} matrix, got {}x{}", s.nrows(), s.ncols()),
                ));
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(FgpError::validation("sigma", "volatility must be finite"));
            }
            check_psd(&(s * s.transpose()), "sigma")?;
            if let Some(mm) = money_market_index {
                if mm >= n {
                    return Err(FgpError::validation("money_market_index", "index out of range"));
                }
                if s.row(mm).iter().any(|x| *x != 0.0) {
                    return Err(FgpError::validation(
                        "sigma",
                        format!("money-market row {mm} must be identically zero"),
                    ));
                }
            }
        }
        if l0.iter().any(|x| !x.is_finite()) {
            return Err(FgpError::validation("L0", "initial log prices must be finite"));
        }
        Ok(Self {
            n,
            d,
            gamma,
            sigma,
            money_market_index,
            l0,
        })
    }

    /// Constant-coefficient market (geometric Brownian motion in prices).
    pub fn constant(gamma: Vector, sigma: Matrix, l0: Vector) -> Result<Self> {
        Self::new(Schedule::Constant(gamma), Schedule::Constant(sigma), None, l0)
    }

    pub fn with_money_market(mut self, index: usize) -> Result<Self> {
        self.money_market_index = Some(index);
        Self::new(self.gamma, self.sigma, self.money_market_index, self.l0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l0(&self) -> &Vector {
        &self.l0
    }

    pub fn money_market_index(&self) -> Option<usize> {
        self.money_market_index
    }

    pub fn gamma_at(&self, t: f64) -> &Vector {
        self.gamma.at(t)
    }

    pub fn sigma_at(&self, t: f64) -> &Matrix {
        self.sigma.at(t)
    }

    /// Covariance schedule `a = σσ'` matching the volatility breakpoints.
    pub fn covariance_schedule(&self) -> Schedule<Matrix> {
        match &self.sigma {
            Schedule::Constant(s) => Schedule::Constant(s * s.transpose()),
            Schedule::Piecewise(p) => Schedule::Piecewise(p.iter().map(|(t, s)| (*t, s * s.transpose())).collect()),
        }
    }
}

fn check_psd(a: &Matrix, field: &str) -> Result<()> {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if (a - a.transpose()).amax() > 1e-12 * scale {
        return Err(FgpError::validation(field, "covariance is not symmetric"));
    }
    let eig = SymmetricEigen::new(a.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(FgpError::validation(
            field,
            format!("covariance is not positive semidefinite (min eigenvalue {min:e})"),
        ));
    }
    Ok(())
}

/// Uniform discretization of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(FgpError::validation("horizon", "must be positive and finite"));
        }
        if steps == 0 {
            return Err(FgpError::validation("steps", "need at least one step"));
        }
        Ok(Self { horizon, steps })
    }

    /// Grid with step as close as possible to `dt` over `[0, horizon]`.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(FgpError::validation("dt", "must be positive and finite"));
        }
        Self::new(horizon, ((horizon / dt).round() as usize).max(1))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        if m == self.steps {
            self.horizon
        } else {
            m as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|m| self.time(m)).collect()
    }
}

/// One path of log prices, stored row-major as `(M+1) × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPath {
    n: usize,
    values: Vec<f64>,
}

impl LogPath {
    pub fn from_rows(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() % n != 0 || values.len() < 2 * n {
            return Err(FgpError::validation(
                "path",
                "row-major data does not match asset count",
            ));
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of grid points, `M + 1`.
    pub fn len(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.n..(m + 1) * self.n]
    }

    pub fn vector(&self, m: usize) -> Vector {
        Vector::from_column_slice(self.row(m))
    }

    pub fn increment(&self, m: usize) -> Vector {
        Vector::from_iterator(
            self.n,
            (0..self.n).map(|i| self.values[(m + 1) * self.n + i] - self.values[m * self.n + i]),
        )
    }

    pub fn asset(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(i).step_by(self.n).copied()
    }

    pub fn first(&self) -> Vector {
        self.vector(0)
    }

    pub fn last(&self) -> Vector {
        self.vector(self.len() - 1)
    }

    /// Every `factor`-th row, starting from the first.
    pub fn subsample(&self, factor: usize) -> Result<LogPath> {
        if factor == 0 || (self.len() - 1) % factor != 0 {
            return Err(FgpError::validation(
                "factor",
                "subsampling factor must divide the step count",
            ));
        }
        let values = (0..self.len())
            .step_by(factor)
            .flat_map(|m| self.row(m).iter().copied())
            .collect();
        Ok(LogPath { n: self.n, values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathOrigin {
    Simulated,
    Ingested,
}

/// An ensemble of log-price paths on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub grid: TimeGrid,
    pub paths: Vec<LogPath>,
    pub seed: u64,
    pub origin: PathOrigin,
    pub names: Vec<String>,
}

impl PathSet {
    pub fn n(&self) -> usize {
        self.paths.first().map_or(0, LogPath::n)
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }
}

/// Deterministic random stream for one path: the master seed picks the key
/// and the path index picks the ChaCha stream, so path `k` does not depend
/// on how many paths are generated.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Euler–Maruyama on log prices; exact in law for constant coefficients.
pub fn simulate_paths(spec: &MarketSpec, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathSet> {
    if n_paths == 0 {
        return Err(FgpError::validation("paths", "need at least one path"));
    }
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|k| simulate_path(spec, grid, seed, k))
        .collect();
    Ok(PathSet {
        grid: *grid,
        paths,
        seed,
        origin: PathOrigin::Simulated,
        names: (1..=spec.n()).map(|i| format!("asset{i}")).collect(),
    })
}

/// Path `k` of the ensemble [`simulate_paths`] would produce with `seed`.
pub fn simulate_path(spec: &MarketSpec, grid: &TimeGrid, seed: u64, k: usize) -> LogPath {
    let (n, d) = (spec.n(), spec.d());
    let steps = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut rng = path_rng(seed, k);
    let mut values = Vec::with_capacity((steps + 1) * n);
    values.extend(spec.l0().iter());
    let mut z = vec![0.0; d];
    for m in 0..steps {
        let t = grid.time(m);
        let gamma = spec.gamma_at(t);
        let sigma = spec.sigma_at(t);
        for zj in z.iter_mut() {
            *zj = StandardNormal.sample(&mut rng);
        }
        let base = m * n;
        for i in 0..n {
            let mut shock = 0.0;
            for (j, zj) in z.iter().enumerate() {
                shock += sigma[(i, j)] * zj;
            }
            let next = values[base + i] + gamma[i] * dt + shock * sqrt_dt;
            values.push(next);
        }
    }
    LogPath { n, values }
}

/// Instantaneous covariance `a_t = σ_t σ_t'`.
pub fn covariance(spec: &MarketSpec, t: f64) -> Result<Matrix> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(FgpError::validation("t", "time must be finite and nonnegative"));
    }
    let s = spec.sigma_at(t);
    Ok(s * s.transpose())
}

pub fn check_weights(field: &str, w: &Vector, n: usize) -> Result<()> {
    if w.len() != n {
        return Err(FgpError::validation(
            field,
            format!("expected {n} weights, got {}", w.len()),
        ));
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(FgpError::validation(field, "weights must be finite"));
    }
    let s = w.sum();
    if (s - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(FgpError::validation(field, format!("weights sum to {s}, not 1")));
    }
    Ok(())
}

/// Covariance of log prices measured in units of the numéraire `ρ`:
/// `a^ρ_ij = a_ij − [aρ]_i − [aρ]_j + ρ'aρ`.
pub fn relative_covariance(a: &Matrix, rho: &Vector) -> Result<Matrix> {
    check_weights("rho", rho, a.nrows())?;
    Ok(relative_covariance_unchecked(a, rho))
}

pub(crate) fn relative_covariance_unchecked(a: &Matrix, rho: &Vector) -> Matrix {
    let n = a.nrows();
    let a_rho = a * rho;
    let a_rr = rho.dot(&a_rho);
    Matrix::from_fn(n, n, |i, j| a[(i, j)] - a_rho[i] - a_rho[j] + a_rr)
}

/// Realized covariation of one path over non-overlapping `lag`-step increments.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedCovariation {
    /// Sum of `ΔL ΔL'` over the increments.
    pub sum: Matrix,
    /// Elapsed time covered by the increments, in years.
    pub elapsed: f64,
    pub increments: usize,
    /// `sum / elapsed`: annualized variance rate.
    pub rate: Matrix,
}

pub fn realized_covariation(paths: &PathSet, lag: usize) -> Result<Vec<RealizedCovariation>> {
    let steps = paths.grid.steps();
    if lag == 0 || lag > steps {
        return Err(FgpError::validation(
            "lag",
            format!("must be in 1..={steps}, got {lag}"),
        ));
    }
    let dt = paths.grid.dt();
    Ok(paths
        .paths
        .par_iter()
        .map(|p| realized_covariation_path(p, lag, dt))
        .collect())
}

pub fn realized_covariation_path(path: &LogPath, lag: usize, dt: f64) -> RealizedCovariation {
    let n = path.n();
    let count = (path.len() - 1) / lag;
    let mut sum = Matrix::zeros(n, n);
    for c in 0..count {
        let (a, b) = (path.row(c * lag), path.row((c + 1) * lag));
        for i in 0..n {
            let di = b[i] - a[i];
            for j in 0..n {
                sum[(i, j)] += di * (b[j] - a[j]);
            }
        }
    }
    let elapsed = count as f64 * lag as f64 * dt;
    let rate = &sum / elapsed;
    RealizedCovariation {
        sum,
        elapsed,
        increments: count,
        rate,
    }
}

/// Log prices relative to a numéraire wealth series: `L^ρ = L − log V^ρ`.
pub fn relative_log_prices(path: &LogPath, numeraire_wealth: &[f64]) -> Result<LogPath> {
    if numeraire_wealth.len() != path.len() {
        return Err(FgpError::validation(
            "rho_wealth",
            format!("expected {} values, got {}", path.len(), numeraire_wealth.len()),
        ));
    }
    let n = path.n();
    let mut values = Vec::with_capacity(path.values.len());
    for (m, &v) in numeraire_wealth.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(FgpError::DegenerateNumeraire { step: m, value: v });
        }
        let lv = v.ln();
        values.extend(path.row(m).iter().map(|l| l - lv));
    }
    Ok(LogPath { n, values })
}

/// [`relative_log_prices`] across an ensemble.
pub fn to_numeraire(paths: &PathSet, rho_wealth: &[Vec<f64>]) -> Result<Vec<LogPath>> {
    if rho_wealth.len() != paths.n_paths() {
        return Err(FgpError::validation(
            "rho_wealth",
            "one wealth series per path required",
        ));
    }
    paths
        .paths
        .iter()
        .zip(rho_wealth)
        .map(|(p, w)| relative_log_prices(p, w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    fn gbm1(sigma: f64, gamma: f64) -> MarketSpec {
        MarketSpec::constant(dvector![gamma], dmatrix![sigma], dvector![0.0]).unwrap()
    }

    #[test]
    fn zero_vol_paths_follow_drift_exactly() {
        let spec = MarketSpec::constant(dvector![0.05, -0.02], Matrix::zeros(2, 2), dvector![1.0, 2.0]).unwrap();
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let ps = simulate_paths(&spec, &grid, 3, 7).unwrap();
        for p in &ps.paths {
            let last = p.last();
            assert_abs_diff_eq!(last[0], 1.0 + 0.1, epsilon = 1e-14);
            assert_abs_diff_eq!(last[1], 2.0 - 0.04, epsilon = 1e-14);
        }
    }

    #[test]
    fn terminal_variance_matches_sigma_squared_t() {
        let spec = gbm1(0.2, 0.0);
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let ps = simulate_paths(&spec, &grid, 10_000, 11).unwrap();
        let lt: Vec<f64> = ps.paths.iter().map(|p| p.last()[0]).collect();
        let var = crate::numerics::sample_variance(&lt);
        assert!((var / 0.04 - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn simulation_is_deterministic_and_path_order_independent() {
        let spec = gbm1(0.3, 0.01);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let a = simulate_paths(&spec, &grid, 5, 99).unwrap();
        let b = simulate_paths(&spec, &grid, 5, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&spec, &grid, 2, 99).unwrap();
        assert_eq!(c.paths[1], a.paths[1]);
        let d = simulate_paths(&spec, &grid, 5, 100).unwrap();
        assert_ne!(d.paths[0], a.paths[0]);
    }

    #[test]
    fn covariance_examples() {
        let spec = MarketSpec::constant(dvector![0.0, 0.0], Matrix::identity(2, 2), dvector![0.0, 0.0]).unwrap();
        assert_eq!(covariance(&spec, 0.0).unwrap(), Matrix::identity(2, 2));
        let spec = MarketSpec::constant(dvector![0.0, 0.0], dmatrix![0.2, 0.0; 0.1, 0.1], dvector![0.0, 0.0]).unwrap();
        let a = covariance(&spec, 0.5).unwrap();
        let expected = dmatrix![0.04, 0.02; 0.02, 0.02];
        assert_abs_diff_eq!(a, expected, epsilon = 1e-15);
    }

    #[test]
    fn money_market_row_must_be_zero_and_gives_zero_covariance() {
        let sigma = dmatrix![0.0, 0.0; 0.0, 0.3];
        let spec = MarketSpec::constant(dvector![0.0, 0.0], sigma, dvector![0.0, 0.0])
            .unwrap()
            .with_money_market(0)
            .unwrap();
        let a = covariance(&spec, 0.0).unwrap();
        assert_eq!(a.row(0).sum(), 0.0);
        assert_eq!(a.column(0).sum(), 0.0);
        let bad = MarketSpec::constant(dvector![0.0, 0.0], Matrix::identity(2, 2), dvector![0.0, 0.0])
            .unwrap()
            .with_money_market(0);
        assert!(bad.is_err());
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(MarketSpec::constant(dvector![f64::NAN], dmatrix![0.1], dvector![0.0]).is_err());
        assert!(MarketSpec::constant(dvector![0.0, 0.0], dmatrix![0.1; 0.2], dvector![0.0, 0.0]).is_err());
        assert!(MarketSpec::constant(dvector![0.0], dmatrix![f64::INFINITY], dvector![0.0]).is_err());
    }

    #[test]
    fn piecewise_schedule_lookup() {
        let s = Schedule::Piecewise(vec![(0.0, 1.0), (0.5, 2.0)]);
        assert_eq!(*s.at(0.0), 1.0);
        assert_eq!(*s.at(0.49), 1.0);
        assert_eq!(*s.at(0.5), 2.0);
        assert_eq!(*s.at(10.0), 2.0);
    }

    #[test]
    fn relative_covariance_examples() {
        let a = dmatrix![0.04, 0.0; 0.0, 0.01];
        let ar = relative_covariance(&a, &dvector![1.0, 0.0]).unwrap();
        // variance rate of log(X2/X1) is a11 + a22 - 2 a12
        let var_log_ratio = a[(0, 0)] + a[(1, 1)] - 2.0 * a[(0, 1)];
        assert_abs_diff_eq!(ar, dmatrix![0.0, 0.0; 0.0, 0.05], epsilon = 1e-15);
        assert_abs_diff_eq!(ar[(1, 1)], var_log_ratio, epsilon = 1e-15);

        let a = dmatrix![0.0, 0.0; 0.0, 0.09];
        let ar = relative_covariance(&a, &dvector![1.0, 0.0]).unwrap();
        assert_eq!(ar, a);

        assert!(relative_covariance(&a, &dvector![0.5, 0.6]).is_err());
    }

    #[test]
    fn realized_covariation_examples() {
        let spec = MarketSpec::constant(dvector![0.1], dmatrix![0.0], dvector![0.0]).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let ps = simulate_paths(&spec, &grid, 1, 1).unwrap();
        let rc = realized_covariation(&ps, 1).unwrap();
        // deterministic path: ten increments of γ dt = 0.01
        assert_abs_diff_eq!(rc[0].sum[(0, 0)], 10.0 * 1e-4, epsilon = 1e-15);

        let spec = MarketSpec::constant(dvector![0.0], dmatrix![0.0], dvector![0.0]).unwrap();
        let ps = simulate_paths(&spec, &grid, 1, 1).unwrap();
        assert_eq!(realized_covariation(&ps, 1).unwrap()[0].sum[(0, 0)], 0.0);

        let spec = gbm1(0.2, 0.05);
        let ps = simulate_paths(&spec, &grid, 4, 3).unwrap();
        let rc = realized_covariation(&ps, 10).unwrap();
        for (p, r) in ps.paths.iter().zip(&rc) {
            let dl = p.last()[0] - p.first()[0];
            assert_abs_diff_eq!(r.rate[(0, 0)], dl * dl / 1.0, epsilon = 1e-14);
        }
        assert!(realized_covariation(&ps, 11).is_err());
        assert!(realized_covariation(&ps, 0).is_err());
    }

    #[test]
    fn realized_rate_is_unbiased_for_gbm() {
        let spec = gbm1(0.2, 0.0);
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let ps = simulate_paths(&spec, &grid, 10_000, 5).unwrap();
        let rates: Vec<f64> = realized_covariation(&ps, 1)
            .unwrap()
            .iter()
            .map(|r| r.rate[(0, 0)])
            .collect();
        let m = crate::numerics::mean(&rates);
        assert!((m / 0.04 - 1.0).abs() < 0.05, "mean rate {m}");
    }

    #[test]
    fn numeraire_relative_prices() {
        let spec = gbm1(0.2, 0.0);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let ps = simulate_paths(&spec, &grid, 1, 3).unwrap();
        let p = &ps.paths[0];
        let ones = vec![1.0; p.len()];
        assert_eq!(relative_log_prices(p, &ones).unwrap(), *p);

        // the asset measured in units of itself is constant
        let own: Vec<f64> = p.asset(0).map(f64::exp).collect();
        let rel = relative_log_prices(p, &own).unwrap();
        assert!(rel.asset(0).all(|x| x.abs() < 1e-15));

        // shifting L by c and V by e^c cancels
        let c = 0.7;
        let shifted = LogPath::from_rows(1, p.as_slice().iter().map(|x| x + c).collect()).unwrap();
        let wealth: Vec<f64> = (0..p.len()).map(|m| 1.0 + 0.1 * m as f64).collect();
        let wealth_c: Vec<f64> = wealth.iter().map(|w| w * c.exp()).collect();
        let r1 = relative_log_prices(p, &wealth).unwrap();
        let r2 = relative_log_prices(&shifted, &wealth_c).unwrap();
        for (x, y) in r1.as_slice().iter().zip(r2.as_slice()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }

        let mut bad = ones.clone();
        bad[4] = 0.0;
        assert_eq!(
            relative_log_prices(p, &bad).unwrap_err(),
            FgpError::DegenerateNumeraire { step: 4, value: 0.0 }
        );
    }
}
