//! Variogram model `A_t/t = C + U/(t + B)^k` and its least-squares fit.

use std::io::{Read, Write};

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FgpError, Result};
use crate::market::PathSet;
use crate::numerics::mean;
use crate::units::{seconds_to_years, SECONDS_PER_YEAR};

/// Fitted variogram. Times in years, rates annualized.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariogramFit {
    pub c: f64,
    pub u: f64,
    pub b_fit: f64,
    pub k: f64,
    /// Euclidean norm of the fit residuals.
    pub residual_norm: f64,
    /// Covariance of `(C, U, B_fit, k)`, when the normal matrix is invertible.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub converged_starts: usize,
}

impl VariogramFit {
    /// A fit from known parameters, with no fit diagnostics.
    pub fn from_params(c: f64, u: f64, b_fit: f64, k: f64) -> Result<Self> {
        if !(c.is_finite() && u.is_finite() && b_fit > 0.0 && k > 0.0 && b_fit.is_finite() && k.is_finite()) {
            return Err(FgpError::validation(
                "variogram",
                "need finite C, U and positive B_fit, k",
            ));
        }
        Ok(Self {
            c,
            u,
            b_fit,
            k,
            residual_norm: 0.0,
            covariance: None,
            converged_starts: 0,
        })
    }

    /// Model variance rate `A_t/t`.
    pub fn rate(&self, t: f64) -> f64 {
        self.c + self.u * (t + self.b_fit).powf(-self.k)
    }
}

const MAX_ITER: usize = 2000;

struct Problem<'a> {
    t: &'a [f64],
    y: &'a [f64],
}

impl Problem<'_> {
    /// Parameters are `(C, ln U, ln B, ln k)`.
    fn residuals(&self, p: &Vector4<f64>) -> Vec<f64> {
        let (c, u, b, k) = (p[0], p[1].exp(), p[2].exp(), p[3].exp());
        self.t
            .iter()
            .zip(self.y)
            .map(|(t, y)| c + u * (t + b).powf(-k) - y)
            .collect()
    }

    fn jacobian(&self, p: &Vector4<f64>) -> Vec<[f64; 4]> {
        let (u, b, k) = (p[1].exp(), p[2].exp(), p[3].exp());
        self.t
            .iter()
            .map(|t| {
                let s = t + b;
                let g = u * s.powf(-k);
                [1.0, g, -k * b * g / s, -k * s.ln() * g]
            })
            .collect()
    }
}

fn cost(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn normal_equations(j: &[[f64; 4]], r: &[f64]) -> (Matrix4<f64>, Vector4<f64>) {
    let mut a = Matrix4::zeros();
    let mut g = Vector4::zeros();
    for (row, ri) in j.iter().zip(r) {
        for p in 0..4 {
            g[p] += row[p] * ri;
            for q in 0..4 {
                a[(p, q)] += row[p] * row[q];
            }
        }
    }
    (a, g)
}

/// Levenberg–Marquardt from one start. Returns the final parameters, their
/// cost and whether a convergence test fired before the iteration cap.
fn levenberg_marquardt(problem: &Problem, start: Vector4<f64>) -> (Vector4<f64>, f64, bool) {
    let mut p = start;
    let mut r = problem.residuals(&p);
    let mut f = cost(&r);
    let scale = problem.y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut mu = 1e-3;
    for _ in 0..MAX_ITER {
        if !f.is_finite() {
            return (p, f, false);
        }
        if f <= 1e-32 * scale {
            return (p, f, true);
        }
        let j = problem.jacobian(&p);
        let (a, g) = normal_equations(&j, &r);
        if g.amax() <= 1e-15 * scale.sqrt() * a.diagonal().amax().sqrt() {
            return (p, f, true);
        }
        loop {
            let mut damped = a;
            for d in 0..4 {
                damped[(d, d)] += mu * a[(d, d)].max(1e-300);
            }
            let step = damped.cholesky().map(|ch| ch.solve(&(-g)));
            if let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) {
                let trial = p + step;
                let rt = problem.residuals(&trial);
                let ft = cost(&rt);
                if ft.is_finite() && ft < f {
                    let small_step = step.amax() <= 1e-12 * (1.0 + p.amax());
                    let small_gain = f - ft <= 1e-14 * f;
                    p = trial;
                    r = rt;
                    f = ft;
                    mu = (mu / 3.0).max(1e-12);
                    if small_step || small_gain {
                        return (p, f, true);
                    }
                    break;
                }
            }
            mu *= 4.0;
            if mu > 1e16 {
                // No descent direction left: a stationary point.
                return (p, f, true);
            }
        }
    }
    (p, f, false)
}

/// Least-squares fit of `C + U/(t + B_fit)^k` to `(lag, rate)` samples.
///
/// `U`, `B_fit` and `k` are fitted on a log scale so they stay positive;
/// eight fixed starting points cover short and long decay scales. The
/// constant model `U = 0` is preferred when it fits as well.
pub fn fit_variogram(lags: &[f64], rates: &[f64]) -> Result<VariogramFit> {
    if lags.len() != rates.len() {
        return Err(FgpError::validation("rates", "one rate per lag required"));
    }
    if lags.len() < 5 {
        return Err(FgpError::validation("lags", "at least five points are needed"));
    }
    if lags.iter().chain(rates).any(|v| !v.is_finite()) {
        return Err(FgpError::validation("lags", "values must be finite"));
    }
    if lags[0] <= 0.0 || lags.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FgpError::validation("lags", "lags must be positive and increasing"));
    }
    let problem = Problem { t: lags, y: rates };
    let n = lags.len();
    let (t_min, t_max) = (lags[0], lags[n - 1]);
    let y_min = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let c0 = y_min - 1e-3 * y_min.abs();
    let mut best: Option<(Vector4<f64>, f64)> = None;
    let mut converged_starts = 0;
    for b0 in [t_min, (t_min * t_max).sqrt()] {
        for k0 in [0.5, 1.0, 1.5, 2.5] {
            let excess = (rates[0] - c0).abs().max(1e-6 * rates[0].abs()).max(f64::MIN_POSITIVE);
            let u0 = excess * (t_min + b0).powf(k0);
            let start = Vector4::new(c0, u0.ln(), b0.ln(), f64::ln(k0));
            let (p, f, ok) = levenberg_marquardt(&problem, start);
            if ok && f.is_finite() {
                converged_starts += 1;
                if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                    best = Some((p, f));
                }
            }
        }
    }
    let (p, f) = match best {
        Some(b) => b,
        None => {
            return Err(FgpError::FitDivergence {
                best_residual: f64::INFINITY,
            })
        }
    };
    let flat_c = mean(rates);
    let flat_cost = 0.5 * rates.iter().map(|y| (y - flat_c).powi(2)).sum::<f64>();
    if flat_cost <= f * (1.0 + 1e-9) + 1e-30 {
        return Ok(VariogramFit {
            c: flat_c,
            u: 0.0,
            b_fit: t_min,
            k: 1.0,
            residual_norm: (2.0 * flat_cost).sqrt(),
            covariance: None,
            converged_starts,
        });
    }
    let (c, u, b, k) = (p[0], p[1].exp(), p[2].exp(), p[3].exp());
    if c < 0.0 {
        return Err(FgpError::Estimation(format!(
            "fitted asymptotic rate C = {c} is negative"
        )));
    }
    // Covariance in natural parameters: σ² (JᵀJ)⁻¹ with J w.r.t. (C, U, B, k).
    let jac: Vec<[f64; 4]> = problem
        .jacobian(&p)
        .into_iter()
        .map(|row| [row[0], row[1] / u, row[2] / b, row[3] / k])
        .collect();
    let r = problem.residuals(&p);
    let (a, _) = normal_equations(&jac, &r);
    let sigma2 = 2.0 * f / (n as f64 - 4.0);
    let covariance = a
        .try_inverse()
        .map(|inv| (0..4).map(|i| (0..4).map(|j| sigma2 * inv[(i, j)]).collect()).collect());
    Ok(VariogramFit {
        c,
        u,
        b_fit: b,
        k,
        residual_norm: (2.0 * f).sqrt(),
        covariance,
        converged_starts,
    })
}

/// Empirical variogram of one asset: mean realized variance rate at each
/// lag (in steps) across the ensemble. Returns `(lag_years, rate)` pairs.
pub fn empirical_variogram(paths: &PathSet, asset: usize, lags: &[usize]) -> Result<Vec<(f64, f64)>> {
    if asset >= paths.n() {
        return Err(FgpError::validation("asset", "asset index out of range"));
    }
    let steps = paths.grid.steps();
    let dt = paths.grid.dt();
    lags.iter()
        .map(|&lag| {
            if lag == 0 || lag > steps {
                return Err(FgpError::validation("lag", format!("must be in 1..={steps}")));
            }
            let rates: Vec<f64> = paths
                .paths
                .par_iter()
                .map(|p| {
                    let x: Vec<f64> = p.asset(asset).collect();
                    let count = (x.len() - 1) / lag;
                    let sq: f64 = (0..count).map(|c| (x[(c + 1) * lag] - x[c * lag]).powi(2)).sum();
                    sq / (count as f64 * lag as f64 * dt)
                })
                .collect();
            Ok((lag as f64 * dt, mean(&rates)))
        })
        .collect()
}

/// Read `lag_seconds,rate` rows; lags are returned in years.
pub fn read_variogram_csv<R: Read>(input: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let io = |e: csv::Error| FgpError::Io {
        path: "variogram csv".into(),
        reason: e.to_string(),
    };
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(io)?.clone();
    if headers.len() != 2 || headers[0].trim() != "lag_seconds" || headers[1].trim() != "rate" {
        return Err(FgpError::validation(
            "variogram_csv",
            "header must be `lag_seconds,rate`",
        ));
    }
    let mut lags = Vec::new();
    let mut rates = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(io)?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| FgpError::validation("variogram_csv", format!("row {}: {e}", row + 1)))
        };
        lags.push(seconds_to_years(parse(&rec[0])?));
        rates.push(parse(&rec[1])?);
    }
    Ok((lags, rates))
}

pub fn write_variogram_csv<W: Write>(out: W, lags_years: &[f64], rates: &[f64]) -> Result<()> {
    let io = |e: csv::Error| FgpError::Io {
        path: "variogram csv".into(),
        reason: e.to_string(),
    };
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["lag_seconds", "rate"]).map_err(io)?;
    for (t, r) in lags_years.iter().zip(rates) {
        wtr.write_record([format!("{:.17e}", t * SECONDS_PER_YEAR), format!("{r:.17e}")])
            .map_err(io)?;
    }
    wtr.flush().map_err(|e| FgpError::Io {
        path: "variogram csv".into(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{simulate_paths, MarketSpec, TimeGrid};
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn log_lags(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
    }

    #[test]
    fn noiseless_round_trip() {
        let truth = VariogramFit::from_params(0.04, 0.01, 0.002, 1.3).unwrap();
        let lags = log_lags(1e-4, 1.0, 25);
        let rates: Vec<f64> = lags.iter().map(|t| truth.rate(*t)).collect();
        let fit = fit_variogram(&lags, &rates).unwrap();
        for (got, want) in [(fit.c, 0.04), (fit.u, 0.01), (fit.b_fit, 0.002), (fit.k, 1.3)] {
            assert!((got / want - 1.0).abs() < 1e-2, "{got} vs {want}");
        }
    }

    #[test]
    fn noisy_round_trip_recovers_c() {
        let truth = VariogramFit::from_params(0.04, 0.01, 0.002, 1.3).unwrap();
        let lags = log_lags(1e-4, 1.0, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rates: Vec<f64> = lags
            .iter()
            .map(|t| {
                let z: f64 = StandardNormal.sample(&mut rng);
                truth.rate(*t) * (1.0 + 0.01 * z)
            })
            .collect();
        let fit = fit_variogram(&lags, &rates).unwrap();
        assert!((fit.c / 0.04 - 1.0).abs() < 0.05, "C = {}", fit.c);
        assert!(fit.covariance.is_some());
    }

    #[test]
    fn flat_data() {
        let lags = log_lags(1e-4, 1.0, 10);
        let rates = vec![0.05; 10];
        let fit = fit_variogram(&lags, &rates).unwrap();
        assert!((fit.c - 0.05).abs() < 1e-15);
        assert_eq!(fit.u, 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(fit_variogram(&[1.0], &[0.04]).unwrap_err().is_validation());
        assert!(fit_variogram(&[1.0, 2.0, 2.0, 3.0, 4.0], &[0.1; 5])
            .unwrap_err()
            .is_validation());
        assert!(fit_variogram(&[1.0, 2.0], &[0.1]).unwrap_err().is_validation());
    }

    #[test]
    fn csv_round_trip() {
        let lags = vec![seconds_to_years(90.0), seconds_to_years(600.0)];
        let mut buf = Vec::new();
        write_variogram_csv(&mut buf, &lags, &[0.068, 0.05]).unwrap();
        let (l, r) = read_variogram_csv(buf.as_slice()).unwrap();
        assert!((l[0] / lags[0] - 1.0).abs() < 1e-15);
        assert_eq!(r, vec![0.068, 0.05]);
        assert!(read_variogram_csv("lag,rate\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn empirical_variogram_of_gbm_is_flat() {
        let spec = MarketSpec::constant(dvector![0.0], dmatrix![0.2], dvector![0.0]).unwrap();
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let paths = simulate_paths(&spec, &grid, 400, 8).unwrap();
        let v = empirical_variogram(&paths, 0, &[1, 10, 50]).unwrap();
        for (_, r) in v {
            assert!((r / 0.04 - 1.0).abs() < 0.05, "{r}");
        }
    }
}
