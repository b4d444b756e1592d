//! Long-short statistical arbitrage between two discretely rebalanced
//! versions of the same portfolio.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FgpError, Result};
use crate::fgp::{relative_from_log_wealth, GeneratingFunction};
use crate::market::{LogPath, PathSet, Vector};
use crate::numerics::{mean, sample_variance};
use crate::portfolio::{log_growth, Numeraire};

/// Minimum number of slow rebalances for [`long_short_from_paths`].
pub const MIN_REBALANCES: usize = 30;

/// Annualized variance and variance-capture rates of the fast (`1`) and
/// slow (`2`) value processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LongShortInputs {
    pub a11: f64,
    pub a22: f64,
    /// Variance rate of `log(X₁/X₂)`.
    pub a_diff: f64,
    pub h1: f64,
    pub h2: f64,
}

impl LongShortInputs {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a11", self.a11),
            ("a22", self.a22),
            ("a_diff", self.a_diff),
            ("h1", self.h1),
            ("h2", self.h2),
        ] {
            if !v.is_finite() {
                return Err(FgpError::validation(name, "must be finite"));
            }
        }
        for (name, v) in [("a11", self.a11), ("a22", self.a22), ("a_diff", self.a_diff)] {
            if v < 0.0 {
                return Err(FgpError::validation(name, "variance rates must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Growth rate `Aκ − Bκ²` of the position `κ(X₁ − X₂)` and its optimum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongShortReport {
    pub a: f64,
    pub b: f64,
    /// Break-even leverage `A/B`.
    pub kappa_bar: Option<f64>,
    /// Growth-optimal leverage `A/(2B)`.
    pub kappa_check: Option<f64>,
    /// Optimal growth rate `A²/(4B)`.
    pub gamma_check: Option<f64>,
    pub warning: Option<String>,
}

impl LongShortReport {
    pub fn growth(&self, kappa: f64) -> f64 {
        self.a * kappa - self.b * kappa * kappa
    }
}

/// `A = h₁ − h₂ + ½(a11 − a22)`, `B = ½ a_diff`.
pub fn long_short_analyze(inp: &LongShortInputs) -> Result<LongShortReport> {
    inp.validate()?;
    let a = inp.h1 - inp.h2 + 0.5 * (inp.a11 - inp.a22);
    let b = 0.5 * inp.a_diff;
    if b == 0.0 {
        let warning = (a != 0.0).then(|| "B = 0 with A ≠ 0: growth is unbounded in the leverage".to_string());
        return Ok(LongShortReport {
            a,
            b,
            kappa_bar: None,
            kappa_check: None,
            gamma_check: None,
            warning,
        });
    }
    Ok(LongShortReport {
        a,
        b,
        kappa_bar: Some(a / b),
        kappa_check: Some(a / (2.0 * b)),
        gamma_check: Some(a * a / (4.0 * b)),
        warning: None,
    })
}

/// Ensemble estimate of [`LongShortInputs`] with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongShortEstimate {
    /// Path averages of the per-path inputs.
    pub inputs: LongShortInputs,
    /// `A` on each path.
    pub a_per_path: Vec<f64>,
    /// Standard error of the ensemble mean of `A`; `None` for one path.
    pub a_standard_error: Option<f64>,
    /// Mean of `ΔH(fast) − ΔH(slow)`, the term the approximation cancels.
    pub delta_h_gap: f64,
    pub fast_rebalances: usize,
    pub slow_rebalances: usize,
}

struct Discrete {
    /// Log wealth relative to the numéraire, at every rebalancing time.
    relative_log_wealth: Vec<f64>,
    delta_h: f64,
    elapsed_steps: usize,
}

fn rebalanced(
    h: &dyn GeneratingFunction,
    path: &LogPath,
    relative: &LogPath,
    rho_log: &[f64],
    rho_w: &[Vector],
    lag: usize,
) -> Result<Discrete> {
    let count = (path.len() - 1) / lag;
    let none = Vector::zeros(0);
    let mut r = vec![0.0];
    let mut x = vec![0.0; path.n()];
    for k in 0..count {
        let (m0, m1) = (k * lag, (k + 1) * lag);
        let y = relative.vector(m0);
        let g = h.grad_l(&y, &none);
        let pi = &rho_w[m0] * (1.0 - g.sum()) + g;
        let (a, b) = (path.row(m0), path.row(m1));
        for i in 0..x.len() {
            x[i] = b[i] - a[i];
        }
        let growth = log_growth(&pi, &x).ok_or(FgpError::Bankruptcy {
            label: format!("lag {lag}"),
            step: m1,
            factor: f64::NAN,
        })?;
        r.push(r[k] + growth - (rho_log[m1] - rho_log[m0]));
    }
    let end = count * lag;
    let delta_h = h.value(&relative.vector(end), &none) - h.value(&relative.vector(0), &none);
    Ok(Discrete {
        relative_log_wealth: r,
        delta_h,
        elapsed_steps: end,
    })
}

/// Realized variance rate of a series sampled `step_years` apart.
fn variance_rate(series: &[f64], step_years: f64) -> f64 {
    let sq: f64 = series.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    sq / ((series.len() - 1) as f64 * step_years)
}

/// Estimate the long-short inputs from two implementations of the FGP of
/// `h`, rebalanced every `fast_lag` and every `slow_lag` steps.
///
/// `h_i` is the drift residual `(log V̂_i − ΔH)/T` of each discrete
/// portfolio; the variance rates use realized variances of the relative log
/// wealth sampled at the slow interval.
pub fn long_short_from_paths(
    paths: &PathSet,
    h: &dyn GeneratingFunction,
    numeraire: &Numeraire,
    fast_lag: usize,
    slow_lag: usize,
) -> Result<LongShortEstimate> {
    let steps = paths.grid.steps();
    if fast_lag == 0 || fast_lag > slow_lag || slow_lag > steps {
        return Err(FgpError::validation("lags", format!("need 1 ≤ fast ≤ slow ≤ {steps}")));
    }
    if h.aux_dim() != 0 {
        return Err(FgpError::validation("generating_function", "must be deterministic"));
    }
    if h.n() != paths.n() {
        return Err(FgpError::validation(
            "generating_function",
            "dimension does not match the market",
        ));
    }
    let slow_rebalances = steps / slow_lag;
    if slow_rebalances < MIN_REBALANCES {
        return Err(FgpError::Estimation(format!(
            "only {slow_rebalances} slow rebalances; at least {MIN_REBALANCES} are needed"
        )));
    }
    let dt = paths.grid.dt();
    let per_path: Vec<Result<(LongShortInputs, f64)>> = paths
        .paths
        .par_iter()
        .map(|path| {
            let num = numeraire.realize(path)?;
            let relative = relative_from_log_wealth(path, &num.log_wealth)?;
            let rho_w: Vec<_> = num.weights.iter().cloned().collect();
            let fast = rebalanced(h, path, &relative, &num.log_wealth, &rho_w, fast_lag)?;
            let slow = rebalanced(h, path, &relative, &num.log_wealth, &rho_w, slow_lag)?;
            // Compare both on the slow sampling times.
            let ratio = slow_lag / fast_lag;
            let common = slow_lag % fast_lag == 0;
            let fast_on_slow: Vec<f64> = if common {
                fast.relative_log_wealth
                    .iter()
                    .step_by(ratio)
                    .take(slow.relative_log_wealth.len())
                    .copied()
                    .collect()
            } else {
                (0..slow.relative_log_wealth.len())
                    .map(|k| fast.relative_log_wealth[(k * slow_lag) / fast_lag])
                    .collect()
            };
            let diff: Vec<f64> = fast_on_slow
                .iter()
                .zip(&slow.relative_log_wealth)
                .map(|(a, b)| a - b)
                .collect();
            let slow_step = slow_lag as f64 * dt;
            let h_of =
                |d: &Discrete| (d.relative_log_wealth.last().unwrap() - d.delta_h) / (d.elapsed_steps as f64 * dt);
            Ok((
                LongShortInputs {
                    a11: variance_rate(&fast_on_slow, slow_step),
                    a22: variance_rate(&slow.relative_log_wealth, slow_step),
                    a_diff: variance_rate(&diff, slow_step),
                    h1: h_of(&fast),
                    h2: h_of(&slow),
                },
                fast.delta_h - slow.delta_h,
            ))
        })
        .collect();
    let per_path: Vec<(LongShortInputs, f64)> = per_path.into_iter().collect::<Result<_>>()?;
    let field = |f: fn(&LongShortInputs) -> f64| mean(&per_path.iter().map(|(i, _)| f(i)).collect::<Vec<_>>());
    let inputs = LongShortInputs {
        a11: field(|i| i.a11),
        a22: field(|i| i.a22),
        a_diff: field(|i| i.a_diff),
        h1: field(|i| i.h1),
        h2: field(|i| i.h2),
    };
    let a_per_path: Vec<f64> = per_path
        .iter()
        .map(|(i, _)| i.h1 - i.h2 + 0.5 * (i.a11 - i.a22))
        .collect();
    let a_standard_error =
        (a_per_path.len() > 1).then(|| (sample_variance(&a_per_path) / a_per_path.len() as f64).sqrt());
    Ok(LongShortEstimate {
        inputs,
        a_per_path,
        a_standard_error,
        delta_h_gap: mean(&per_path.iter().map(|(_, g)| *g).collect::<Vec<_>>()),
        fast_rebalances: steps / fast_lag,
        slow_rebalances,
    })
}
