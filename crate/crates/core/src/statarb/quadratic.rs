//! Growth analytics of the hedged quadratic generating function against a
//! money market, driven by a fitted variogram.
//!
//! With `G(T) = 1 − A_T/(Ta)` and `v(T) = (1/T)∫₀ᵀ A_t dt` the expected log
//! growth rate at scale `c` is `(a/2)(cG − c²v)`, maximal at
//! `č = G/(2v)` with value `aG²/(8v)`.

use serde::Serialize;

use super::variogram::VariogramFit;
use crate::error::{FgpError, Result};
use crate::numerics::golden_section_max;

/// Distance from `k = 1` or `k = 2` below which the limit branch is used.
pub const LIMIT_BRANCH_TOL: f64 = 1e-6;
/// Points in the log-grid scan of [`optimal_horizon`].
pub const SCAN_POINTS: usize = 1024;

/// `∫₀ᵀ t (t + B)^{−k} dt` for `k ∉ {1, 2}`.
fn generic_integral(b: f64, k: f64, t: f64) -> f64 {
    ((b + t).powf(1.0 - k) * ((1.0 - k) * t - b) + b.powf(2.0 - k)) / ((2.0 - k) * (1.0 - k))
}

fn limit_integral(b: f64, k0: f64, t: f64) -> f64 {
    if k0 == 1.0 {
        t - b * (t / b).ln_1p()
    } else {
        (t / b).ln_1p() - t / (b + t)
    }
}

/// `∫₀ᵀ t (t + B)^{−k} dt`, switching to the analytic limit (plus a
/// first-order correction) next to `k = 1` and `k = 2`.
fn decay_integral(b: f64, k: f64, t: f64) -> f64 {
    for k0 in [1.0, 2.0] {
        if (k - k0).abs() < LIMIT_BRANCH_TOL {
            let h = 1e-3;
            let slope = (generic_integral(b, k0 + h, t) - generic_integral(b, k0 - h, t)) / (2.0 * h);
            return limit_integral(b, k0, t) + (k - k0) * slope;
        }
    }
    generic_integral(b, k, t)
}

/// `v(T) = (1/T)∫₀ᵀ A_t dt` in closed form.
pub fn v_of_t(fit: &VariogramFit, t: f64) -> f64 {
    fit.c * t / 2.0 + fit.u * decay_integral(fit.b_fit, fit.k, t) / t
}

/// `v(T)` by composite Simpson quadrature in `log(t + B)`; an independent
/// check of [`v_of_t`].
pub fn v_of_t_quadrature(fit: &VariogramFit, t: f64) -> f64 {
    let b = fit.b_fit;
    let (lo, hi) = (b.ln(), (b + t).ln());
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    // A_t as a function of u = log(t + B), times the Jacobian e^u.
    let f = |u: f64| {
        let s = u.exp();
        let tt = (s - b).max(0.0);
        tt * fit.rate(tt) * s
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    acc * h / 3.0 / t
}

fn check(a: f64, t: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(FgpError::validation("a", "effective variance rate must be positive"));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(FgpError::validation("T", "horizon must be positive"));
    }
    Ok(())
}

/// `1 − A_T/(Ta)`.
pub fn variance_gap(fit: &VariogramFit, a: f64, t: f64) -> f64 {
    1.0 - fit.rate(t) / a
}

/// Growth-optimal scale `č_T = (1/(2v(T)))(1 − A_T/(Ta))`.
pub fn optimal_c(fit: &VariogramFit, a: f64, t: f64) -> Result<f64> {
    check(a, t)?;
    let v = v_of_t(fit, t);
    if !(v > 0.0) {
        return Err(FgpError::Estimation(format!("v(T) = {v} is not positive")));
    }
    Ok(variance_gap(fit, a, t) / (2.0 * v))
}

/// Maximal expected log-growth rate `a/(8v(T)) (1 − A_T/(Ta))²`.
pub fn growth_rate(fit: &VariogramFit, a: f64, t: f64) -> f64 {
    let g = variance_gap(fit, a, t);
    a * g * g / (8.0 * v_of_t(fit, t))
}

/// Expected log-growth rate `(Ta/2)(c[1 − A_T/(Ta) + γ̂T/2] − c²v(T))/T`
/// including the drift term.
pub fn expected_log_with_drift(fit: &VariogramFit, a: f64, gamma_hat: f64, c: f64, t: f64) -> f64 {
    let g = variance_gap(fit, a, t) + gamma_hat * t / 2.0;
    0.5 * a * (c * g - c * c * v_of_t(fit, t))
}

/// Maximizer in `c` of [`expected_log_with_drift`].
pub fn optimal_c_with_drift(fit: &VariogramFit, a: f64, gamma_hat: f64, t: f64) -> Result<f64> {
    check(a, t)?;
    Ok((variance_gap(fit, a, t) + gamma_hat * t / 2.0) / (2.0 * v_of_t(fit, t)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonOptimum {
    /// Optimal restart horizon `Ť` (years).
    pub t_opt: f64,
    pub rate: f64,
    pub c_opt: f64,
    /// Set when the objective is flat on the range; `t_opt` is then the lower end.
    pub flat: bool,
    pub scan_argmax: f64,
    pub scan_max: f64,
    /// Ratio between neighbouring scan points.
    pub grid_ratio: f64,
}

/// Maximize [`growth_rate`] over `T ∈ [lo, hi]`: log-grid scan followed by
/// golden-section refinement around the best grid point.
pub fn optimal_horizon(fit: &VariogramFit, a: f64, lo: f64, hi: f64) -> Result<HorizonOptimum> {
    check(a, lo)?;
    if !(hi > lo && hi.is_finite()) {
        return Err(FgpError::validation("T_range", "need 0 < lo < hi"));
    }
    let (ulo, uhi) = (lo.ln(), hi.ln());
    let du = (uhi - ulo) / (SCAN_POINTS - 1) as f64;
    let objective = |u: f64| {
        let r = growth_rate(fit, a, u.exp());
        if r.is_finite() {
            r
        } else {
            f64::NEG_INFINITY
        }
    };
    let values: Vec<f64> = (0..SCAN_POINTS).map(|i| objective(ulo + i as f64 * du)).collect();
    let (j, &scan_max) =
        values.iter().enumerate().fold(
            (0, &f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        );
    let scan_min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let scan_argmax = (ulo + j as f64 * du).exp();
    let grid_ratio = du.exp();
    if !(scan_max - scan_min >= 1e-14) {
        return Ok(HorizonOptimum {
            t_opt: lo,
            rate: values[0],
            c_opt: optimal_c(fit, a, lo)?,
            flat: true,
            scan_argmax,
            scan_max,
            grid_ratio,
        });
    }
    let a_lo = ulo + j.saturating_sub(1) as f64 * du;
    let a_hi = ulo + (j + 1).min(SCAN_POINTS - 1) as f64 * du;
    let refined = golden_section_max(objective, a_lo, a_hi, 1e-14);
    let (u_opt, rate) = if refined.value >= scan_max {
        (refined.argmax, refined.value)
    } else {
        (ulo + j as f64 * du, scan_max)
    };
    let t_opt = u_opt.exp();
    Ok(HorizonOptimum {
        t_opt,
        rate,
        c_opt: optimal_c(fit, a, t_opt)?,
        flat: false,
        scan_argmax,
        scan_max,
        grid_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{minutes_to_years, years_to_minutes};

    fn fig_like() -> VariogramFit {
        VariogramFit::from_params(0.0413, 1.41e-5, minutes_to_years(0.5), 0.7).unwrap()
    }

    #[test]
    fn flat_variogram_gives_linear_v() {
        let f = VariogramFit::from_params(0.04, 0.0, 0.01, 1.3).unwrap();
        assert!((v_of_t(&f, 0.5) - 0.01).abs() < 1e-16);
        let h = optimal_horizon(&f, 0.04, 1e-4, 1.0).unwrap();
        assert!(h.flat);
        assert_eq!(optimal_c(&f, 0.04, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for k in [0.3, 0.7, 1.0, 1.0 + 5e-7, 1.3, 2.0, 2.0 - 3e-7, 2.6] {
            let f = VariogramFit::from_params(0.04, 1e-4, 2e-5, k).unwrap();
            for t in [minutes_to_years(1.0), minutes_to_years(30.0), 0.01, 0.3, 1.0] {
                let (cf, q) = (v_of_t(&f, t), v_of_t_quadrature(&f, t));
                assert!((cf / q - 1.0).abs() < 1e-6, "k={k} T={t}: {cf} vs {q}");
            }
        }
    }

    #[test]
    fn published_example_orders_of_magnitude() {
        let f = fig_like();
        let a = 0.0683;
        assert!((f.rate(minutes_to_years(1.5)) - a).abs() < 2e-4);
        let h = optimal_horizon(&f, a, minutes_to_years(1.5), 5.0 / 250.0).unwrap();
        let minutes = years_to_minutes(h.t_opt);
        assert!((2.0..=30.0).contains(&minutes), "{minutes}");
        assert!((50.0..=1000.0).contains(&h.rate), "{}", h.rate);
        assert!(h.c_opt > 1e4 && h.c_opt < 1e6);
        assert!(h.rate >= h.scan_max);
        assert!((h.t_opt / h.scan_argmax).ln().abs() <= h.grid_ratio.ln() + 1e-12);
    }

    #[test]
    fn bigger_gap_bigger_c() {
        let f = fig_like();
        let t = minutes_to_years(7.0);
        assert!(optimal_c(&f, 0.08, t).unwrap() > optimal_c(&f, 0.0683, t).unwrap());
        let mut g = f.clone();
        g.u *= 2.0;
        // Larger decay raises A_T/T, closing the gap.
        assert!(optimal_c(&g, 0.0683, t).unwrap() < optimal_c(&f, 0.0683, t).unwrap());
        // No gap at T: a equal to the model rate there.
        assert!(optimal_c(&f, f.rate(t), t).unwrap().abs() < 1e-12);
    }

    #[test]
    fn drift_terms() {
        let f = fig_like();
        let (a, t) = (0.0683, minutes_to_years(7.0));
        let c = optimal_c(&f, a, t).unwrap();
        let g = variance_gap(&f, a, t);
        assert_eq!(
            expected_log_with_drift(&f, a, 0.0, c, t),
            0.5 * a * (c * g - c * c * v_of_t(&f, t))
        );
        assert!(
            (expected_log_with_drift(&f, a, 0.0, c, t) - growth_rate(&f, a, t)).abs() < 1e-9 * growth_rate(&f, a, t)
        );
        assert_eq!(expected_log_with_drift(&f, a, 0.3, 0.0, t), 0.0);
        // γ̂T/2 = ±G doubles or cancels the optimal scale.
        let gamma = 2.0 * g / t;
        assert!((optimal_c_with_drift(&f, a, gamma, t).unwrap() / c - 2.0).abs() < 1e-12);
        assert!(optimal_c_with_drift(&f, a, -gamma, t).unwrap().abs() < 1e-12 * c.abs());
    }
}
