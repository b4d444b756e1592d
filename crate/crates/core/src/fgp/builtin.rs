//! Generating functions with closed-form derivatives.

use std::sync::Arc;

use super::{GeneratingFunction, Gf};
use crate::error::{FgpError, Result};
use crate::market::{Matrix, Vector};
use crate::portfolio::PassivePortfolio;

/// `H(y) = p'y`. Generates the constant-weight portfolio `p` when `Σp = 1`.
#[derive(Debug, Clone)]
pub struct Linear {
    p: Vector,
}

impl Linear {
    pub fn new(p: Vector) -> Result<Self> {
        if p.is_empty() || p.iter().any(|x| !x.is_finite()) {
            return Err(FgpError::validation("p", "coefficients must be finite and non-empty"));
        }
        Ok(Self { p })
    }
}

impl GeneratingFunction for Linear {
    fn name(&self) -> String {
        "linear".into()
    }
    fn n(&self) -> usize {
        self.p.len()
    }
    fn value(&self, y: &Vector, _f: &Vector) -> f64 {
        self.p.dot(y)
    }
    fn grad_l(&self, _y: &Vector, _f: &Vector) -> Vector {
        self.p.clone()
    }
    fn hess_l(&self, _y: &Vector, _f: &Vector) -> Matrix {
        Matrix::zeros(self.p.len(), self.p.len())
    }
    fn translation_equivariant(&self) -> bool {
        (self.p.sum() - 1.0).abs() < 1e-12
    }
}

/// Log-sum-exp weights `w_i = c_i e^{y_i} / Σ_j c_j e^{y_j}` together with the
/// log of the normalizer, computed with the usual max shift.
fn softmax(c: impl Iterator<Item = (f64, f64)>, n: usize) -> (Vector, f64) {
    let terms: Vec<(f64, f64)> = c.collect();
    let shift = terms
        .iter()
        .filter(|(ci, _)| *ci > 0.0)
        .map(|(_, z)| *z)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w = Vector::zeros(n);
    let mut total = 0.0;
    for (i, (ci, z)) in terms.iter().enumerate() {
        let e = ci * (z - shift).exp();
        w[i] = e;
        total += e;
    }
    w /= total;
    (w, shift + total.ln())
}

/// `H̃(y) = log Σ p_i e^{y_i − l_i}`: the buy-and-hold portfolio that starts
/// from weights `p` when `l = L_0`.
#[derive(Debug, Clone)]
pub struct PassiveLogSumExp {
    p: Vector,
    l: Vector,
}

impl PassiveLogSumExp {
    pub fn new(p: Vector, l: Vector) -> Result<Self> {
        if p.len() != l.len() || p.is_empty() {
            return Err(FgpError::validation("l", "p and l must have the same length"));
        }
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || p.iter().all(|x| *x == 0.0) {
            return Err(FgpError::validation(
                "p",
                "initial weights must be nonnegative and not all zero",
            ));
        }
        if l.iter().any(|x| !x.is_finite()) {
            return Err(FgpError::validation("l", "reference log prices must be finite"));
        }
        Ok(Self { p, l })
    }

    fn weights(&self, y: &Vector) -> (Vector, f64) {
        softmax(
            self.p
                .iter()
                .zip(y.iter().zip(self.l.iter()))
                .map(|(p, (y, l))| (*p, y - l)),
            self.p.len(),
        )
    }
}

impl GeneratingFunction for PassiveLogSumExp {
    fn name(&self) -> String {
        "passive".into()
    }
    fn n(&self) -> usize {
        self.p.len()
    }
    fn value(&self, y: &Vector, _f: &Vector) -> f64 {
        self.weights(y).1
    }
    fn grad_l(&self, y: &Vector, _f: &Vector) -> Vector {
        self.weights(y).0
    }
    fn hess_l(&self, y: &Vector, _f: &Vector) -> Matrix {
        let w = self.weights(y).0;
        Matrix::from_diagonal(&w) - &w * w.transpose()
    }
    fn translation_equivariant(&self) -> bool {
        true
    }
}

/// Diversity-p: `H_p(y) = (1/p) log Σ e^{p y_i}`.
#[derive(Debug, Clone)]
pub struct Diversity {
    n: usize,
    p: f64,
}

impl Diversity {
    pub fn new(n: usize, p: f64) -> Result<Self> {
        if n == 0 {
            return Err(FgpError::validation("n", "need at least one asset"));
        }
        if !(p.is_finite() && p != 0.0) {
            return Err(FgpError::validation(
                "p",
                "diversity exponent must be finite and nonzero",
            ));
        }
        Ok(Self { n, p })
    }

    fn weights(&self, y: &Vector) -> (Vector, f64) {
        softmax(y.iter().map(|yi| (1.0, self.p * yi)), self.n)
    }
}

impl GeneratingFunction for Diversity {
    fn name(&self) -> String {
        format!("diversity-{}", self.p)
    }
    fn n(&self) -> usize {
        self.n
    }
    fn value(&self, y: &Vector, _f: &Vector) -> f64 {
        self.weights(y).1 / self.p
    }
    fn grad_l(&self, y: &Vector, _f: &Vector) -> Vector {
        self.weights(y).0
    }
    fn hess_l(&self, y: &Vector, _f: &Vector) -> Matrix {
        let w = self.weights(y).0;
        (Matrix::from_diagonal(&w) - &w * w.transpose()) * self.p
    }
    fn translation_equivariant(&self) -> bool {
        true
    }
}

/// `H(y) = −½(y − l)'c(y − l) + p'y`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    c: Matrix,
    l: Vector,
    p: Vector,
}

impl Quadratic {
    /// `c` is symmetrized on construction.
    pub fn new(c: Matrix, l: Vector, p: Vector) -> Result<Self> {
        let n = l.len();
        if c.nrows() != n || c.ncols() != n || p.len() != n || n == 0 {
            return Err(FgpError::validation("c", "c must be n×n with l and p of length n"));
        }
        if c.iter().chain(l.iter()).chain(p.iter()).any(|x| !x.is_finite()) {
            return Err(FgpError::validation("c", "quadratic coefficients must be finite"));
        }
        let c = (&c + c.transpose()) * 0.5;
        Ok(Self { c, l, p })
    }

    /// Zero initial gradient: `p = 0` and `l` at the starting state.
    pub fn hedged(c: Matrix, l: Vector) -> Result<Self> {
        let n = l.len();
        Self::new(c, l, Vector::zeros(n))
    }
}

impl GeneratingFunction for Quadratic {
    fn name(&self) -> String {
        "quadratic".into()
    }
    fn n(&self) -> usize {
        self.l.len()
    }
    fn value(&self, y: &Vector, _f: &Vector) -> f64 {
        let d = y - &self.l;
        -0.5 * d.dot(&(&self.c * &d)) + self.p.dot(y)
    }
    fn grad_l(&self, y: &Vector, _f: &Vector) -> Vector {
        -(&self.c * (y - &self.l)) + &self.p
    }
    fn hess_l(&self, _y: &Vector, _f: &Vector) -> Matrix {
        -self.c.clone()
    }
}

/// `H(y, i) = i H₁(y) + (1 − i) H₂(y)`; with `i` the indicator of `t ≤ τ`
/// this switches from the first portfolio to the second at `τ`.
#[derive(Debug, Clone)]
pub struct Switching {
    first: Gf,
    second: Gf,
}

impl Switching {
    pub fn new(first: Gf, second: Gf) -> Result<Self> {
        if first.n() != second.n() {
            return Err(FgpError::validation(
                "switching",
                "both generating functions need the same dimension",
            ));
        }
        if first.aux_dim() != 0 || second.aux_dim() != 0 {
            return Err(FgpError::validation(
                "switching",
                "components must not take auxiliary arguments",
            ));
        }
        Ok(Self { first, second })
    }

    /// `(H₁ − H₂)(y)`, the jump the auxiliary correction has to absorb.
    pub fn gap(&self, y: &Vector) -> f64 {
        let none = Vector::zeros(0);
        self.first.value(y, &none) - self.second.value(y, &none)
    }
}

impl GeneratingFunction for Switching {
    fn name(&self) -> String {
        format!("switch({},{})", self.first.name(), self.second.name())
    }
    fn n(&self) -> usize {
        self.first.n()
    }
    fn aux_dim(&self) -> usize {
        1
    }
    fn value(&self, y: &Vector, f: &Vector) -> f64 {
        let none = Vector::zeros(0);
        f[0] * self.first.value(y, &none) + (1.0 - f[0]) * self.second.value(y, &none)
    }
    fn grad_l(&self, y: &Vector, f: &Vector) -> Vector {
        let none = Vector::zeros(0);
        self.first.grad_l(y, &none) * f[0] + self.second.grad_l(y, &none) * (1.0 - f[0])
    }
    fn hess_l(&self, y: &Vector, f: &Vector) -> Matrix {
        let none = Vector::zeros(0);
        self.first.hess_l(y, &none) * f[0] + self.second.hess_l(y, &none) * (1.0 - f[0])
    }
    fn grad_f(&self, y: &Vector, _f: &Vector) -> Vector {
        Vector::from_element(1, self.gap(y))
    }
    fn translation_equivariant(&self) -> bool {
        self.first.translation_equivariant() && self.second.translation_equivariant()
    }
}

/// Scalar function of the passive numéraire value used as a gauge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarFn {
    Constant(f64),
    /// `coef · log x`
    Log(f64),
    /// `coef · x^exponent`
    Power {
        coef: f64,
        exponent: f64,
    },
    /// `coef · e^x`
    Exp(f64),
}

impl ScalarFn {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Constant(c) => c,
            ScalarFn::Log(c) => c * x.ln(),
            ScalarFn::Power { coef, exponent } => coef * x.powf(exponent),
            ScalarFn::Exp(c) => c * x.exp(),
        }
    }
    pub fn d1(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Constant(_) => 0.0,
            ScalarFn::Log(c) => c / x,
            ScalarFn::Power { coef, exponent } => coef * exponent * x.powf(exponent - 1.0),
            ScalarFn::Exp(c) => c * x.exp(),
        }
    }
    pub fn d2(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Constant(_) => 0.0,
            ScalarFn::Log(c) => -c / (x * x),
            ScalarFn::Power { coef, exponent } => coef * exponent * (exponent - 1.0) * x.powf(exponent - 2.0),
            ScalarFn::Exp(c) => c * x.exp(),
        }
    }
}

/// `H_f(y) = f(Σ s_i e^{y_i}) + H(y)`: generates the same portfolio as `H`
/// against the passive numéraire with shares `s`.
#[derive(Debug, Clone)]
pub struct GaugeTransformed {
    inner: Gf,
    f: ScalarFn,
    shares: Vector,
}

/// Half-width of the tube `|s'e^y − 1| < 0.5` around the hyperplane.
pub const GAUGE_TUBE: f64 = 0.5;

pub fn gauge_transform(inner: Gf, f: ScalarFn, shares: &PassivePortfolio) -> Result<GaugeTransformed> {
    if shares.shares().len() != inner.n() {
        return Err(FgpError::validation(
            "shares",
            "share vector does not match the generating function",
        ));
    }
    for x in [1.0 - GAUGE_TUBE * 0.5, 1.0, 1.0 + GAUGE_TUBE * 0.5] {
        if ![f.value(x), f.d1(x), f.d2(x)].iter().all(|v| v.is_finite()) {
            return Err(FgpError::validation(
                "f",
                format!("gauge function is not finite at {x}"),
            ));
        }
    }
    Ok(GaugeTransformed {
        inner,
        f,
        shares: shares.shares().clone(),
    })
}

impl GaugeTransformed {
    fn scaled(&self, y: &Vector) -> Vector {
        Vector::from_iterator(y.len(), self.shares.iter().zip(y.iter()).map(|(s, yi)| s * yi.exp()))
    }
}

impl GeneratingFunction for GaugeTransformed {
    fn name(&self) -> String {
        format!("gauge({})", self.inner.name())
    }
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn aux_dim(&self) -> usize {
        self.inner.aux_dim()
    }
    fn value(&self, y: &Vector, f: &Vector) -> f64 {
        self.f.value(self.scaled(y).sum()) + self.inner.value(y, f)
    }
    fn grad_l(&self, y: &Vector, f: &Vector) -> Vector {
        let u = self.scaled(y);
        let total = u.sum();
        u * self.f.d1(total) + self.inner.grad_l(y, f)
    }
    fn hess_l(&self, y: &Vector, f: &Vector) -> Matrix {
        let u = self.scaled(y);
        let total = u.sum();
        &u * u.transpose() * self.f.d2(total) + Matrix::from_diagonal(&u) * self.f.d1(total) + self.inner.hess_l(y, f)
    }
    fn grad_f(&self, y: &Vector, f: &Vector) -> Vector {
        self.inner.grad_f(y, f)
    }
    fn domain_warning(&self, y: &Vector) -> Option<String> {
        let total = self.scaled(y).sum();
        ((total - 1.0).abs() >= GAUGE_TUBE).then(|| format!("state is outside the gauge tube (s'e^y = {total})"))
    }
}

pub fn arc<G: GeneratingFunction + 'static>(g: G) -> Gf {
    Arc::new(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fgp::testing::fd_check;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let y = dvector![0.3, -0.2, 0.5];
        let none = Vector::zeros(0);
        let gfs: Vec<Gf> = vec![
            arc(Linear::new(dvector![0.2, 0.3, 0.5]).unwrap()),
            arc(PassiveLogSumExp::new(dvector![0.2, 0.3, 0.5], dvector![0.1, 0.0, -0.1]).unwrap()),
            arc(Diversity::new(3, 0.5).unwrap()),
            arc(Diversity::new(3, -0.7).unwrap()),
            arc(Quadratic::new(
                dmatrix![2.0, 0.5, 0.0; 0.1, 1.0, 0.3; 0.0, 0.3, 3.0],
                dvector![0.1, 0.2, 0.3],
                dvector![0.1, 0.0, 0.4],
            )
            .unwrap()),
            arc(gauge_transform(
                arc(Diversity::new(3, 0.5).unwrap()),
                ScalarFn::Log(1.3),
                &PassivePortfolio::new(dvector![1.0, 0.5, 0.2]).unwrap(),
            )
            .unwrap()),
        ];
        for g in &gfs {
            fd_check(g.as_ref(), &y, &none);
        }
        let sw = Switching::new(gfs[2].clone(), gfs[4].clone()).unwrap();
        fd_check(&sw, &y, &dvector![0.3]);
    }

    #[test]
    fn linear_weights_and_equivariance() {
        let g = Linear::new(dvector![0.25, 0.75]).unwrap();
        assert!(g.translation_equivariant());
        assert!(!Linear::new(dvector![1.0, 1.0]).unwrap().translation_equivariant());
        assert_eq!(g.grad_l(&dvector![3.0, -1.0], &Vector::zeros(0)), dvector![0.25, 0.75]);
    }

    #[test]
    fn diversity_is_stable_for_large_arguments() {
        let g = Diversity::new(2, 0.5).unwrap();
        let y = dvector![800.0, 801.0];
        let none = Vector::zeros(0);
        assert!(g.value(&y, &none).is_finite());
        assert_abs_diff_eq!(g.grad_l(&y, &none).sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn switching_interpolates() {
        let a = arc(Linear::new(dvector![1.0, 0.0]).unwrap());
        let b = arc(Linear::new(dvector![0.0, 1.0]).unwrap());
        let s = Switching::new(a, b).unwrap();
        let y = dvector![2.0, 5.0];
        assert_eq!(s.value(&y, &dvector![1.0]), 2.0);
        assert_eq!(s.value(&y, &dvector![0.0]), 5.0);
        assert_eq!(s.grad_f(&y, &dvector![0.5])[0], -3.0);
    }

    #[test]
    fn gauge_domain_warning() {
        let g = gauge_transform(
            arc(Diversity::new(2, 0.5).unwrap()),
            ScalarFn::Log(1.0),
            &PassivePortfolio::market(2),
        )
        .unwrap();
        assert!(g.domain_warning(&dvector![-0.7, -0.7]).is_none());
        assert!(g.domain_warning(&dvector![1.0, 1.0]).is_some());
        assert!(gauge_transform(
            arc(Diversity::new(2, 0.5).unwrap()),
            ScalarFn::Log(f64::NAN),
            &PassivePortfolio::market(2)
        )
        .is_err());
    }
}
