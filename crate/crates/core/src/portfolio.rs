//! Weight processes, self-financing wealth and the excess growth rate.

use std::io::{Read, Write};

use crate::error::{FgpError, Result};
use crate::market::{check_weights, relative_covariance_unchecked, LogPath, Matrix, Vector};

/// Tolerance on `Σ π_i = 1` for weight processes.
pub const WEIGHT_PROCESS_TOL: f64 = 1e-10;

/// Portfolio weights on every grid point of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProcess {
    pub label: String,
    pub v0: f64,
    weights: Vec<Vector>,
}

impl WeightProcess {
    pub fn new(label: impl Into<String>, v0: f64, weights: Vec<Vector>) -> Result<Self> {
        let label = label.into();
        if !(v0 > 0.0 && v0.is_finite()) {
            return Err(FgpError::validation("v0", "initial wealth must be positive"));
        }
        if weights.is_empty() {
            return Err(FgpError::validation("weights", "empty weight process"));
        }
        let n = weights[0].len();
        for (m, w) in weights.iter().enumerate() {
            if w.len() != n {
                return Err(FgpError::validation(
                    "weights",
                    format!("step {m} has {} entries, expected {n}", w.len()),
                ));
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(FgpError::validation(
                    "weights",
                    format!("non-finite weight at step {m}"),
                ));
            }
            let s = w.sum();
            if (s - 1.0).abs() > WEIGHT_PROCESS_TOL {
                return Err(FgpError::validation(
                    "weights",
                    format!("weights at step {m} sum to {s}"),
                ));
            }
        }
        Ok(Self { label, v0, weights })
    }

    /// The same weights at each of `len` grid points.
    pub fn constant(label: impl Into<String>, p: &Vector, len: usize) -> Result<Self> {
        Self::new(label, 1.0, vec![p.clone(); len])
    }

    pub fn at(&self, m: usize) -> &Vector {
        &self.weights[m]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn n(&self) -> usize {
        self.weights[0].len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vector> {
        self.weights.iter()
    }
}

/// One-period log return `log Σ π_i e^{x_i}` of weights `π` under log-price
/// increments `x`, or `None` if the portfolio value is not positive.
///
/// Evaluated as `ln_1p(Σ π_i expm1(x_i) + (Σ π_i − 1))` so small increments
/// keep full relative precision.
pub fn log_growth(pi: &Vector, x: &[f64]) -> Option<f64> {
    let mut excess = pi.sum() - 1.0;
    for (w, xi) in pi.iter().zip(x) {
        excess += w * xi.exp_m1();
    }
    if excess > -1.0 && excess.is_finite() {
        Some(excess.ln_1p())
    } else {
        None
    }
}

/// Discrete excess growth over one period: `log Σ π_i e^{x_i} − π'x`.
///
/// This is the pathwise counterpart of `γ*_π dt`, and like it is unchanged
/// when every increment is shifted by the same amount.
pub fn realized_excess_growth(pi: &Vector, x: &[f64]) -> Option<f64> {
    let lin: f64 = pi.iter().zip(x).map(|(w, xi)| w * xi).sum();
    log_growth(pi, x).map(|g| g - lin)
}

/// Self-financing log wealth `log V_m` of `w` along `path`, compounding
/// `V_{m+1} = V_m Σ_i π_{i,m} exp(L_{i,m+1} − L_{i,m})`.
pub fn wealth_from_weights(path: &LogPath, w: &WeightProcess) -> Result<Vec<f64>> {
    if w.len() != path.len() || w.n() != path.n() {
        return Err(FgpError::validation(
            "weights",
            format!(
                "weight process is {}x{}, path is {}x{}",
                w.len(),
                w.n(),
                path.len(),
                path.n()
            ),
        ));
    }
    let n = path.n();
    let mut out = Vec::with_capacity(path.len());
    let mut log_v = w.v0.ln();
    out.push(log_v);
    let mut x = vec![0.0; n];
    for m in 0..path.len() - 1 {
        let (a, b) = (path.row(m), path.row(m + 1));
        for i in 0..n {
            x[i] = b[i] - a[i];
        }
        match log_growth(w.at(m), &x) {
            Some(g) => log_v += g,
            None => {
                let factor: f64 = w.at(m).iter().zip(&x).map(|(p, xi)| p * xi.exp()).sum();
                return Err(FgpError::Bankruptcy {
                    label: w.label.clone(),
                    step: m + 1,
                    factor,
                });
            }
        }
        out.push(log_v);
    }
    Ok(out)
}

/// `γ*_π = ½(Σ π_i a_ii − π'aπ)`.
pub fn excess_growth_rate(pi: &Vector, a: &Matrix) -> f64 {
    let diag: f64 = pi.iter().enumerate().map(|(i, p)| p * a[(i, i)]).sum();
    0.5 * (diag - pi.dot(&(a * pi)))
}

/// `γ*_π − ½(Σ π_i a^ρ_ii − π'a^ρπ)`, which vanishes for every numéraire.
pub fn numeraire_invariance_residual(pi: &Vector, rho: &Vector, a: &Matrix) -> Result<f64> {
    check_weights("pi", pi, a.nrows())?;
    check_weights("rho", rho, a.nrows())?;
    let a_rho = relative_covariance_unchecked(a, rho);
    Ok(excess_growth_rate(pi, a) - excess_growth_rate(pi, &a_rho))
}

/// The q-mirror `qπ + (1−q)ρ`, stepwise.
pub fn q_mirror(pi: &WeightProcess, rho: &WeightProcess, q: f64) -> Result<WeightProcess> {
    if pi.len() != rho.len() || pi.n() != rho.n() {
        return Err(FgpError::validation(
            "rho",
            "q-mirror needs weight processes on the same grid",
        ));
    }
    let weights = pi.iter().zip(rho.iter()).map(|(p, r)| p * q + r * (1.0 - q)).collect();
    WeightProcess::new(format!("{}[q={q}]", pi.label), pi.v0, weights)
}

/// Buy-and-hold portfolio holding fixed share counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PassivePortfolio {
    shares: Vector,
}

impl PassivePortfolio {
    pub fn new(shares: Vector) -> Result<Self> {
        if shares.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(FgpError::validation("shares", "shares must be finite and nonnegative"));
        }
        if shares.iter().all(|s| *s == 0.0) {
            return Err(FgpError::validation("shares", "shares must not all be zero"));
        }
        Ok(Self { shares })
    }

    /// One share of every asset (the market portfolio when prices are capitalizations).
    pub fn market(n: usize) -> Self {
        Self {
            shares: Vector::from_element(n, 1.0),
        }
    }

    pub fn shares(&self) -> &Vector {
        &self.shares
    }

    /// `s'X` for log prices `l`.
    pub fn value(&self, l: &[f64]) -> f64 {
        self.shares.iter().zip(l).map(|(s, li)| s * li.exp()).sum()
    }

    /// Induced weights `ρ_i = s_i X_i / s'X`.
    pub fn weights(&self, l: &[f64]) -> Vector {
        let v = self.value(l);
        Vector::from_iterator(l.len(), self.shares.iter().zip(l).map(|(s, li)| s * li.exp() / v))
    }

    pub fn weight_process(&self, path: &LogPath) -> Result<WeightProcess> {
        self.check_dim(path)?;
        let w = (0..path.len()).map(|m| self.weights(path.row(m))).collect();
        WeightProcess::new("passive", 1.0, w)
    }

    /// Log wealth `log(s'X_t / s'X_0)`; passive wealth needs no compounding.
    pub fn log_wealth(&self, path: &LogPath) -> Result<Vec<f64>> {
        self.check_dim(path)?;
        let v0 = self.value(path.row(0));
        if !(v0 > 0.0) {
            return Err(FgpError::DegenerateNumeraire { step: 0, value: v0 });
        }
        Ok((0..path.len()).map(|m| (self.value(path.row(m)) / v0).ln()).collect())
    }

    fn check_dim(&self, path: &LogPath) -> Result<()> {
        if path.n() != self.shares.len() {
            return Err(FgpError::validation("shares", format!("expected {} shares", path.n())));
        }
        Ok(())
    }
}

/// Choice of numéraire portfolio `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub enum Numeraire {
    /// Fully invested in the zero-volatility asset with this index.
    MoneyMarket(usize),
    /// One share of each asset.
    Market,
    Passive(PassivePortfolio),
    /// Rebalanced to fixed weights every step.
    ConstantWeights(Vector),
    /// Arbitrary weights, shared by every path.
    Weights(WeightProcess),
}

/// A numéraire realized along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct NumerairePath {
    pub weights: WeightProcess,
    pub log_wealth: Vec<f64>,
}

impl NumerairePath {
    pub fn wealth(&self) -> Vec<f64> {
        self.log_wealth.iter().map(|l| l.exp()).collect()
    }
}

impl Numeraire {
    pub fn realize(&self, path: &LogPath) -> Result<NumerairePath> {
        let n = path.n();
        match self {
            Numeraire::MoneyMarket(i) => {
                if *i >= n {
                    return Err(FgpError::validation("numeraire", "money-market index out of range"));
                }
                let mut s = Vector::zeros(n);
                s[*i] = 1.0;
                let p = PassivePortfolio::new(s)?;
                Ok(NumerairePath {
                    weights: p.weight_process(path)?,
                    log_wealth: p.log_wealth(path)?,
                })
            }
            Numeraire::Market => {
                let p = PassivePortfolio::market(n);
                Ok(NumerairePath {
                    weights: p.weight_process(path)?,
                    log_wealth: p.log_wealth(path)?,
                })
            }
            Numeraire::Passive(p) => Ok(NumerairePath {
                weights: p.weight_process(path)?,
                log_wealth: p.log_wealth(path)?,
            }),
            Numeraire::ConstantWeights(w) => {
                check_weights("numeraire.weights", w, n)?;
                let wp = WeightProcess::constant("numeraire", w, path.len())?;
                let log_wealth = wealth_from_weights(path, &wp)?;
                Ok(NumerairePath {
                    weights: wp,
                    log_wealth,
                })
            }
            Numeraire::Weights(wp) => {
                let log_wealth = wealth_from_weights(path, wp)?;
                Ok(NumerairePath {
                    weights: wp.clone(),
                    log_wealth,
                })
            }
        }
    }
}

/// Write `time, w_1..w_n, logV` rows.
pub fn write_weights_csv<W: Write>(out: W, times: &[f64], w: &WeightProcess, log_wealth: &[f64]) -> Result<()> {
    let io = |e: csv::Error| FgpError::Io {
        path: "weights csv".into(),
        reason: e.to_string(),
    };
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend((1..=w.n()).map(|i| format!("w_{i}")));
    header.push("logV".into());
    wtr.write_record(&header).map_err(io)?;
    for (m, t) in times.iter().enumerate() {
        let mut row = vec![format!("{t:.17e}")];
        row.extend(w.at(m).iter().map(|x| format!("{x:.17e}")));
        row.push(format!("{:.17e}", log_wealth[m]));
        wtr.write_record(&row).map_err(io)?;
    }
    wtr.flush().map_err(|e| FgpError::Io {
        path: "weights csv".into(),
        reason: e.to_string(),
    })?;
    Ok(())
}

/// Read weights written by [`write_weights_csv`]; a trailing `logV` column is ignored.
pub fn read_weights_csv<R: Read>(input: R, label: &str) -> Result<WeightProcess> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| FgpError::validation("weights_csv", e.to_string()))?
        .clone();
    let n = headers.iter().filter(|h| h.starts_with("w_")).count();
    if n == 0 {
        return Err(FgpError::validation("weights_csv", "no `w_i` columns"));
    }
    let mut weights = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FgpError::validation("weights_csv", e.to_string()))?;
        let w: std::result::Result<Vec<f64>, _> = rec.iter().skip(1).take(n).map(str::parse::<f64>).collect();
        let w = w.map_err(|_| FgpError::validation("weights_csv", format!("row {} is not numeric", row + 1)))?;
        weights.push(Vector::from_vec(w));
    }
    WeightProcess::new(label, 1.0, weights)
}
