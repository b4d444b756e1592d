//! Reproduction harness: master-equation convergence on dt ladders, the
//! close-portfolios scenario, gauge and numéraire checks, and the mirror
//! identities.
//!
//! Every identity is checked against the discrete self-financing wealth
//! oracle in [`crate::portfolio`]. Ladders are coupled: the finest path is
//! simulated once and coarser rungs subsample it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FgpError, Result};
use crate::fgp::builtin::arc;
use crate::fgp::{
    fgp_weights, gauge_transform, master_equation_path, AuxiliaryProcess, AuxiliarySource, Diversity,
    GeneratingFunction, Gf, Linear, MasterEquationPath, MasterEquationReport, MasterEquationSetup, NoAux,
    PassiveLogSumExp, Quadratic, ScalarFn, SwitchAtHittingTime, Switching,
};
use crate::market::{check_weights, simulate_path, LogPath, MarketSpec, Matrix, PathSet, TimeGrid, Vector};
use crate::numerics::{mean, sample_variance, trapezoid};
use crate::portfolio::{excess_growth_rate, q_mirror, wealth_from_weights, Numeraire, PassivePortfolio, WeightProcess};

/// Residual bound used by the identity checks at `dt = 1e-4`.
pub const DEFAULT_TOLERANCE: f64 = 5e-3;
/// Share of paths that must meet the bound.
pub const PASS_FRACTION: f64 = 0.99;
/// Accepted band for the reduction of the mean residual per halving of `dt`.
pub const RATIO_BAND: (f64, f64) = (1.4, 2.8);
/// Residuals below this on every rung count as exact.
pub const EXACT_TOL: f64 = 1e-10;

fn is_bankruptcy(e: &FgpError) -> bool {
    matches!(e, FgpError::Bankruptcy { .. } | FgpError::DegenerateNumeraire { .. })
}

/// Steps of each rung of a halving ladder, coarsest first.
fn ladder_steps(horizon: f64, dt_ladder: &[f64]) -> Result<Vec<usize>> {
    if dt_ladder.len() < 3 {
        return Err(FgpError::validation("dt_ladder", "need at least three step sizes"));
    }
    for w in dt_ladder.windows(2) {
        if !((w[0] / w[1] - 2.0).abs() < 1e-9) {
            return Err(FgpError::validation(
                "dt_ladder",
                "each step size must halve the previous one",
            ));
        }
    }
    let steps: Vec<usize> = dt_ladder.iter().map(|dt| (horizon / dt).round() as usize).collect();
    if steps[0] == 0
        || steps
            .iter()
            .zip(dt_ladder)
            .any(|(s, dt)| ((*s as f64) * dt / horizon - 1.0).abs() > 1e-9)
    {
        return Err(FgpError::validation("dt_ladder", "step sizes must divide the horizon"));
    }
    Ok(steps)
}

/// Inputs of a master-equation convergence study.
pub struct ConvergenceSetup<'a> {
    pub spec: &'a MarketSpec,
    pub h: &'a dyn GeneratingFunction,
    pub numeraire: &'a Numeraire,
    pub aux: &'a dyn AuxiliarySource,
    pub horizon: f64,
    /// Halving ladder, coarsest first.
    pub dt_ladder: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResidual {
    pub path: usize,
    pub residual: f64,
    pub max_abs_residual: f64,
    pub residual_model: Option<f64>,
    pub aux_correction: f64,
    /// Study-specific statistic (e.g. the auxiliary-correction error).
    pub extra: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRung {
    pub dt: f64,
    pub steps: usize,
    pub max_abs_residual: f64,
    pub mean_abs_residual: f64,
    pub mean_max_abs_residual: f64,
    pub mean_abs_residual_model: Option<f64>,
    /// Share of surviving paths with running residual below tolerance.
    pub fraction_within: f64,
    pub bankrupt: usize,
    pub mean_extra: Option<f64>,
    #[serde(skip)]
    pub paths: Vec<PathResidual>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub rungs: Vec<ConvergenceRung>,
    /// Mean residual of rung `j` over rung `j + 1`.
    pub ratios: Vec<f64>,
    /// `log₂` of the ratios.
    pub orders: Vec<f64>,
    pub exact: bool,
    pub pass: bool,
}

fn run_ladder<E>(setup: &ConvergenceSetup, extra: E) -> Result<ConvergenceReport>
where
    E: Fn(&MasterEquationPath, &TimeGrid) -> Option<f64> + Sync,
{
    let steps = ladder_steps(setup.horizon, &setup.dt_ladder)?;
    if setup.n_paths == 0 {
        return Err(FgpError::validation("paths", "need at least one path"));
    }
    let finest = *steps.last().unwrap();
    let fine_grid = TimeGrid::new(setup.horizon, finest)?;
    let grids: Vec<TimeGrid> = steps
        .iter()
        .map(|&s| TimeGrid::new(setup.horizon, s))
        .collect::<Result<_>>()?;
    let covariance = setup.spec.covariance_schedule();

    let per_path: Vec<Vec<Result<PathResidual>>> = (0..setup.n_paths)
        .into_par_iter()
        .map(|k| {
            let fine = simulate_path(setup.spec, &fine_grid, setup.seed, k);
            grids
                .iter()
                .map(|grid| {
                    let path = fine.subsample(finest / grid.steps())?;
                    let me = MasterEquationSetup {
                        h: setup.h,
                        numeraire: setup.numeraire,
                        aux: setup.aux,
                        grid,
                        covariance: Some(&covariance),
                    };
                    let out = master_equation_path(&me, &path)?;
                    let r = &out.report;
                    Ok(PathResidual {
                        path: k,
                        residual: r.residual,
                        max_abs_residual: r.max_abs_residual,
                        residual_model: r.residual_model,
                        aux_correction: r.aux_correction,
                        extra: extra(&out, grid),
                    })
                })
                .collect()
        })
        .collect();

    let mut rungs = Vec::with_capacity(grids.len());
    for (j, grid) in grids.iter().enumerate() {
        let mut ok = Vec::with_capacity(setup.n_paths);
        let mut bankrupt = 0;
        for row in &per_path {
            match &row[j] {
                Ok(p) => ok.push(p.clone()),
                Err(e) if is_bankruptcy(e) => bankrupt += 1,
                Err(e) => return Err(e.clone()),
            }
        }
        if ok.is_empty() {
            return Err(FgpError::Estimation(format!(
                "every path went bankrupt at dt = {}",
                grid.dt()
            )));
        }
        let abs: Vec<f64> = ok.iter().map(|p| p.residual.abs()).collect();
        let maxes: Vec<f64> = ok.iter().map(|p| p.max_abs_residual).collect();
        let model: Option<Vec<f64>> = ok.iter().map(|p| p.residual_model.map(f64::abs)).collect();
        let extras: Option<Vec<f64>> = ok.iter().map(|p| p.extra).collect();
        rungs.push(ConvergenceRung {
            dt: grid.dt(),
            steps: grid.steps(),
            max_abs_residual: maxes.iter().copied().fold(0.0, f64::max),
            mean_abs_residual: mean(&abs),
            mean_max_abs_residual: mean(&maxes),
            mean_abs_residual_model: model.map(|m| mean(&m)),
            fraction_within: maxes.iter().filter(|m| **m < setup.tolerance).count() as f64 / ok.len() as f64,
            bankrupt,
            mean_extra: extras.map(|e| mean(&e)),
            paths: ok,
        });
    }
    let ratios: Vec<f64> = rungs
        .windows(2)
        .map(|w| w[0].mean_abs_residual / w[1].mean_abs_residual)
        .collect();
    let orders = ratios.iter().map(|r| r.log2()).collect();
    let exact = rungs.iter().all(|r| r.max_abs_residual < EXACT_TOL);
    let within = rungs.iter().all(|r| r.fraction_within >= PASS_FRACTION);
    let pass = within && (exact || ratios.iter().all(|r| (RATIO_BAND.0..=RATIO_BAND.1).contains(r)));
    Ok(ConvergenceReport {
        horizon: setup.horizon,
        n_paths: setup.n_paths,
        seed: setup.seed,
        tolerance: setup.tolerance,
        rungs,
        ratios,
        orders,
        exact,
        pass,
    })
}

/// Master-equation residual statistics on each rung of a halving ladder.
pub fn convergence_study(setup: &ConvergenceSetup) -> Result<ConvergenceReport> {
    run_ladder(setup, |_, _| None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingReport {
    pub convergence: ConvergenceReport,
    /// Mean `|aux_correction − (H₁ − H₂)(L^ρ_τ)|` per rung.
    pub aux_error: Vec<f64>,
    pub aux_ratios: Vec<f64>,
    /// Non-increasing within the last rung's standard error.
    pub aux_monotone: bool,
}

/// Convergence study of a switching generating function, additionally
/// tracking how closely the auxiliary correction matches the jump
/// `(H₁ − H₂)(L^ρ_τ)` at the switch.
pub fn switching_study(
    setup: &ConvergenceSetup,
    switching: &Switching,
    trigger: &SwitchAtHittingTime,
) -> Result<SwitchingReport> {
    let convergence = run_ladder(setup, |out, grid| {
        let tau = trigger.switch_index(&out.relative, grid);
        Some((out.report.aux_correction - switching.gap(&out.relative.vector(tau))).abs())
    })?;
    let aux_error: Vec<f64> = convergence
        .rungs
        .iter()
        .map(|r| r.mean_extra.unwrap_or(f64::NAN))
        .collect();
    let aux_ratios: Vec<f64> = aux_error.windows(2).map(|w| w[0] / w[1]).collect();
    let last = convergence.rungs.last().unwrap();
    let errs: Vec<f64> = last.paths.iter().filter_map(|p| p.extra).collect();
    let se = (sample_variance(&errs) / errs.len() as f64).sqrt();
    let aux_monotone = aux_error.windows(2).all(|w| w[1] <= w[0] + se) && aux_error.last() < aux_error.first();
    Ok(SwitchingReport {
        convergence,
        aux_error,
        aux_ratios,
        aux_monotone,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumeraireGapReport {
    /// Largest `|(RHS₁ − RHS₂) − (log V^{ρ₂} − log V^{ρ₁})|`.
    pub max_abs_discrepancy: f64,
    pub max_weight_difference: f64,
    pub max_abs_lambda: f64,
    pub n_paths: usize,
}

/// Run the master equation of `h` against two numéraires and compare the
/// difference of the right-hand sides with the numéraire log-wealth gap.
pub fn numeraire_gap(
    h: &dyn GeneratingFunction,
    first: &Numeraire,
    second: &Numeraire,
    paths: &PathSet,
) -> Result<NumeraireGapReport> {
    let rows: Vec<Result<(f64, f64, f64)>> = paths
        .paths
        .par_iter()
        .map(|p| {
            let run = |numeraire: &Numeraire| {
                master_equation_path(
                    &MasterEquationSetup {
                        h,
                        numeraire,
                        aux: &NoAux,
                        grid: &paths.grid,
                        covariance: None,
                    },
                    p,
                )
            };
            let (a, b) = (run(first)?, run(second)?);
            let rhs = |r: &MasterEquationReport| r.delta_h + r.aux_correction + r.drift_integral;
            let gap = b.report.log_wealth_rho - a.report.log_wealth_rho;
            let discrepancy = (rhs(&a.report) - rhs(&b.report) - gap).abs();
            let dw = a
                .weights
                .weights
                .iter()
                .zip(b.weights.weights.iter())
                .map(|(x, y)| (x - y).amax())
                .fold(0.0, f64::max);
            Ok((discrepancy, dw, a.report.lambda_max_abs.max(b.report.lambda_max_abs)))
        })
        .collect();
    let mut out = NumeraireGapReport {
        max_abs_discrepancy: 0.0,
        max_weight_difference: 0.0,
        max_abs_lambda: 0.0,
        n_paths: paths.n_paths(),
    };
    for r in rows {
        let (d, w, l) = r?;
        out.max_abs_discrepancy = out.max_abs_discrepancy.max(d);
        out.max_weight_difference = out.max_weight_difference.max(w);
        out.max_abs_lambda = out.max_abs_lambda.max(l);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaugeReport {
    pub trials: usize,
    pub max_weight_discrepancy: f64,
    pub worst_trial: usize,
}

fn random_gf(rng: &mut ChaCha8Rng, n: usize) -> Result<Gf> {
    let l = Vector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let mut p = Vector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
    p /= p.sum();
    Ok(match rng.random_range(0..4) {
        0 => arc(Diversity::new(n, rng.random_range(0.1..1.0))?),
        1 => arc(PassiveLogSumExp::new(p, l)?),
        2 => arc(Linear::new(p)?),
        _ => {
            let b = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            arc(Quadratic::new(&b * b.transpose() * 0.2, l, p)?)
        }
    })
}

fn random_gauge(rng: &mut ChaCha8Rng) -> ScalarFn {
    let coef = rng.random_range(-2.0..2.0);
    match rng.random_range(0..4) {
        0 => ScalarFn::Constant(coef),
        1 => ScalarFn::Log(coef),
        2 => ScalarFn::Power {
            coef,
            exponent: rng.random_range(-2.0..3.0),
        },
        _ => ScalarFn::Exp(coef),
    }
}

/// Random `(H, f, s, y)` with `y` on the hyperplane `s'e^y = 1`; compares the
/// weights generated by `H` and by `H + f(s'e^y)` against the passive
/// numéraire `s`.
pub fn gauge_trials(trials: usize, seed: u64) -> Result<GaugeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GaugeReport {
        trials,
        max_weight_discrepancy: 0.0,
        worst_trial: 0,
    };
    for trial in 0..trials {
        let n = rng.random_range(2..6);
        let h = random_gf(&mut rng, n)?;
        let f = random_gauge(&mut rng);
        let shares = PassivePortfolio::new(Vector::from_fn(n, |_, _| rng.random_range(0.1..3.0)))?;
        let mut y = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let shift = shares.value(y.as_slice()).ln();
        y.add_scalar_mut(-shift);
        let relative = LogPath::from_rows(n, y.iter().chain(y.iter()).copied().collect())?;
        let rho = WeightProcess::constant("passive", &shares.weights(y.as_slice()), 2)?;
        let gauged = gauge_transform(h.clone(), f, &shares)?;
        let aux = AuxiliaryProcess::empty(2);
        let a = fgp_weights(h.as_ref(), &relative, &aux, &rho)?;
        let b = fgp_weights(&gauged, &relative, &aux, &rho)?;
        let d = (a.weights.at(0) - b.weights.at(0)).amax();
        if d > report.max_weight_discrepancy {
            report.max_weight_discrepancy = d;
            report.worst_trial = trial;
        }
    }
    Ok(report)
}

/// Constant-weight portfolio `p` against the buy-and-hold portfolio started
/// from the same allocation.
pub struct ScenarioSetup<'a> {
    pub spec: &'a MarketSpec,
    pub p: Vector,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Band widths, largest first.
    pub eps_ladder: Vec<f64>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioPath {
    pub path: usize,
    /// `log V^π_T − log V^π̃_T` from the oracle.
    pub excess: f64,
    /// `H(L_T) − H(L_0) − (H̃(L_T) − H̃(L_0)) + ∫γ*_p`.
    pub rhs: f64,
    pub identity_residual: f64,
    /// `max_t ‖π̃_t − p‖`.
    pub max_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsRung {
    pub eps: f64,
    pub count: usize,
    pub min_excess: Option<f64>,
    /// `max(0, ∫γ*_p − min excess)` on the conditioned sub-ensemble.
    pub xi: Option<f64>,
    pub inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// `∫₀ᵀ γ*_p dt`.
    pub gamma_star_integral: f64,
    /// Smallest eigenvalue of the covariance over the horizon.
    pub u: f64,
    pub identity_max_abs: f64,
    pub identity_fraction_within: f64,
    pub rungs: Vec<EpsRung>,
    /// `ξ` non-increasing as `eps` shrinks, within the identity noise.
    pub xi_monotone: bool,
    pub bankrupt: usize,
    #[serde(skip)]
    pub paths: Vec<ScenarioPath>,
}

pub fn scenario_compare(setup: &ScenarioSetup) -> Result<ScenarioReport> {
    let spec = setup.spec;
    let n = spec.n();
    if n < 2 {
        return Err(FgpError::validation("market", "scenario needs at least two assets"));
    }
    check_weights("p", &setup.p, n)?;
    if setup.p.iter().any(|x| *x <= 0.0) {
        return Err(FgpError::validation("p", "weights must be strictly positive"));
    }
    if setup.eps_ladder.is_empty() || setup.eps_ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(FgpError::validation(
            "eps_ladder",
            "need a strictly decreasing list of band widths",
        ));
    }
    let grid = TimeGrid::with_step(setup.horizon, setup.dt)?;
    let cov = spec.covariance_schedule();
    let mut u = f64::INFINITY;
    for a in cov.values() {
        u = u.min(a.clone().symmetric_eigenvalues().min());
    }
    if !(u > 0.0) {
        return Err(FgpError::validation("sigma", "covariance must be uniformly elliptic"));
    }
    let gamma_samples: Vec<f64> = grid
        .times()
        .iter()
        .map(|t| excess_growth_rate(&setup.p, cov.at(*t)))
        .collect();
    let gamma_star_integral = trapezoid(&gamma_samples, grid.dt());
    let l0 = spec.l0().clone();
    let shares = PassivePortfolio::new(Vector::from_fn(n, |i, _| setup.p[i] * (-l0[i]).exp()))?;
    let h_tilde = PassiveLogSumExp::new(setup.p.clone(), l0.clone())?;
    let none = Vector::zeros(0);

    let rows: Vec<Result<ScenarioPath>> = (0..setup.n_paths)
        .into_par_iter()
        .map(|k| {
            let path = simulate_path(spec, &grid, setup.seed, k);
            let cw = WeightProcess::constant("constant", &setup.p, path.len())?;
            let log_v = wealth_from_weights(&path, &cw)?;
            let log_passive = shares.log_wealth(&path)?;
            let max_distance = (0..path.len())
                .map(|m| (shares.weights(path.row(m)) - &setup.p).norm())
                .fold(0.0, f64::max);
            let (first, last) = (path.first(), path.last());
            let excess = (log_v[path.len() - 1] - log_v[0]) - (log_passive[path.len() - 1] - log_passive[0]);
            let rhs = setup.p.dot(&(&last - &first)) - (h_tilde.value(&last, &none) - h_tilde.value(&first, &none))
                + gamma_star_integral;
            Ok(ScenarioPath {
                path: k,
                excess,
                rhs,
                identity_residual: excess - rhs,
                max_distance,
            })
        })
        .collect();
    let mut paths = Vec::with_capacity(setup.n_paths);
    let mut bankrupt = 0;
    for r in rows {
        match r {
            Ok(p) => paths.push(p),
            Err(e) if is_bankruptcy(&e) => bankrupt += 1,
            Err(e) => return Err(e),
        }
    }
    if paths.is_empty() {
        return Err(FgpError::Estimation("every path went bankrupt".into()));
    }
    let identity_max_abs = paths.iter().map(|p| p.identity_residual.abs()).fold(0.0, f64::max);
    let identity_fraction_within = paths
        .iter()
        .filter(|p| p.identity_residual.abs() < setup.tolerance)
        .count() as f64
        / paths.len() as f64;
    let rungs: Vec<EpsRung> = setup
        .eps_ladder
        .iter()
        .map(|&eps| {
            let inside: Vec<f64> = paths
                .iter()
                .filter(|p| p.max_distance < eps)
                .map(|p| p.excess)
                .collect();
            let min_excess = (!inside.is_empty()).then(|| inside.iter().copied().fold(f64::INFINITY, f64::min));
            EpsRung {
                eps,
                count: inside.len(),
                min_excess,
                xi: min_excess.map(|m| (gamma_star_integral - m).max(0.0)),
                inconclusive: inside.is_empty(),
            }
        })
        .collect();
    let xis: Vec<f64> = rungs.iter().filter_map(|r| r.xi).collect();
    let xi_monotone = xis.len() >= 2 && xis.windows(2).all(|w| w[1] <= w[0] + identity_max_abs);
    Ok(ScenarioReport {
        dt: grid.dt(),
        horizon: setup.horizon,
        n_paths: setup.n_paths,
        seed: setup.seed,
        gamma_star_integral,
        u,
        identity_max_abs,
        identity_fraction_within,
        rungs,
        xi_monotone,
        bankrupt,
        paths,
    })
}

/// How the base portfolio `π` of a mirror study is chosen on each path.
#[derive(Debug, Clone)]
pub enum PortfolioRule {
    Constant(Vector),
    Generated { h: Gf, numeraire: Numeraire },
}

impl PortfolioRule {
    pub fn weights(&self, path: &LogPath) -> Result<WeightProcess> {
        match self {
            PortfolioRule::Constant(p) => {
                check_weights("pi", p, path.n())?;
                WeightProcess::constant("pi", p, path.len())
            }
            PortfolioRule::Generated { h, numeraire } => {
                let setup = MasterEquationSetup {
                    h: h.as_ref(),
                    numeraire,
                    aux: &NoAux,
                    grid: &TimeGrid::new(1.0, path.len() - 1)?,
                    covariance: None,
                };
                Ok(master_equation_path(&setup, path)?.weights.weights)
            }
        }
    }
}

pub struct MirrorSetup<'a> {
    pub spec: &'a MarketSpec,
    pub pi: &'a PortfolioRule,
    pub qs: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MirrorRung {
    pub q: f64,
    pub max_abs_residual: f64,
    pub mean_abs_residual: f64,
    pub fraction_within: f64,
    pub bankrupt: usize,
    /// Mean `log V̂^{π̃[q]}_T / T`.
    pub mean_growth_mirror: f64,
    /// Mean `log V̂^π_T / T`.
    pub mean_growth_pi: f64,
    /// Mean `⟨log V^π⟩_T / T`.
    pub mean_variance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MirrorReport {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub rungs: Vec<MirrorRung>,
    pub pass: bool,
}

struct MirrorPath {
    hat_pi: f64,
    qv: f64,
    mirrors: Vec<Result<f64>>,
}

/// Check `log V̂^{π̃[q]} = q log V̂^π + ½q(1−q)⟨log V^π⟩` against the money
/// market, with `⟨log V^π⟩` the realized quadratic variation of the oracle
/// wealth.
pub fn mirror_checks(setup: &MirrorSetup) -> Result<MirrorReport> {
    let mm = setup
        .spec
        .money_market_index()
        .ok_or_else(|| FgpError::validation("market.money_market", "mirror checks need a money-market asset"))?;
    if setup.qs.is_empty() || setup.qs.iter().any(|q| !q.is_finite()) {
        return Err(FgpError::validation("q", "need finite mirror parameters"));
    }
    let grid = TimeGrid::with_step(setup.horizon, setup.dt)?;
    let rows: Vec<Result<MirrorPath>> = (0..setup.n_paths)
        .into_par_iter()
        .map(|k| {
            let path = simulate_path(setup.spec, &grid, setup.seed, k);
            let rho = Numeraire::MoneyMarket(mm).realize(&path)?;
            let pi = setup.pi.weights(&path)?;
            let log_v = wealth_from_weights(&path, &pi)?;
            let last = path.len() - 1;
            let hat_pi = (log_v[last] - log_v[0]) - (rho.log_wealth[last] - rho.log_wealth[0]);
            let qv = log_v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
            let mirrors = setup
                .qs
                .iter()
                .map(|&q| {
                    let w = q_mirror(&pi, &rho.weights, q)?;
                    let lv = wealth_from_weights(&path, &w)?;
                    Ok((lv[last] - lv[0]) - (rho.log_wealth[last] - rho.log_wealth[0]))
                })
                .collect();
            Ok(MirrorPath { hat_pi, qv, mirrors })
        })
        .collect();
    let rows: Vec<MirrorPath> = rows.into_iter().collect::<Result<_>>()?;
    let t = grid.horizon();
    let mut rungs = Vec::with_capacity(setup.qs.len());
    for (j, &q) in setup.qs.iter().enumerate() {
        let mut residuals = Vec::new();
        let (mut gm, mut gp, mut vr) = (Vec::new(), Vec::new(), Vec::new());
        let mut bankrupt = 0;
        for row in &rows {
            match &row.mirrors[j] {
                Ok(hat_q) => {
                    residuals.push((hat_q - q * row.hat_pi - 0.5 * q * (1.0 - q) * row.qv).abs());
                    gm.push(hat_q / t);
                    gp.push(row.hat_pi / t);
                    vr.push(row.qv / t);
                }
                Err(e) if is_bankruptcy(e) => bankrupt += 1,
                Err(e) => return Err(e.clone()),
            }
        }
        let alive = residuals.len().max(1) as f64;
        rungs.push(MirrorRung {
            q,
            max_abs_residual: residuals.iter().copied().fold(0.0, f64::max),
            mean_abs_residual: mean(&residuals),
            fraction_within: residuals.iter().filter(|r| **r < setup.tolerance).count() as f64 / alive,
            bankrupt,
            mean_growth_mirror: mean(&gm),
            mean_growth_pi: mean(&gp),
            mean_variance_rate: mean(&vr),
        });
    }
    let pass = rungs
        .iter()
        .all(|r| r.bankrupt == 0 && r.max_abs_residual < setup.tolerance);
    Ok(MirrorReport {
        dt: grid.dt(),
        horizon: t,
        n_paths: setup.n_paths,
        seed: setup.seed,
        tolerance: setup.tolerance,
        rungs,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayPath {
    pub path: usize,
    pub growth_pi: f64,
    pub growth_mirror: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub sigma: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Ensemble mean of `(log V̂^π_T + log V̂^{π̃}_T)/T`.
    pub mean_statistic: f64,
    pub standard_error: f64,
    /// `−σ²`.
    pub theoretical_limit: f64,
    /// Share of paths with the statistic below `−σ²/2`.
    pub fraction_below_half_limit: f64,
    /// Share of paths where `min(log V̂^π_T, log V̂^{π̃}_T) < 0`.
    pub fraction_union: f64,
    pub bankrupt: usize,
    /// `σ = 0` violates the nondegenerate-variance hypothesis.
    pub hypothesis_violated: bool,
    #[serde(skip)]
    pub paths: Vec<DecayPath>,
}

/// One risky GBM asset with log drift `γ` and volatility `σ` next to a
/// zero-rate money market; `π` holds the risky asset and `π̃` is its mirror.
pub fn mirror_decay_mc(
    sigma: f64,
    gamma: f64,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<DecayReport> {
    if !(sigma >= 0.0 && sigma.is_finite()) || !gamma.is_finite() {
        return Err(FgpError::validation("sigma", "need finite σ ≥ 0 and finite γ"));
    }
    if n_paths == 0 {
        return Err(FgpError::validation("paths", "need at least one path"));
    }
    let spec = MarketSpec::constant(
        Vector::from_vec(vec![0.0, gamma]),
        Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, sigma]),
        Vector::zeros(2),
    )?
    .with_money_market(0)?;
    let grid = TimeGrid::with_step(horizon, dt)?;
    let mirror = Vector::from_vec(vec![2.0, -1.0]);
    let rows: Vec<Result<DecayPath>> = (0..n_paths)
        .into_par_iter()
        .map(|k| {
            let path = simulate_path(&spec, &grid, seed, k);
            let last = path.len() - 1;
            let log_m = wealth_from_weights(&path, &WeightProcess::constant("mirror", &mirror, path.len())?)?;
            let mm = path.row(last)[0] - path.row(0)[0];
            Ok(DecayPath {
                path: k,
                growth_pi: (path.row(last)[1] - path.row(0)[1] - mm) / horizon,
                growth_mirror: (log_m[last] - log_m[0] - mm) / horizon,
            })
        })
        .collect();
    let mut paths = Vec::with_capacity(n_paths);
    let mut bankrupt = 0;
    for r in rows {
        match r {
            Ok(p) => paths.push(p),
            Err(e) if is_bankruptcy(&e) => bankrupt += 1,
            Err(e) => return Err(e),
        }
    }
    let stats: Vec<f64> = paths.iter().map(|p| p.growth_pi + p.growth_mirror).collect();
    let limit = -sigma * sigma;
    let alive = stats.len().max(1) as f64;
    Ok(DecayReport {
        sigma,
        gamma,
        horizon: grid.horizon(),
        dt: grid.dt(),
        n_paths,
        seed,
        mean_statistic: mean(&stats),
        standard_error: (sample_variance(&stats) / alive).sqrt(),
        theoretical_limit: limit,
        fraction_below_half_limit: stats.iter().filter(|s| **s < 0.5 * limit).count() as f64 / alive,
        fraction_union: paths.iter().filter(|p| p.growth_pi.min(p.growth_mirror) < 0.0).count() as f64 / alive,
        bankrupt,
        hypothesis_violated: sigma == 0.0,
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn gbm2() -> MarketSpec {
        MarketSpec::constant(dvector![0.02, 0.01], dmatrix![0.2, 0.05; 0.0, 0.25], dvector![0.0, 0.3]).unwrap()
    }

    #[test]
    fn ladder_validation() {
        assert!(ladder_steps(1.0, &[1e-2, 5e-3]).is_err());
        assert!(ladder_steps(1.0, &[1e-2, 4e-3, 2e-3]).is_err());
        assert_eq!(ladder_steps(1.0, &[1e-2, 5e-3, 2.5e-3]).unwrap(), vec![100, 200, 400]);
    }

    #[test]
    fn linear_h_is_exact() {
        let spec = gbm2();
        let h = Linear::new(dvector![0.3, 0.7]).unwrap();
        let r = convergence_study(&ConvergenceSetup {
            spec: &spec,
            h: &h,
            numeraire: &Numeraire::Market,
            aux: &NoAux,
            horizon: 0.5,
            dt_ladder: vec![4e-3, 2e-3, 1e-3],
            n_paths: 8,
            seed: 3,
            tolerance: DEFAULT_TOLERANCE,
        })
        .unwrap();
        assert!(
            r.exact && r.pass,
            "{:?}",
            r.rungs.iter().map(|x| x.max_abs_residual).collect::<Vec<_>>()
        );
    }

    #[test]
    fn coupled_ladder_shares_endpoints() {
        let spec = gbm2();
        let h = Diversity::new(2, 0.5).unwrap();
        let r = convergence_study(&ConvergenceSetup {
            spec: &spec,
            h: &h,
            numeraire: &Numeraire::Market,
            aux: &NoAux,
            horizon: 0.25,
            dt_ladder: vec![2e-3, 1e-3, 5e-4],
            n_paths: 16,
            seed: 11,
            tolerance: DEFAULT_TOLERANCE,
        })
        .unwrap();
        // ΔH only depends on the endpoints, which every rung shares.
        assert_eq!(r.rungs.len(), 3);
        assert!(r.rungs.iter().all(|x| x.bankrupt == 0 && x.fraction_within == 1.0));
        assert!(r.rungs[2].mean_abs_residual < r.rungs[0].mean_abs_residual);
    }

    #[test]
    fn gauge_weights_agree() {
        let r = gauge_trials(40, 5).unwrap();
        assert!(r.max_weight_discrepancy < 1e-10, "{r:?}");
    }

    #[test]
    fn translation_equivariant_h_ignores_numeraire() {
        let spec = gbm2();
        let grid = TimeGrid::new(0.2, 200).unwrap();
        let paths = crate::market::simulate_paths(&spec, &grid, 6, 1).unwrap();
        let r = numeraire_gap(
            &Diversity::new(2, 0.5).unwrap(),
            &Numeraire::Market,
            &Numeraire::ConstantWeights(dvector![0.7, 0.3]),
            &paths,
        )
        .unwrap();
        assert!(r.max_weight_difference < 1e-12 && r.max_abs_lambda < 1e-12, "{r:?}");
        assert!(r.max_abs_discrepancy < 1e-3, "{r:?}");
    }

    #[test]
    fn scenario_identity_and_bound() {
        let spec = MarketSpec::constant(dvector![0.0, 0.0], Matrix::identity(2, 2) * 0.2, dvector![0.0, 0.0]).unwrap();
        let r = scenario_compare(&ScenarioSetup {
            spec: &spec,
            p: dvector![0.5, 0.5],
            horizon: 1.0,
            dt: 1e-3,
            n_paths: 200,
            seed: 2,
            eps_ladder: vec![0.2, 0.1, 1e-6],
            tolerance: DEFAULT_TOLERANCE,
        })
        .unwrap();
        assert!((r.gamma_star_integral - 0.01).abs() < 1e-15);
        assert!((r.u - 0.04).abs() < 1e-12);
        assert!(r.identity_max_abs < 5e-3, "{}", r.identity_max_abs);
        assert!(r.rungs[2].inconclusive && r.rungs[0].count >= r.rungs[1].count);
    }

    #[test]
    fn scenario_rejects_degenerate_inputs() {
        let spec = gbm2();
        let base = |p: Vector, eps: Vec<f64>| ScenarioSetup {
            spec: &spec,
            p,
            horizon: 1.0,
            dt: 1e-2,
            n_paths: 2,
            seed: 0,
            eps_ladder: eps,
            tolerance: DEFAULT_TOLERANCE,
        };
        assert!(scenario_compare(&base(dvector![1.0, 0.0], vec![0.1])).is_err());
        assert!(scenario_compare(&base(dvector![0.5, 0.5], vec![0.1, 0.2])).is_err());
    }

    #[test]
    fn mirror_identity_small_and_q1_trivial() {
        let spec = MarketSpec::constant(
            dvector![0.0, 0.03, -0.01],
            dmatrix![0.0, 0.0, 0.0; 0.0, 0.2, 0.0; 0.0, 0.1, 0.3],
            dvector![0.0, 0.0, 0.0],
        )
        .unwrap()
        .with_money_market(0)
        .unwrap();
        let rule = PortfolioRule::Constant(dvector![0.2, 0.5, 0.3]);
        let r = mirror_checks(&MirrorSetup {
            spec: &spec,
            pi: &rule,
            qs: vec![1.0, -1.0, 2.0],
            horizon: 0.5,
            dt: 1e-3,
            n_paths: 20,
            seed: 4,
            tolerance: DEFAULT_TOLERANCE,
        })
        .unwrap();
        assert!(r.rungs[0].max_abs_residual < 1e-12);
        assert!(r.pass, "{r:?}");
        let no_mm = gbm2();
        assert!(mirror_checks(&MirrorSetup {
            spec: &no_mm,
            pi: &rule,
            qs: vec![1.0],
            horizon: 0.5,
            dt: 1e-2,
            n_paths: 1,
            seed: 0,
            tolerance: DEFAULT_TOLERANCE,
        })
        .is_err());
    }

    #[test]
    fn decay_without_volatility_flags_hypothesis() {
        let r = mirror_decay_mc(0.0, -0.01, 10.0, 0.1, 4, 1).unwrap();
        assert!(r.hypothesis_violated);
        // Only the discrete rebalancing term −γ²dt per unit time remains.
        assert!((r.mean_statistic).abs() < 1e-4);
        let r = mirror_decay_mc(0.3, -0.045, 20.0, 0.01, 50, 1).unwrap();
        assert!(!r.hypothesis_violated && r.mean_statistic < 0.0);
    }
}
