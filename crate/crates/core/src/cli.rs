//! Command-line front end: config parsing, dispatch and report emission.
//!
//! Every command reads a JSON [`RunConfig`], writes `report.json` plus
//! plot-data CSVs into the output directory, and exits with 0 on success,
//! 2 on validation errors and 3 on numerical failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{FgpError, Result};
use crate::fgp::builtin::arc;
use crate::fgp::numeric::GradientTable;
use crate::fgp::{
    gauge_transform, master_equation_path, AuxiliarySource, Diversity, Gf, Linear, MasterEquationReport,
    MasterEquationSetup, NoAux, PassiveLogSumExp, Quadratic, ScalarFn, SwitchAtHittingTime, Switching,
    TabulatedSeparable,
};
use crate::immunize::{immunization_study, CapmFactors, CovarianceSource};
use crate::market::{read_price_csv, simulate_paths, MarketSpec, Matrix, PathSet, TimeGrid, Vector};
use crate::numerics::{mean, sample_variance};
use crate::portfolio::{read_weights_csv, write_weights_csv, Numeraire, PassivePortfolio};
use crate::report::{ensure_dir, write_csv, write_report};
use crate::statarb::quadratic::{optimal_c_with_drift, v_of_t};
use crate::statarb::{
    empirical_variogram, fit_variogram, growth_rate, long_short_analyze, long_short_from_paths, optimal_c,
    optimal_horizon, read_variogram_csv, LongShortInputs, VariogramFit,
};
use crate::units::{parse_duration, years_to_minutes, SECONDS_PER_YEAR};
use crate::verify::{
    convergence_study, mirror_checks, mirror_decay_mc, scenario_compare, switching_study, ConvergenceSetup,
    MirrorSetup, PortfolioRule, ScenarioSetup, DEFAULT_TOLERANCE, EXACT_TOL, PASS_FRACTION,
};

#[derive(Parser, Debug)]
#[command(name = "fgplab", version, about = "Functionally generated portfolio laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `fgplab-out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured path count.
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Simulate log-price paths.
    Simulate,
    /// Check the master equation against the wealth oracle.
    VerifyMaster,
    /// Constant-weight versus buy-and-hold scenario study.
    Scenario,
    /// Long-short statistical arbitrage.
    StatarbLs,
    /// Quadratic generating function growth optimization.
    StatarbQuad,
    /// Fit a variance-rate variogram.
    Variogram,
    /// Immunize a generating function against CAPM factors.
    Immunize,
    /// Mirror identities and decay experiment.
    Mirror,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::VerifyMaster => "verify-master",
            Command::Scenario => "scenario",
            Command::StatarbLs => "statarb-ls",
            Command::StatarbQuad => "statarb-quad",
            Command::Variogram => "variogram",
            Command::Immunize => "immunize",
            Command::Mirror => "mirror",
        }
    }
}

/// Top-level JSON configuration. Rates are per year; every time-valued
/// field is a string with a unit (`"7.5min"`, `"1y"`).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub market: Option<MarketConfig>,
    pub input_csv: Option<PathBuf>,
    pub grid: Option<GridConfig>,
    pub generating_function: Option<GfConfig>,
    pub numeraire: Option<NumeraireConfig>,
    pub tolerance: Option<f64>,
    pub convergence: Option<ConvergenceConfig>,
    pub scenario: Option<ScenarioConfig>,
    pub statarb_ls: Option<LongShortConfig>,
    pub statarb_quad: Option<QuadConfig>,
    pub variogram: Option<VariogramConfig>,
    pub immunize: Option<ImmunizeConfig>,
    pub mirror: Option<MirrorConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    /// Log drift per year.
    pub gamma: Vec<f64>,
    /// Volatility rows, per square-root year.
    pub sigma: Vec<Vec<f64>>,
    pub l0: Vec<f64>,
    pub money_market: Option<usize>,
    /// Only `"1/y"` is accepted.
    pub rate_unit: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: String,
    pub dt: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum GfConfig {
    Linear {
        p: Vec<f64>,
    },
    Diversity {
        p: f64,
    },
    /// Buy-and-hold from weights `p`; `l` defaults to the initial log prices.
    Passive {
        p: Vec<f64>,
        l: Option<Vec<f64>>,
    },
    /// Without `p` the hedged form is used.
    Quadratic {
        c: Vec<Vec<f64>>,
        l: Option<Vec<f64>>,
        p: Option<Vec<f64>>,
    },
    Switching {
        first: Box<GfConfig>,
        second: Box<GfConfig>,
        asset: usize,
        barrier: f64,
        latest: String,
    },
    Gauge {
        inner: Box<GfConfig>,
        f: GaugeConfig,
        shares: Vec<f64>,
    },
    Table {
        knots: Vec<f64>,
        slopes: Vec<Vec<f64>>,
        finite_difference_hessian: bool,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaugeConfig {
    Constant { coef: f64 },
    Log { coef: f64 },
    Power { coef: f64, exponent: f64 },
    Exp { coef: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NumeraireConfig {
    Market,
    MoneyMarket { index: usize },
    Passive { shares: Vec<f64> },
    ConstantWeights { weights: Vec<f64> },
    WeightsCsv { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub dt_ladder: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub p: Vec<f64>,
    pub eps_ladder: Vec<f64>,
}

/// Either the five constants or two rebalancing intervals for estimation.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongShortConfig {
    pub a11: Option<f64>,
    pub a22: Option<f64>,
    pub a_diff: Option<f64>,
    pub h1: Option<f64>,
    pub h2: Option<f64>,
    pub fast_lag: Option<String>,
    pub slow_lag: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadConfig {
    /// Effective variance rate at the trading interval, per year.
    pub a: f64,
    pub t_min: String,
    pub t_max: String,
    pub gamma_hat: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariogramConfig {
    /// `lag_seconds,rate` file.
    pub csv: Option<PathBuf>,
    pub asset: Option<usize>,
    pub lags: Option<Vec<String>>,
    pub params: Option<VariogramParams>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariogramParams {
    pub c: f64,
    pub u: f64,
    pub b: String,
    pub k: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImmunizeConfig {
    pub window: String,
    pub source: Option<String>,
    pub price_level: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MirrorConfig {
    /// Constant base weights; otherwise the generating function is used.
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub q: Vec<f64>,
    pub decay: Option<DecayConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub sigma: f64,
    pub gamma: f64,
    pub horizon: String,
    pub dt: String,
    pub paths: usize,
}

fn missing(field: &str) -> FgpError {
    FgpError::validation(field, "required field is missing")
}

fn vector(field: &str, v: &[f64], n: usize) -> Result<Vector> {
    if v.len() != n {
        return Err(FgpError::validation(
            field,
            format!("expected {n} entries, got {}", v.len()),
        ));
    }
    Ok(Vector::from_column_slice(v))
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(FgpError::validation(
            field,
            "matrix rows must be non-empty and of equal length",
        ));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// A duration as a whole number of grid steps.
fn steps_of(field: &str, text: &str, dt: f64) -> Result<usize> {
    let years = parse_duration(field, text)?;
    let steps = (years / dt).round();
    if steps < 1.0 || ((steps * dt) / years - 1.0).abs() > 1e-6 {
        return Err(FgpError::validation(
            field,
            format!("`{text}` is not a positive multiple of the grid step"),
        ));
    }
    Ok(steps as usize)
}

impl MarketConfig {
    fn build(&self) -> Result<MarketSpec> {
        if let Some(u) = &self.rate_unit {
            if u != "1/y" {
                return Err(FgpError::validation(
                    "market.rate_unit",
                    "rates must be given per year (`1/y`)",
                ));
            }
        }
        let n = self.l0.len();
        let spec = MarketSpec::constant(
            vector("market.gamma", &self.gamma, n)?,
            matrix("market.sigma", &self.sigma)?,
            Vector::from_column_slice(&self.l0),
        )?;
        match self.money_market {
            Some(i) => spec.with_money_market(i),
            None => Ok(spec),
        }
    }
}

impl GaugeConfig {
    fn build(self) -> ScalarFn {
        match self {
            GaugeConfig::Constant { coef } => ScalarFn::Constant(coef),
            GaugeConfig::Log { coef } => ScalarFn::Log(coef),
            GaugeConfig::Power { coef, exponent } => ScalarFn::Power { coef, exponent },
            GaugeConfig::Exp { coef } => ScalarFn::Exp(coef),
        }
    }
}

/// A generating function plus what the master equation needs to drive it.
struct BuiltGf {
    h: Gf,
    switching: Option<(Arc<Switching>, SwitchAtHittingTime)>,
}

impl BuiltGf {
    fn aux(&self) -> &dyn AuxiliarySource {
        match &self.switching {
            Some((_, trigger)) => trigger,
            None => &NoAux,
        }
    }
}

fn build_plain(cfg: &GfConfig, n: usize, l0: &Vector) -> Result<Gf> {
    Ok(match cfg {
        GfConfig::Linear { p } => arc(Linear::new(vector("generating_function.p", p, n)?)?),
        GfConfig::Diversity { p } => arc(Diversity::new(n, *p)?),
        GfConfig::Passive { p, l } => {
            let l = match l {
                Some(l) => vector("generating_function.l", l, n)?,
                None => l0.clone(),
            };
            arc(PassiveLogSumExp::new(vector("generating_function.p", p, n)?, l)?)
        }
        GfConfig::Quadratic { c, l, p } => {
            let c = matrix("generating_function.c", c)?;
            let l = match l {
                Some(l) => vector("generating_function.l", l, n)?,
                None => l0.clone(),
            };
            match p {
                Some(p) => arc(Quadratic::new(c, l, vector("generating_function.p", p, n)?)?),
                None => arc(Quadratic::hedged(c, l)?),
            }
        }
        GfConfig::Gauge { inner, f, shares } => {
            let inner = build_plain(inner, n, l0)?;
            let shares = PassivePortfolio::new(vector("generating_function.shares", shares, n)?)?;
            arc(gauge_transform(inner, f.build(), &shares)?)
        }
        GfConfig::Table {
            knots,
            slopes,
            finite_difference_hessian,
        } => {
            if slopes.len() != n {
                return Err(FgpError::validation(
                    "generating_function.slopes",
                    format!("need {n} slope columns"),
                ));
            }
            let tables = slopes
                .iter()
                .map(|s| GradientTable::new(knots.clone(), s.clone()))
                .collect::<Result<_>>()?;
            arc(TabulatedSeparable::new(tables, *finite_difference_hessian)?)
        }
        GfConfig::Switching { .. } => {
            return Err(FgpError::validation(
                "generating_function",
                "switching is only allowed at the top level",
            ))
        }
    })
}

fn build_gf(cfg: &GfConfig, n: usize, l0: &Vector) -> Result<BuiltGf> {
    if let GfConfig::Switching {
        first,
        second,
        asset,
        barrier,
        latest,
    } = cfg
    {
        let sw = Arc::new(Switching::new(build_plain(first, n, l0)?, build_plain(second, n, l0)?)?);
        if !(*barrier > 0.0) {
            return Err(FgpError::validation("generating_function.barrier", "must be positive"));
        }
        let trigger = SwitchAtHittingTime {
            asset: *asset,
            barrier: *barrier,
            latest: parse_duration("generating_function.latest", latest)?,
        };
        return Ok(BuiltGf {
            h: sw.clone(),
            switching: Some((sw, trigger)),
        });
    }
    Ok(BuiltGf {
        h: build_plain(cfg, n, l0)?,
        switching: None,
    })
}

fn build_numeraire(cfg: Option<&NumeraireConfig>, n: usize) -> Result<Numeraire> {
    Ok(match cfg.ok_or_else(|| missing("numeraire"))? {
        NumeraireConfig::Market => Numeraire::Market,
        NumeraireConfig::MoneyMarket { index } => Numeraire::MoneyMarket(*index),
        NumeraireConfig::Passive { shares } => {
            Numeraire::Passive(PassivePortfolio::new(vector("numeraire.shares", shares, n)?)?)
        }
        NumeraireConfig::ConstantWeights { weights } => {
            Numeraire::ConstantWeights(vector("numeraire.weights", weights, n)?)
        }
        NumeraireConfig::WeightsCsv { path } => {
            let file = std::fs::File::open(path).map_err(|e| FgpError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            Numeraire::Weights(read_weights_csv(file, "numeraire")?)
        }
    })
}

/// Resolved inputs shared by the commands.
struct Context {
    cfg: RunConfig,
    seed: Option<u64>,
    paths: Option<usize>,
    tolerance: f64,
}

impl Context {
    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| missing("seed"))
    }

    fn market(&self) -> Result<MarketSpec> {
        self.cfg.market.as_ref().ok_or_else(|| missing("market"))?.build()
    }

    fn grid(&self) -> Result<TimeGrid> {
        let g = self.cfg.grid.as_ref().ok_or_else(|| missing("grid"))?;
        let horizon = parse_duration("grid.horizon", &g.horizon)?;
        let dt = parse_duration("grid.dt", &g.dt)?;
        TimeGrid::with_step(horizon, dt)
    }

    /// Simulated paths from `market`, or the ingested CSV; exactly one source.
    fn path_set(&self) -> Result<(PathSet, Option<MarketSpec>)> {
        match (&self.cfg.market, &self.cfg.input_csv) {
            (Some(_), Some(_)) => Err(FgpError::validation(
                "input_csv",
                "give either `market` or `input_csv`, not both",
            )),
            (None, None) => Err(FgpError::validation("market", "need `market` or `input_csv`")),
            (None, Some(p)) => Ok((read_price_csv(p)?, None)),
            (Some(_), None) => {
                let spec = self.market()?;
                let grid = self.grid()?;
                let seed = self.seed()?;
                let n_paths = self.paths.unwrap_or(1);
                Ok((simulate_paths(&spec, &grid, n_paths, seed)?, Some(spec)))
            }
        }
    }

    fn gf(&self, n: usize, l0: &Vector) -> Result<BuiltGf> {
        build_gf(
            self.cfg
                .generating_function
                .as_ref()
                .ok_or_else(|| missing("generating_function"))?,
            n,
            l0,
        )
    }
}

#[derive(Serialize)]
struct SimulateReport {
    n: usize,
    n_paths: usize,
    steps: usize,
    dt: f64,
    horizon: f64,
    names: Vec<String>,
    terminal_mean: Vec<f64>,
    terminal_std: Vec<f64>,
}

fn run_simulate(ctx: &Context, out: &Path) -> Result<(Option<u64>, Value)> {
    let seed = ctx.seed()?;
    let spec = ctx.market()?;
    let grid = ctx.grid()?;
    let paths = simulate_paths(&spec, &grid, ctx.paths.unwrap_or(1), seed)?;
    let n = paths.n();
    let mut terminal_mean = Vec::with_capacity(n);
    let mut terminal_std = Vec::with_capacity(n);
    for i in 0..n {
        let xs: Vec<f64> = paths.paths.iter().map(|p| p.last()[i]).collect();
        terminal_mean.push(mean(&xs));
        terminal_std.push(if xs.len() > 1 { sample_variance(&xs).sqrt() } else { 0.0 });
    }
    let mut header = vec!["path".to_string(), "time".to_string()];
    header.extend(paths.names.iter().cloned());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let times = grid.times();
    write_csv(
        &out.join("paths.csv"),
        &header,
        paths.paths.iter().enumerate().flat_map(|(k, p)| {
            let times = &times;
            (0..p.len()).map(move |m| {
                let mut row = vec![k as f64, times[m]];
                row.extend_from_slice(p.row(m));
                row
            })
        }),
    )?;
    let report = SimulateReport {
        n,
        n_paths: paths.n_paths(),
        steps: grid.steps(),
        dt: grid.dt(),
        horizon: grid.horizon(),
        names: paths.names.clone(),
        terminal_mean,
        terminal_std,
    };
    Ok((Some(seed), to_value(&report)?))
}

#[derive(Serialize)]
struct MasterReport {
    generating_function: String,
    n_paths: usize,
    dt: f64,
    tolerance: f64,
    max_abs_residual: f64,
    mean_abs_residual: f64,
    fraction_within: f64,
    exact: bool,
    pass: bool,
    bankrupt: usize,
    paths: Vec<MasterEquationReport>,
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| FgpError::Estimation(format!("report serialization failed: {e}")))
}

fn run_verify_master(ctx: &Context, out: &Path) -> Result<(Option<u64>, Value)> {
    if let Some(conv) = &ctx.cfg.convergence {
        let spec = ctx.market()?;
        let seed = ctx.seed()?;
        let horizon = ctx.grid()?.horizon();
        let ladder = conv
            .dt_ladder
            .iter()
            .map(|s| parse_duration("convergence.dt_ladder", s))
            .collect::<Result<Vec<_>>>()?;
        let built = ctx.gf(spec.n(), spec.l0())?;
        let numeraire = build_numeraire(ctx.cfg.numeraire.as_ref(), spec.n())?;
        let setup = ConvergenceSetup {
            spec: &spec,
            h: built.h.as_ref(),
            numeraire: &numeraire,
            aux: built.aux(),
            horizon,
            dt_ladder: ladder,
            n_paths: ctx.paths.unwrap_or(1),
            seed,
            tolerance: ctx.tolerance,
        };
        let (value, rungs) = match &built.switching {
            Some((sw, trigger)) => {
                let r = switching_study(&setup, sw, trigger)?;
                (to_value(&r)?, r.convergence.rungs)
            }
            None => {
                let r = convergence_study(&setup)?;
                (to_value(&r)?, r.rungs)
            }
        };
        write_csv(
            &out.join("convergence.csv"),
            &["dt", "path", "residual", "max_abs_residual", "aux_correction", "extra"],
            rungs.iter().flat_map(|r| {
                r.paths.iter().map(move |p| {
                    vec![
                        r.dt,
                        p.path as f64,
                        p.residual,
                        p.max_abs_residual,
                        p.aux_correction,
                        p.extra.unwrap_or(f64::NAN),
                    ]
                })
            }),
        )?;
        return Ok((Some(seed), value));
    }

    let (paths, spec) = ctx.path_set()?;
    let n = paths.n();
    let l0 = paths.paths[0].first();
    let built = ctx.gf(n, &l0)?;
    let numeraire = build_numeraire(ctx.cfg.numeraire.as_ref(), n)?;
    let cov = spec.as_ref().map(MarketSpec::covariance_schedule);
    let setup = MasterEquationSetup {
        h: built.h.as_ref(),
        numeraire: &numeraire,
        aux: built.aux(),
        grid: &paths.grid,
        covariance: cov.as_ref(),
    };
    let mut reports = Vec::with_capacity(paths.n_paths());
    let mut bankrupt = 0;
    let mut first_weights = None;
    for (k, p) in paths.paths.iter().enumerate() {
        match master_equation_path(&setup, p) {
            Ok(r) => {
                if k == 0 {
                    first_weights = Some((r.weights.weights.clone(), r.log_wealth.clone()));
                }
                reports.push(r.report);
            }
            Err(e @ (FgpError::Bankruptcy { .. } | FgpError::DegenerateNumeraire { .. })) => {
                if paths.n_paths() == 1 {
                    return Err(e);
                }
                bankrupt += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if reports.is_empty() {
        return Err(FgpError::Estimation("every path went bankrupt".into()));
    }
    if let Some((w, lw)) = first_weights {
        let file = std::fs::File::create(out.join("weights_path0.csv")).map_err(|e| FgpError::Io {
            path: "weights_path0.csv".into(),
            reason: e.to_string(),
        })?;
        write_weights_csv(file, &paths.grid.times(), &w, &lw)?;
    }
    write_csv(
        &out.join("master_equation.csv"),
        &[
            "path",
            "lhs",
            "delta_h",
            "aux_correction",
            "drift_integral",
            "residual",
            "max_abs_residual",
        ],
        reports.iter().enumerate().map(|(k, r)| {
            vec![
                k as f64,
                r.lhs,
                r.delta_h,
                r.aux_correction,
                r.drift_integral,
                r.residual,
                r.max_abs_residual,
            ]
        }),
    )?;
    let maxes: Vec<f64> = reports.iter().map(|r| r.max_abs_residual).collect();
    let abs: Vec<f64> = reports.iter().map(|r| r.residual.abs()).collect();
    let max_abs_residual = maxes.iter().copied().fold(0.0, f64::max);
    let fraction_within = maxes.iter().filter(|m| **m < ctx.tolerance).count() as f64 / maxes.len() as f64;
    let report = MasterReport {
        generating_function: built.h.name(),
        n_paths: paths.n_paths(),
        dt: paths.grid.dt(),
        tolerance: ctx.tolerance,
        max_abs_residual,
        mean_abs_residual: mean(&abs),
        fraction_within,
        exact: max_abs_residual < EXACT_TOL,
        pass: fraction_within >= PASS_FRACTION,
        bankrupt,
        paths: reports,
    };
    Ok((spec.map(|_| paths.seed), to_value(&report)?))
}

fn run_scenario(ctx: &Context, out: &Path) -> Result<(Option<u64>, Value)> {
    let spec = ctx.market()?;
    let seed = ctx.seed()?;
    let grid = ctx.grid()?;
    let sc = ctx.cfg.scenario.as_ref().ok_or_else(|| missing("scenario"))?;
    let r = scenario_compare(&ScenarioSetup {
        spec: &spec,
        p: vector("scenario.p", &sc.p, spec.n())?,
        horizon: grid.horizon(),
        dt: grid.dt(),
        n_paths: ctx.paths.unwrap_or(1),
        seed,
        eps_ladder: sc.eps_ladder.clone(),
        tolerance: ctx.tolerance,
    })?;
    write_csv(
        &out.join("scenario_paths.csv"),
        &["path", "excess", "rhs", "identity_residual", "max_distance"],
        r.paths
            .iter()
            .map(|p| vec![p.path as f64, p.excess, p.rhs, p.identity_residual, p.max_distance]),
    )?;
    Ok((Some(seed), to_value(&r)?))
}

#[derive(Serialize)]
struct LongShortOutput<E: Serialize> {
    inputs: LongShortInputs,
    analysis: crate::statarb::LongShortReport,
    growth_at_kappa_check: Option<f64>,
    estimate: Option<E>,
}

fn run_statarb_ls(ctx: &Context, out: &Path) -> Result<(Option<u64>, Value)> {
    let ls = ctx.cfg.statarb_ls.clone().unwrap_or_default();
    let (inputs, estimate, seed) = match (&ls.fast_lag, &ls.slow_lag) {
        (Some(fast), Some(slow)) => {
            let (paths, spec) = ctx.path_set()?;
            let dt = paths.grid.dt();
            let n = paths.n();
            let built = ctx.gf(n, &paths.paths[0].first())?;
            if built.switching.is_some() {
                return Err(FgpError::validation(
                    "generating_function",
                    "long-short needs a deterministic generating function",
                ));
            }
            let numeraire = build_numeraire(ctx.cfg.numeraire.as_ref(), n)?;
            let est = long_short_from_paths(
                &paths,
                built.h.as_ref(),
                &numeraire,
                steps_of("statarb_ls.fast_lag", fast, dt)?,
                steps_of("statarb_ls.slow_lag", slow, dt)?,
            )?;
            (est.inputs.clone(), Some(est), spec.map(|_| paths.seed))
        }
        (None, None) => {
            let get = |v: Option<f64>, f: &str| v.ok_or_else(|| missing(&format!("statarb_ls.{f}")));
            let inputs = LongShortInputs {
                a11: get(ls.a11, "a11")?,
                a22: get(ls.a22, "a22")?,
                a_diff: get(ls.a_diff, "a_diff")?,
                h1: get(ls.h1, "h1")?,
                h2: get(ls.h2, "h2")?,
            };
            (inputs, None, None)
        }
        _ => {
            return Err(FgpError::validation(
                "statarb_ls",
                "give both fast_lag and slow_lag, or neither",
            ))
        }
    };
    let analysis = long_short_analyze(&inputs)?;
    let top = analysis.kappa_bar.map_or(1e3, |k| 1.25 * k.abs()).max(1.0);
    write_csv(
        &out.join("growth_curve.csv"),
        &["kappa", "growth"],
        (0..=200).map(|i| {
            let k = top * i as f64 / 200.0;
            vec![k, analysis.growth(k)]
        }),
    )?;
    let output = LongShortOutput {
        growth_at_kappa_check: analysis.kappa_check.map(|k| analysis.growth(k)),
        inputs,
        analysis,
        estimate,
    };
    Ok((seed, to_value(&output)?))
}

/// Variogram fit from explicit parameters, a CSV, or simulated paths; also
/// returns the empirical points when there are any.
fn variogram_fit(ctx: &Context) -> Result<(VariogramFit, Vec<(f64, f64)>, Option<u64>)> {
    let vc = ctx.cfg.variogram.clone().unwrap_or_default();
    if let Some(p) = &vc.params {
        let b = parse_duration("variogram.params.b", &p.b)?;
        return Ok((VariogramFit::from_params(p.c, p.u, b, p.k)?, Vec::new(), None));
    }
    let (points, seed) = if let Some(path) = &vc.csv {
        let file = std::fs::File::open(path).map_err(|e| FgpError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let (lags, rates) = read_variogram_csv(file)?;
        (lags.into_iter().zip(rates).collect::<Vec<_>>(), None)
    } else {
        let lags = vc.lags.as_ref().ok_or_else(|| missing("variogram.lags"))?;
        let (paths, spec) = ctx.path_set()?;
        let dt = paths.grid.dt();
        let steps = lags
            .iter()
            .map(|l| steps_of("variogram.lags", l, dt))
            .collect::<Result<Vec<_>>>()?;
        (
            empirical_variogram(&paths, vc.asset.unwrap_or(0), &steps)?,
            spec.map(|_| paths.seed),
        )
    };
    let (lags, rates): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    Ok((fit_variogram(&lags, &rates)?, points, seed))
}

#[derive(Serialize)]
struct VariogramOutput {
    fit: VariogramFit,
    b_minutes: f64,
    points: usize,
}

fn run_variogram(ctx: &Context, out: &Path) -> Result<(Option<u64>, Value)> {
    let (fit, points, seed) = variogram_fit(ctx)?;
    write_csv(
        &out.join("variogram.csv"),
        &["lag_seconds", "empirical_rate", "fitted_rate"],
        points.iter().map(|(t, r)| vec![t * SECONDS_PER_YEAR, *r, fit.rate(*t)]),
    )?;
    let output = VariogramOutput {
        b_minutes: years_to_minutes(fit.b_fit),
        points: points.len(),
        fit,
    };
    Ok((seed, to_value(&output)?))
}

#[derive(Serialize)]
struct QuadOutput {
    fit: VariogramFit,
    a: f64,
    t_min: f64,
    t_max: f64,
    optimum: crate::statarb::HorizonOptimum,
    t_opt_minutes: f64,
    gamma_hat: Option<f64>,
    c_opt_with_drift: Option<f64>,
}

fn run_statarb_quad(ctx: &Context, out: &Path) -> Result<(Option<u64>, Value)> {
    let q = ctx.cfg.statarb_quad.as_ref().ok_or_else(|| missing("statarb_quad"))?;
    let (fit, _, seed) = variogram_fit(ctx)?;
    let t_min = parse_duration("statarb_quad.t_min", &q.t_min)?;
    let t_max = parse_duration("statarb_quad.t_max", &q.t_max)?;
    let optimum = optimal_horizon(&fit, q.a, t_min, t_max)?;
    let c_opt_with_drift = q
        .gamma_hat
        .map(|g| optimal_c_with_drift(&fit, q.a, g, optimum.t_opt))
        .transpose()?;
    let rows = (0..400)
        .map(|i| {
            let t = t_min * (t_max / t_min).powf(i as f64 / 399.0);
            Ok(vec![
                years_to_minutes(t),
                fit.rate(t),
                v_of_t(&fit, t),
                growth_rate(&fit, q.a, t),
                optimal_c(&fit, q.a, t)?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(
        &out.join("horizon_scan.csv"),
        &["t_minutes", "variance_rate", "v", "growth_rate", "c_opt"],
        rows,
    )?;
    let output = QuadOutput {
        t_opt_minutes: years_to_minutes(optimum.t_opt),
        fit,
        a: q.a,
        t_min,
        t_max,
        optimum,
        gamma_hat: q.gamma_hat,
        c_opt_with_drift,
    };
    Ok((seed, to_value(&output)?))
}

fn run_immunize(ctx: &Context, out: &Path) -> Result<(Option<u64>, Value)> {
    let ic = ctx.cfg.immunize.as_ref().ok_or_else(|| missing("immunize"))?;
    let (paths, spec) = ctx.path_set()?;
    let n = paths.n();
    let built = ctx.gf(n, &paths.paths[0].first())?;
    if built.switching.is_some() || built.h.aux_dim() != 0 {
        return Err(FgpError::validation(
            "generating_function",
            "immunization needs a deterministic generating function",
        ));
    }
    let source = match ic.source.as_deref().unwrap_or("model") {
        "model" if spec.is_some() => CovarianceSource::Model,
        "model" => {
            return Err(FgpError::validation(
                "immunize.source",
                "model covariance needs a simulated market",
            ))
        }
        "realized" => CovarianceSource::Realized,
        other => {
            return Err(FgpError::validation(
                "immunize.source",
                format!("unknown source `{other}`"),
            ))
        }
    };
    let factors = CapmFactors {
        window: steps_of("immunize.window", &ic.window, paths.grid.dt())?,
        source,
        with_price_level: ic.price_level.unwrap_or(true),
    };
    let numeraire = build_numeraire(ctx.cfg.numeraire.as_ref(), n)?;
    let cov = spec.as_ref().map(MarketSpec::covariance_schedule);
    let r = immunization_study(
        built.h.clone(),
        &factors,
        &numeraire,
        &paths,
        cov.as_ref(),
        ctx.tolerance,
    )?;
    write_csv(
        &out.join("immunization_paths.csv"),
        &["path", "max_exposure", "residual", "max_abs_residual", "certificate"],
        r.paths.iter().map(|p| {
            vec![
                p.path as f64,
                p.max_exposure,
                p.residual,
                p.max_abs_residual,
                p.max_certificate,
            ]
        }),
    )?;
    Ok((spec.map(|_| paths.seed), to_value(&r)?))
}

#[derive(Serialize)]
struct MirrorOutput {
    identity: Option<crate::verify::MirrorReport>,
    decay: Option<crate::verify::DecayReport>,
}

fn run_mirror(ctx: &Context, out: &Path) -> Result<(Option<u64>, Value)> {
    let mc = ctx.cfg.mirror.as_ref().ok_or_else(|| missing("mirror"))?;
    let seed = ctx.seed()?;
    let identity = if mc.q.is_empty() {
        None
    } else {
        let spec = ctx.market()?;
        let grid = ctx.grid()?;
        let rule = match &mc.weights {
            Some(w) => PortfolioRule::Constant(vector("mirror.weights", w, spec.n())?),
            None => {
                let built = ctx.gf(spec.n(), spec.l0())?;
                if built.switching.is_some() {
                    return Err(FgpError::validation(
                        "generating_function",
                        "mirror needs a deterministic generating function",
                    ));
                }
                PortfolioRule::Generated {
                    h: built.h,
                    numeraire: build_numeraire(ctx.cfg.numeraire.as_ref(), spec.n())?,
                }
            }
        };
        Some(mirror_checks(&MirrorSetup {
            spec: &spec,
            pi: &rule,
            qs: mc.q.clone(),
            horizon: grid.horizon(),
            dt: grid.dt(),
            n_paths: ctx.paths.unwrap_or(1),
            seed,
            tolerance: ctx.tolerance,
        })?)
    };
    let decay = match &mc.decay {
        Some(d) => {
            let r = mirror_decay_mc(
                d.sigma,
                d.gamma,
                parse_duration("mirror.decay.horizon", &d.horizon)?,
                parse_duration("mirror.decay.dt", &d.dt)?,
                d.paths,
                seed,
            )?;
            write_csv(
                &out.join("mirror_decay.csv"),
                &["path", "growth_pi", "growth_mirror"],
                r.paths
                    .iter()
                    .map(|p| vec![p.path as f64, p.growth_pi, p.growth_mirror]),
            )?;
            Some(r)
        }
        None => None,
    };
    if identity.is_none() && decay.is_none() {
        return Err(FgpError::validation(
            "mirror",
            "give `q` values, a `decay` block, or both",
        ));
    }
    if let Some(r) = &identity {
        write_csv(
            &out.join("mirror_identity.csv"),
            &[
                "q",
                "max_abs_residual",
                "mean_abs_residual",
                "mean_growth_mirror",
                "mean_growth_pi",
                "mean_variance_rate",
            ],
            r.rungs.iter().map(|x| {
                vec![
                    x.q,
                    x.max_abs_residual,
                    x.mean_abs_residual,
                    x.mean_growth_mirror,
                    x.mean_growth_pi,
                    x.mean_variance_rate,
                ]
            }),
        )?;
    }
    Ok((Some(seed), to_value(&MirrorOutput { identity, decay })?))
}

fn load_config(path: Option<&Path>) -> Result<(RunConfig, Value)> {
    let Some(path) = path else {
        return Ok((RunConfig::default(), Value::Object(Default::default())));
    };
    let text = std::fs::read_to_string(path).map_err(|e| FgpError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| FgpError::validation("config", e.to_string()))?;
    let cfg: RunConfig =
        serde_json::from_value(raw.clone()).map_err(|e| FgpError::validation("config", e.to_string()))?;
    Ok((cfg, raw))
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FGPLAB_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| FgpError::validation("FGPLAB_THREADS", "must be a positive integer"))?;
        // The global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<PathBuf> {
    configure_threads()?;
    let (cfg, mut raw) = load_config(cli.config.as_deref())?;
    let command = cli.command.name();
    if let Some(c) = &cfg.command {
        if c != command {
            return Err(FgpError::validation(
                "command",
                format!("config is for `{c}`, invoked `{command}`"),
            ));
        }
    }
    if let Value::Object(map) = &mut raw {
        if let Some(s) = cli.seed {
            map.insert("seed".into(), s.into());
        }
        if let Some(p) = cli.paths {
            map.insert("paths".into(), p.into());
        }
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("fgplab-out"));
    let tolerance = cfg.tolerance.unwrap_or(DEFAULT_TOLERANCE);
    if !(tolerance > 0.0) {
        return Err(FgpError::validation("tolerance", "must be positive"));
    }
    let ctx = Context {
        seed: cli.seed.or(cfg.seed),
        paths: cli.paths.or(cfg.paths),
        tolerance,
        cfg,
    };
    if ctx.paths == Some(0) {
        return Err(FgpError::validation("paths", "need at least one path"));
    }
    ensure_dir(&out)?;
    let (seed, result) = match cli.command {
        Command::Simulate => run_simulate(&ctx, &out)?,
        Command::VerifyMaster => run_verify_master(&ctx, &out)?,
        Command::Scenario => run_scenario(&ctx, &out)?,
        Command::StatarbLs => run_statarb_ls(&ctx, &out)?,
        Command::StatarbQuad => run_statarb_quad(&ctx, &out)?,
        Command::Variogram => run_variogram(&ctx, &out)?,
        Command::Immunize => run_immunize(&ctx, &out)?,
        Command::Mirror => run_mirror(&ctx, &out)?,
    };
    write_report(&out, command, seed, &raw, &result)
}

/// Exit code for an error: 2 for bad input, 3 for numerical failure.
pub fn exit_code(e: &FgpError) -> i32 {
    if e.is_validation() {
        2
    } else {
        3
    }
}

fn error_json(e: &FgpError) -> Value {
    let (kind, field) = match e {
        FgpError::Validation { field, .. } => ("validation", Some(field.clone())),
        FgpError::Io { path, .. } => ("io", Some(path.clone())),
        FgpError::Bankruptcy { .. } | FgpError::DegenerateNumeraire { .. } => ("bankruptcy", None),
        FgpError::FitDivergence { .. } => ("fit_divergence", None),
        _ => ("numerical", None),
    };
    serde_json::json!({ "error": { "kind": kind, "field": field, "message": e.to_string() }, "exit_code": exit_code(e) })
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(path) => {
            if !cli.quiet {
                println!("{}: wrote {}", cli.command.name(), path.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_with(config: &str, command: &str, extra: &[&str]) -> (i32, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, config).unwrap();
        let out = dir.path().join("out");
        let mut args = vec![
            "fgplab",
            command,
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--quiet",
        ];
        args.extend_from_slice(extra);
        (main_with_args(args), dir)
    }

    fn report(dir: &tempfile::TempDir) -> Value {
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap()
    }

    const MARKET: &str = r#""market": {"gamma": [0.05, 0.03], "sigma": [[0.2, 0.0], [0.08, 0.25]], "l0": [0.0, -0.2]},
  "grid": {"horizon": "0.1y", "dt": "0.0005y"}"#;

    #[test]
    fn statarb_ls_constants() {
        let (code, dir) = run_with(
            r#"{"statarb_ls": {"a11": 0.0683, "a22": 0.0423, "a_diff": 1.69e-7, "h1": 0.0341, "h2": 0.0211}}"#,
            "statarb-ls",
            &[],
        );
        assert_eq!(code, 0);
        let r = report(&dir);
        assert!((r["result"]["analysis"]["a"].as_f64().unwrap() - 0.026).abs() < 1e-4);
        assert!((r["result"]["analysis"]["kappa_check"].as_f64().unwrap() - 1.54e5).abs() < 1e3);
        assert!(dir.path().join("out/growth_curve.csv").exists());
    }

    #[test]
    fn simulate_without_seed_names_the_field() {
        let (code, _dir) = run_with(&format!("{{{MARKET}}}"), "simulate", &[]);
        assert_eq!(code, 2);
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().to_str().unwrap();
        let err = run(&Cli::try_parse_from(["fgplab", "simulate", "--out", out]).unwrap()).unwrap_err();
        assert!(matches!(err, FgpError::Validation { ref field, .. } if field == "market" || field == "seed"));
        let (code, dir) = run_with(&format!("{{{MARKET}}}"), "simulate", &["--seed", "4", "--paths", "2"]);
        assert_eq!(code, 0);
        assert_eq!(report(&dir)["result"]["n_paths"], 2);
    }

    #[test]
    fn verify_master_linear_is_exact() {
        let cfg = format!(
            r#"{{"seed": 3, "paths": 4, {MARKET},
  "generating_function": {{"name": "linear", "p": [0.4, 0.6]}}, "numeraire": {{"kind": "market"}}}}"#
        );
        let (code, dir) = run_with(&cfg, "verify-master", &[]);
        assert_eq!(code, 0);
        let r = report(&dir);
        assert_eq!(r["result"]["pass"], true);
        assert!(r["result"]["max_abs_residual"].as_f64().unwrap() < 1e-10);
    }

    #[test]
    fn validation_and_numerical_exit_codes() {
        assert_eq!(run_with("{not json", "simulate", &[]).0, 2);
        assert_eq!(run_with(r#"{"unknown_key": 1}"#, "simulate", &[]).0, 2);
        assert_eq!(run_with(r#"{"command": "mirror"}"#, "simulate", &[]).0, 2);
        let bad_units = format!(
            r#"{{"seed": 1, "market": {{"gamma": [0.0], "sigma": [[0.2]], "l0": [0.0]}}, "grid": {{"horizon": "1", "dt": "0.01y"}}}}"#
        );
        assert_eq!(run_with(&bad_units, "simulate", &[]).0, 2);
        assert_eq!(exit_code(&FgpError::Estimation("x".into())), 3);
        assert_eq!(exit_code(&FgpError::validation("f", "x")), 2);
        assert_eq!(main_with_args(["fgplab", "no-such-command"]), 2);
    }

    #[test]
    fn statarb_quad_from_params() {
        let cfg = r#"{"variogram": {"params": {"c": 0.0413, "u": 1.41e-5, "b": "0.5min", "k": 0.7}},
  "statarb_quad": {"a": 0.0683, "t_min": "1.5min", "t_max": "5d", "gamma_hat": 0.0}}"#;
        let (code, dir) = run_with(cfg, "statarb-quad", &[]);
        assert_eq!(code, 0);
        let m = report(&dir)["result"]["t_opt_minutes"].as_f64().unwrap();
        assert!((2.0..30.0).contains(&m), "{m}");
    }
}
