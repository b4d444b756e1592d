//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::time::Instant;

use nalgebra::{dmatrix, dvector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use fgplab::fgp::builtin::arc;
use fgplab::fgp::{check_translation_equivariance, Diversity, NoAux, SwitchAtHittingTime, Switching};
use fgplab::immunize::{immunization_study, CapmFactors, CovarianceSource};
use fgplab::market::{simulate_paths, MarketSpec, Matrix, TimeGrid};
use fgplab::portfolio::Numeraire;
use fgplab::statarb::quadratic::{growth_rate, optimal_horizon, v_of_t, v_of_t_quadrature};
use fgplab::statarb::{fit_variogram, long_short_analyze, LongShortInputs, VariogramFit};
use fgplab::units::{minutes_to_years, years_to_minutes};
use fgplab::verify::{
    convergence_study, gauge_trials, mirror_checks, mirror_decay_mc, numeraire_gap, scenario_compare, switching_study,
    ConvergenceSetup, MirrorSetup, PortfolioRule, ScenarioSetup, DEFAULT_TOLERANCE,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gbm2() -> MarketSpec {
    MarketSpec::constant(
        dvector![0.05, 0.03],
        dmatrix![0.2, 0.0; 0.08, 0.25],
        dvector![0.0, -0.2],
    )
    .unwrap()
}

fn criterion_1() -> Outcome {
    let r = long_short_analyze(&LongShortInputs {
        a11: 0.0683,
        a22: 0.0423,
        a_diff: 1.69e-7,
        h1: 0.0341,
        h2: 0.0211,
    })
    .map_err(|e| e.to_string())?;
    let (kb, kc, gc) = (
        r.kappa_bar.unwrap_or(f64::NAN),
        r.kappa_check.unwrap_or(f64::NAN),
        r.gamma_check.unwrap_or(f64::NAN),
    );
    let g = r.growth(1e3);
    check(
        (r.a - 0.026).abs() <= 1e-4
            && (r.b - 8.45e-8).abs() <= 1e-10
            && (kc - 1.54e5).abs() <= 1e3
            && (gc - 2.0e3).abs() <= 10.0
            && (g - 26.0).abs() <= 0.5,
        format!(
            "A={:.4} B={:.4e} kappa_bar={kb:.4e} kappa_check={kc:.4e} gamma_check={gc:.1} growth(1e3)={g:.3}",
            r.a, r.b
        ),
    )
}

fn criterion_2() -> Outcome {
    let spec = gbm2();
    let h = Diversity::new(2, 0.5).unwrap();
    let r = convergence_study(&ConvergenceSetup {
        spec: &spec,
        h: &h,
        numeraire: &Numeraire::Market,
        aux: &NoAux,
        horizon: 1.0,
        dt_ladder: vec![1e-4, 5e-5, 2.5e-5],
        n_paths: 200,
        seed: 20_240_601,
        tolerance: DEFAULT_TOLERANCE,
    })
    .map_err(|e| e.to_string())?;
    let first = &r.rungs[0];
    check(
        r.pass,
        format!(
            "dt=1e-4: max|res|={:.3e}, within={:.3}; mean|res| per rung {:?}; ratios {:?}",
            first.max_abs_residual,
            first.fraction_within,
            r.rungs
                .iter()
                .map(|x| format!("{:.3e}", x.mean_abs_residual))
                .collect::<Vec<_>>(),
            r.ratios.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_3() -> Outcome {
    let spec = gbm2();
    let sw = Switching::new(
        arc(Diversity::new(2, 0.5).unwrap()),
        arc(Diversity::new(2, 0.8).unwrap()),
    )
    .unwrap();
    let trigger = SwitchAtHittingTime {
        asset: 0,
        barrier: 0.1,
        latest: 0.5,
    };
    let r = switching_study(
        &ConvergenceSetup {
            spec: &spec,
            h: &sw,
            numeraire: &Numeraire::Market,
            aux: &trigger,
            horizon: 1.0,
            dt_ladder: vec![1e-4, 5e-5, 2.5e-5],
            n_paths: 200,
            seed: 7_310,
            tolerance: DEFAULT_TOLERANCE,
        },
        &sw,
        &trigger,
    )
    .map_err(|e| e.to_string())?;
    let c = &r.convergence;
    let within = c.rungs.iter().all(|x| x.fraction_within >= 0.99);
    check(
        within && r.aux_monotone,
        format!(
            "within per rung {:?}; max|res| {:.3e}; |aux_correction - jump| per rung {:?} ratios {:?}",
            c.rungs.iter().map(|x| x.fraction_within).collect::<Vec<_>>(),
            c.rungs[0].max_abs_residual,
            r.aux_error.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>(),
            r.aux_ratios.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_4() -> Outcome {
    let r = gauge_trials(100, 404).map_err(|e| e.to_string())?;
    check(
        r.max_weight_discrepancy < 1e-8,
        format!(
            "max weight discrepancy {:.3e} over {} trials",
            r.max_weight_discrepancy, r.trials
        ),
    )
}

fn criterion_5() -> Outcome {
    let spec = gbm2();
    let grid = TimeGrid::new(1.0, 10_000).unwrap();
    let paths = simulate_paths(&spec, &grid, 50, 55).map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    let mut ok = true;
    for p in [0.25, 0.5, 0.9] {
        let h = Diversity::new(2, p).unwrap();
        let eq = check_translation_equivariance(&h, 1000, 5);
        let gap = numeraire_gap(
            &h,
            &Numeraire::Market,
            &Numeraire::ConstantWeights(dvector![0.7, 0.3]),
            &paths,
        )
        .map_err(|e| e.to_string())?;
        ok &= eq.lambda_max_abs < 1e-10 && gap.max_abs_lambda < 1e-10 && gap.max_abs_discrepancy < 5e-3;
        details.push(format!(
            "p={p}: |lambda|<={:.1e}, rhs gap discrepancy {:.3e}",
            eq.lambda_max_abs.max(gap.max_abs_lambda),
            gap.max_abs_discrepancy
        ));
    }
    check(ok, details.join("; "))
}

fn criterion_6() -> Outcome {
    let spec = MarketSpec::constant(
        dvector![0.04, 0.02, 0.06],
        dmatrix![0.2, 0.0, 0.0; 0.06, 0.18, 0.0; 0.1, 0.05, 0.3],
        dvector![0.2, 0.0, -0.3],
    )
    .unwrap();
    let grid = TimeGrid::new(1.0, 10_000).unwrap();
    let paths = simulate_paths(&spec, &grid, 100, 66).map_err(|e| e.to_string())?;
    let cov = spec.covariance_schedule();
    let mut ok = true;
    let mut details = Vec::new();
    for source in [CovarianceSource::Model, CovarianceSource::Realized] {
        let factors = CapmFactors {
            window: 500,
            source,
            with_price_level: true,
        };
        let r = immunization_study(
            arc(Diversity::new(3, 0.5).unwrap()),
            &factors,
            &Numeraire::Market,
            &paths,
            Some(&cov),
            DEFAULT_TOLERANCE,
        )
        .map_err(|e| e.to_string())?;
        ok &= r.max_exposure < 1e-10 && r.fraction_within >= 0.99;
        details.push(format!(
            "{source:?} beta: exposure {:.2e}, max|res| {:.3e}, within {:.3}",
            r.max_exposure, r.max_abs_residual, r.fraction_within
        ));
    }
    check(ok, details.join("; "))
}

fn criterion_7() -> Outcome {
    let spec = MarketSpec::constant(
        dvector![0.0, 0.03, 0.01],
        dmatrix![0.0, 0.0, 0.0; 0.0, 0.2, 0.0; 0.0, 0.1, 0.25],
        dvector![0.0, 0.0, 0.0],
    )
    .and_then(|s| s.with_money_market(0))
    .map_err(|e| e.to_string())?;
    let rule = PortfolioRule::Constant(dvector![0.2, 0.5, 0.3]);
    let m = mirror_checks(&MirrorSetup {
        spec: &spec,
        pi: &rule,
        qs: vec![-1.0, 0.5, 2.0],
        horizon: 1.0,
        dt: 1e-4,
        n_paths: 100,
        seed: 77,
        tolerance: DEFAULT_TOLERANCE,
    })
    .map_err(|e| e.to_string())?;
    let d = mirror_decay_mc(0.3, -0.045, 200.0, 0.01, 1000, 7).map_err(|e| e.to_string())?;
    let rel = (d.mean_statistic / d.theoretical_limit - 1.0).abs();
    check(
        m.pass && rel <= 0.2 && d.fraction_union >= 0.99,
        format!(
            "identity max|res| {:?}; decay mean {:.4} vs {:.4} ({:.1}%), union {:.3}",
            m.rungs
                .iter()
                .map(|r| format!("q={}: {:.2e}", r.q, r.max_abs_residual))
                .collect::<Vec<_>>(),
            d.mean_statistic,
            d.theoretical_limit,
            100.0 * rel,
            d.fraction_union
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    // Closed form against quadrature, limit branches included.
    let mut worst: f64 = 0.0;
    for k in [0.4, 0.7, 1.0, 1.0 + 4e-7, 1.5, 2.0, 2.0 - 8e-7, 2.7] {
        let f = VariogramFit::from_params(0.0413, 1.41e-5, minutes_to_years(0.5), k).unwrap();
        for minutes in [1.5, 7.0, 60.0, 390.0, 1950.0] {
            let t = minutes_to_years(minutes);
            worst = worst.max((v_of_t(&f, t) / v_of_t_quadrature(&f, t) - 1.0).abs());
        }
    }
    ok &= worst < 1e-6;
    details.push(format!("v(T) rel err {worst:.2e}"));

    // Figure-like variogram: 0.0683 at 1.5 min decaying to 0.042 at one day.
    let truth = VariogramFit::from_params(0.0413, 1.41e-5, minutes_to_years(0.5), 0.7).unwrap();
    let lags: Vec<f64> = (0..40)
        .map(|i| minutes_to_years(1.5 * (1950.0f64 / 1.5).powf(i as f64 / 39.0)))
        .collect();
    let clean: Vec<f64> = lags.iter().map(|t| truth.rate(*t)).collect();
    let fit = fit_variogram(&lags, &clean).map_err(|e| e.to_string())?;
    let rt = [
        (fit.c, truth.c),
        (fit.u, truth.u),
        (fit.b_fit, truth.b_fit),
        (fit.k, truth.k),
    ]
    .iter()
    .map(|(a, b)| (a / b - 1.0).abs())
    .fold(0.0, f64::max);
    ok &= rt < 0.01;
    details.push(format!("noiseless round trip max rel err {rt:.2e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noisy: Vec<f64> = clean
        .iter()
        .map(|r| {
            let z: f64 = StandardNormal.sample(&mut rng);
            r * (1.0 + 0.01 * z)
        })
        .collect();
    let fit = fit_variogram(&lags, &noisy).map_err(|e| e.to_string())?;
    let a = 0.0683;
    let (lo, hi) = (minutes_to_years(1.5), 5.0 / 250.0);
    let h = optimal_horizon(&fit, a, lo, hi).map_err(|e| e.to_string())?;
    // Dense-grid oracle.
    let dense = 200_000;
    let step = (hi / lo).ln() / (dense - 1) as f64;
    let (mut best_t, mut best) = (lo, f64::NEG_INFINITY);
    for i in 0..dense {
        let t = lo * (step * i as f64).exp();
        let g = growth_rate(&fit, a, t);
        if g > best {
            best = g;
            best_t = t;
        }
    }
    let spacing = h.grid_ratio.ln();
    let argmax_ok = (h.t_opt / best_t).ln().abs() <= spacing;
    let minutes = years_to_minutes(h.t_opt);
    ok &= argmax_ok && (2.0..=30.0).contains(&minutes) && (50.0..=1000.0).contains(&h.rate);
    details.push(format!(
        "noisy fit (C={:.4}, U={:.3e}, B={:.2}min, k={:.3}): T_opt={minutes:.2}min rate={:.1}/y c={:.3e}; oracle argmax {:.2}min",
        fit.c,
        fit.u,
        years_to_minutes(fit.b_fit),
        fit.k,
        h.rate,
        h.c_opt,
        years_to_minutes(best_t)
    ));
    check(ok, details.join("; "))
}

fn criterion_9() -> Outcome {
    let spec = MarketSpec::constant(dvector![0.0, 0.0], Matrix::identity(2, 2) * 0.2, dvector![0.0, 0.0]).unwrap();
    let r = scenario_compare(&ScenarioSetup {
        spec: &spec,
        p: dvector![0.5, 0.5],
        horizon: 1.0,
        dt: 1e-4,
        n_paths: 2000,
        seed: 99,
        eps_ladder: vec![0.2, 0.1, 0.05, 0.025],
        tolerance: DEFAULT_TOLERANCE,
    })
    .map_err(|e| e.to_string())?;
    let conclusive = r.rungs.iter().filter(|x| !x.inconclusive).count();
    check(
        r.identity_max_abs < DEFAULT_TOLERANCE && r.xi_monotone && conclusive >= 2,
        format!(
            "identity max|res| {:.3e}; T*gamma*_p={:.4}; xi by eps {:?}",
            r.identity_max_abs,
            r.gamma_star_integral,
            r.rungs
                .iter()
                .map(|x| format!(
                    "{}: n={} xi={}",
                    x.eps,
                    x.count,
                    x.xi.map_or("n/a".into(), |v| format!("{v:.2e}"))
                ))
                .collect::<Vec<_>>()
        ),
    )
}

fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("\"timestamp\""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{
  "seed": 17,
  "paths": 8,
  "market": {"gamma": [0.05, 0.03], "sigma": [[0.2, 0.0], [0.08, 0.25]], "l0": [0.0, -0.2]},
  "grid": {"horizon": "0.25y", "dt": "0.001y"},
  "generating_function": {"name": "diversity", "p": 0.5},
  "numeraire": {"kind": "market"},
  "statarb_ls": {"a11": 0.0683, "a22": 0.0423, "a_diff": 1.69e-7, "h1": 0.0341, "h2": 0.0211}
}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    let mut ok = true;
    for command in ["simulate", "verify-master", "statarb-ls"] {
        let mut reports = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{command}-{run}"));
            let code = fgplab::cli::main_with_args([
                "fgplab",
                command,
                "--config",
                config.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--quiet",
            ]);
            if code != 0 {
                return Err(format!("{command} exited with {code}"));
            }
            let text = std::fs::read_to_string(Path::new(&out).join("report.json")).map_err(|e| e.to_string())?;
            reports.push(strip_timestamp(&text));
        }
        let same = reports[0] == reports[1];
        ok &= same;
        details.push(format!("{command}: {}", if same { "identical" } else { "differs" }));
    }
    check(ok, details.join(", "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("long-short closed form", criterion_1),
        ("master equation consistency", criterion_2),
        ("stochastic master equation", criterion_3),
        ("gauge invariance", criterion_4),
        ("translation equivariance", criterion_5),
        ("immunization", criterion_6),
        ("mirror identities", criterion_7),
        ("quadratic pipeline", criterion_8),
        ("scenario analysis", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {} ({name}, {secs:.1}s): {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {} ({name}, {secs:.1}s): {d}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
