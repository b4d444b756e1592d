//! Mirror portfolios: the growth identity for several q, and the long-run
//! decay of a mirror relative to its base.

use fgplab::market::MarketSpec;
use fgplab::verify::{mirror_checks, mirror_decay_mc, MirrorSetup, PortfolioRule};
use nalgebra::{dmatrix, dvector};

fn main() -> fgplab::Result<()> {
    let spec = MarketSpec::constant(
        dvector![0.0, 0.03, 0.01],
        dmatrix![0.0, 0.0, 0.0; 0.0, 0.2, 0.0; 0.0, 0.1, 0.25],
        dvector![0.0, 0.0, 0.0],
    )?
    .with_money_market(0)?;
    let m = mirror_checks(&MirrorSetup {
        spec: &spec,
        pi: &PortfolioRule::Constant(dvector![0.2, 0.5, 0.3]),
        qs: vec![-1.0, 0.5, 2.0],
        horizon: 1.0,
        dt: 1e-3,
        n_paths: 50,
        seed: 9,
        tolerance: 5e-3,
    })?;
    for r in &m.rungs {
        println!(
            "q={:>4}: identity residual {:.2e}, mirror growth {:+.4} vs base {:+.4}",
            r.q, r.max_abs_residual, r.mean_growth_mirror, r.mean_growth_pi
        );
    }

    let d = mirror_decay_mc(0.3, -0.045, 100.0, 0.01, 300, 4)?;
    println!(
        "decay statistic {:.4} +- {:.4}, limit {:.4}",
        d.mean_statistic, d.standard_error, d.theoretical_limit
    );
    Ok(())
}
