//! Constant-weight versus buy-and-hold: relative performance on paths that
//! end near where they started.

use fgplab::market::{MarketSpec, Matrix};
use fgplab::verify::{scenario_compare, ScenarioSetup};
use nalgebra::dvector;

fn main() -> fgplab::Result<()> {
    let spec = MarketSpec::constant(dvector![0.0, 0.0], Matrix::identity(2, 2) * 0.2, dvector![0.0, 0.0])?;
    let r = scenario_compare(&ScenarioSetup {
        spec: &spec,
        p: dvector![0.5, 0.5],
        horizon: 1.0,
        dt: 1e-3,
        n_paths: 2000,
        seed: 11,
        eps_ladder: vec![0.2, 0.1, 0.05],
        tolerance: 5e-3,
    })?;
    println!(
        "integrated excess growth {:.4}, identity max residual {:.2e}",
        r.gamma_star_integral, r.identity_max_abs
    );
    for rung in &r.rungs {
        match rung.xi {
            Some(xi) => println!(
                "eps {:<5} {:>5} paths  worst shortfall {:.3e}",
                rung.eps, rung.count, xi
            ),
            None => println!("eps {:<5} no paths", rung.eps),
        }
    }
    Ok(())
}
