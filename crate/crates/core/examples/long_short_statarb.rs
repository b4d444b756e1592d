//! Long-short statistical arbitrage from variance-rate and gap constants,
//! then the same constants estimated from simulated paths.

use fgplab::fgp::Diversity;
use fgplab::market::{simulate_paths, MarketSpec, TimeGrid};
use fgplab::portfolio::Numeraire;
use fgplab::statarb::{long_short_analyze, long_short_from_paths, LongShortInputs};
use nalgebra::{dmatrix, dvector};

fn main() -> fgplab::Result<()> {
    let r = long_short_analyze(&LongShortInputs {
        a11: 0.0683,
        a22: 0.0423,
        a_diff: 1.69e-7,
        h1: 0.0341,
        h2: 0.0211,
    })?;
    println!("A={:.4} B={:.3e}", r.a, r.b);
    if let (Some(k), Some(g)) = (r.kappa_check, r.gamma_check) {
        println!("best leverage {k:.3e}, growth {g:.1}/y");
    }
    for k in [1e2, 1e3, 1e4] {
        println!("  growth at kappa={k:.0e}: {:.3}", r.growth(k));
    }

    // Estimated on a two-asset market at two rebalancing intervals.
    let spec = MarketSpec::constant(
        dvector![0.05, 0.03],
        dmatrix![0.2, 0.0; 0.08, 0.25],
        dvector![0.0, -0.2],
    )?;
    let paths = simulate_paths(&spec, &TimeGrid::new(1.0, 20_000)?, 20, 5)?;
    let est = long_short_from_paths(&paths, &Diversity::new(2, 0.5)?, &Numeraire::Market, 1, 20)?;
    let e = &est.inputs;
    println!(
        "estimated a11={:.3e} a22={:.3e} a_diff={:.3e} h1={:.3e} h2={:.3e}",
        e.a11, e.a22, e.a_diff, e.h1, e.h2
    );
    Ok(())
}
