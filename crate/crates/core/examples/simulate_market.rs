//! Simulate a two-asset market and print terminal log-price statistics.

use fgplab::market::{simulate_paths, MarketSpec, TimeGrid};
use fgplab::numerics::{mean, sample_variance};
use nalgebra::{dmatrix, dvector};

fn main() -> fgplab::Result<()> {
    let spec = MarketSpec::constant(
        dvector![0.05, 0.03],
        dmatrix![0.2, 0.0; 0.08, 0.25],
        dvector![0.0, -0.2],
    )?;
    let grid = TimeGrid::new(1.0, 1_000)?;
    let paths = simulate_paths(&spec, &grid, 500, 42)?;

    for i in 0..paths.n() {
        let terminal: Vec<f64> = paths.paths.iter().map(|p| p.last()[i]).collect();
        // log drift plus l0 in expectation
        let expected = spec.l0()[i] + spec.gamma_at(0.0)[i];
        println!(
            "{}: mean {:.4} (model {:.4}), std {:.4}",
            paths.names[i],
            mean(&terminal),
            expected,
            sample_variance(&terminal).sqrt()
        );
    }
    Ok(())
}
