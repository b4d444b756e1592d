//! Run the master equation for a diversity-weighted portfolio on one path
//! and show each term next to the wealth oracle.

use fgplab::fgp::{master_equation_path, Diversity, MasterEquationSetup, NoAux};
use fgplab::market::{simulate_path, MarketSpec, TimeGrid};
use fgplab::portfolio::Numeraire;
use nalgebra::{dmatrix, dvector};

fn main() -> fgplab::Result<()> {
    let spec = MarketSpec::constant(
        dvector![0.05, 0.03],
        dmatrix![0.2, 0.0; 0.08, 0.25],
        dvector![0.0, -0.2],
    )?;
    let cov = spec.covariance_schedule();
    let h = Diversity::new(2, 0.5)?;

    for steps in [1_000, 10_000, 100_000] {
        let grid = TimeGrid::new(1.0, steps)?;
        let path = simulate_path(&spec, &grid, 7, 0);
        let setup = MasterEquationSetup {
            h: &h,
            numeraire: &Numeraire::Market,
            aux: &NoAux,
            grid: &grid,
            covariance: Some(&cov),
        };
        let r = master_equation_path(&setup, &path)?.report;
        println!(
            "dt={:.0e}: log V ratio {:+.6}  dH {:+.6}  drift {:+.6}  residual {:+.2e}  (model drift residual {:+.2e})",
            grid.dt(),
            r.lhs,
            r.delta_h,
            r.drift_integral,
            r.residual,
            r.residual_model.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
