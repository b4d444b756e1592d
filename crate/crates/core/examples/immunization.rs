//! Remove CAPM beta exposure from a diversity portfolio and check the
//! master equation still holds for the immunized generating function.

use fgplab::fgp::builtin::arc;
use fgplab::fgp::Diversity;
use fgplab::immunize::{immunization_study, CapmFactors, CovarianceSource};
use fgplab::market::{simulate_paths, MarketSpec, TimeGrid};
use fgplab::portfolio::Numeraire;
use nalgebra::{dmatrix, dvector};

fn main() -> fgplab::Result<()> {
    let spec = MarketSpec::constant(
        dvector![0.04, 0.02, 0.06],
        dmatrix![0.2, 0.0, 0.0; 0.06, 0.18, 0.0; 0.1, 0.05, 0.3],
        dvector![0.2, 0.0, -0.3],
    )?;
    let paths = simulate_paths(&spec, &TimeGrid::new(1.0, 5_000)?, 20, 6)?;
    let cov = spec.covariance_schedule();

    for source in [CovarianceSource::Model, CovarianceSource::Realized] {
        let factors = CapmFactors {
            window: 250,
            source,
            with_price_level: true,
        };
        let r = immunization_study(
            arc(Diversity::new(3, 0.5)?),
            &factors,
            &Numeraire::Market,
            &paths,
            Some(&cov),
            5e-3,
        )?;
        println!(
            "{source:?}: max factor exposure {:.1e}, residual max {:.2e} mean {:.2e}",
            r.max_exposure, r.max_abs_residual, r.mean_abs_residual
        );
    }
    Ok(())
}
