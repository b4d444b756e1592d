//! Gauge freedom: adding f(log of a passive portfolio) to H leaves the
//! weights unchanged. Also checks translation equivariance of diversity.

use fgplab::fgp::check_translation_equivariance;
use fgplab::fgp::Diversity;
use fgplab::verify::gauge_trials;

fn main() -> fgplab::Result<()> {
    let g = gauge_trials(200, 1)?;
    println!(
        "{} random gauges: max weight change {:.2e} (trial {})",
        g.trials, g.max_weight_discrepancy, g.worst_trial
    );

    for p in [0.2, 0.5, 0.9] {
        let e = check_translation_equivariance(&Diversity::new(3, p)?, 500, 3);
        println!(
            "diversity p={p}: |lambda| <= {:.1e}, equivariance residual {:.1e}",
            e.lambda_max_abs, e.equivariance_residual
        );
    }
    Ok(())
}
