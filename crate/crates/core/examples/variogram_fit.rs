//! Fit the four-parameter variance-rate variogram to noisy synthetic data.

use fgplab::statarb::{fit_variogram, VariogramFit};
use fgplab::units::{minutes_to_years, years_to_minutes};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> fgplab::Result<()> {
    let truth = VariogramFit::from_params(0.0413, 1.41e-5, minutes_to_years(0.5), 0.7)?;
    let noise = Normal::new(0.0, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let lags: Vec<f64> = (0..30).map(|i| minutes_to_years(1.5 * 1.25f64.powi(i))).collect();
    let rates: Vec<f64> = lags
        .iter()
        .map(|t| truth.rate(*t) * (1.0 + noise.sample(&mut rng)))
        .collect();
    let fit = fit_variogram(&lags, &rates)?;

    println!(
        "truth C={:.4} U={:.3e} B={:.2}min k={:.3}",
        truth.c,
        truth.u,
        years_to_minutes(truth.b_fit),
        truth.k
    );
    println!(
        "fit   C={:.4} U={:.3e} B={:.2}min k={:.3}",
        fit.c,
        fit.u,
        years_to_minutes(fit.b_fit),
        fit.k
    );
    for t in [lags[0], lags[10], lags[29]] {
        println!(
            "  {:>8.1} min: truth {:.4}, fit {:.4}",
            years_to_minutes(t),
            truth.rate(t),
            fit.rate(t)
        );
    }
    Ok(())
}
