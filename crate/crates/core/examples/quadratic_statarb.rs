//! Optimal horizon and scale for the hedged quadratic generating function.

use fgplab::statarb::quadratic::{expected_log_with_drift, growth_rate, optimal_c, optimal_horizon, v_of_t};
use fgplab::statarb::VariogramFit;
use fgplab::units::{minutes_to_years, years_to_minutes};

fn main() -> fgplab::Result<()> {
    let fit = VariogramFit::from_params(0.0413, 1.41e-5, minutes_to_years(0.5), 0.7)?;
    let a = 0.0683;

    for minutes in [2.0, 5.0, 15.0, 60.0, 390.0] {
        let t = minutes_to_years(minutes);
        println!(
            "T={minutes:>5} min: v={:.3e} growth={:>7.2}/y c={:.3e}",
            v_of_t(&fit, t),
            growth_rate(&fit, a, t),
            optimal_c(&fit, a, t)?
        );
    }

    let best = optimal_horizon(&fit, a, minutes_to_years(1.5), 5.0 / 250.0)?;
    println!(
        "optimum T={:.2} min, growth {:.1}/y, c={:.3e}",
        years_to_minutes(best.t_opt),
        best.rate,
        best.c_opt
    );
    // adverse drift in the spread over the holding period
    let flat = expected_log_with_drift(&fit, a, 0.0, best.c_opt, best.t_opt);
    let drag = expected_log_with_drift(&fit, a, -0.5, best.c_opt, best.t_opt);
    println!("expected growth {flat:.2}/y, with drift -0.5/y {drag:.2}/y");
    Ok(())
}
