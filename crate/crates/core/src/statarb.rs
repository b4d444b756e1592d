//! Statistical arbitrage from interval-dependent variance rates: the
//! long-short construction and the hedged quadratic generating function.

pub mod long_short;
pub mod quadratic;
pub mod variogram;

pub use long_short::{long_short_analyze, long_short_from_paths, LongShortEstimate, LongShortInputs, LongShortReport};
pub use quadratic::{
    expected_log_with_drift, growth_rate, optimal_c, optimal_c_with_drift, optimal_horizon, v_of_t, v_of_t_quadrature,
    HorizonOptimum,
};
pub use variogram::{empirical_variogram, fit_variogram, read_variogram_csv, write_variogram_csv, VariogramFit};
