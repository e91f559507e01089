//! Carrier phase estimation on the discrete Wiener phase-noise channel.
//!
//! The crate is organized bottom-up:
//!
//! * [`constellation`]: Gray-labeled square QAM with Maxwell-Boltzmann shaping.
//! * [`channel`]: Wiener phase noise plus circular AWGN.
//! * [`estimators`]: blind phase search, the constant-phase MAP variant, the
//!   belief-propagation MAP estimator and the weighted softmin BPS.
//! * [`postproc`]: unwrapping, data-aided cycle-slip removal and derotation.
//! * [`metrics`]: mismatched Gaussian demapper and bit-wise mutual information.
//! * [`training`]: hand-written reverse-mode gradients and Adam for the
//!   softmin BPS parameters.
//! * [`experiment`]: seeded sweeps, training runs and plot-ready output.

pub mod channel;
pub mod constellation;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod metrics;
pub mod pipeline;
pub mod postproc;
pub mod rng;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Numerically stable `log(sum(exp(xs)))`. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Wraps `x` into `[-period/2, period/2)`.
pub fn wrap_to_period(x: f64, period: f64) -> f64 {
    let w = x - period * ((x + 0.5 * period) / period).floor();
    // floor can land exactly on the upper edge after rounding
    if w >= 0.5 * period {
        w - period
    } else {
        w
    }
}
