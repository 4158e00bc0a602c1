//! Standard normal helpers.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF, accurate in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        let v = norm_cdf(1.0);
        assert!((v - 0.841_344_746_068_542_9).abs() < 1e-14, "{v:e}");
        assert!((norm_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-14);
        // lower tail keeps relative accuracy
        let t = norm_cdf(-10.0);
        assert!((t / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-12);
    }
}
