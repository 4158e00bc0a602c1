//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.
//!
//! The interval with the largest error estimate is bisected until the summed
//! error drops below `max(abs_tol, rel_tol * |I|)`.

use crate::error::{Error, NumericalDiagnostics, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self {
            abs,
            rel,
            max_intervals: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += wk * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Segment { a, b, value, error }
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: Tolerance,
) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Input(format!(
            "quadrature limits must be finite, got [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let first = gk15(&mut f, a, b);
    let mut value = first.value;
    let mut error = first.error;
    let mut evaluations = 15;
    let mut heap = BinaryHeap::new();
    heap.push(first);

    loop {
        if !value.is_finite() {
            return Err(fail(
                "integrand produced a non-finite value",
                value,
                error,
                evaluations,
            ));
        }
        if error <= tol.abs.max(tol.rel * value.abs()) {
            return Ok(QuadResult {
                value,
                error,
                evaluations,
            });
        }
        if heap.len() >= tol.max_intervals {
            return Err(fail("subdivision limit reached", value, error, evaluations));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(fail(
                "interval collapsed below machine precision",
                value,
                error,
                evaluations,
            ));
        }
        let left = gk15(&mut f, worst.a, mid);
        let right = gk15(&mut f, mid, worst.b);
        evaluations += 30;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        // Re-sum occasionally: the running error drifts under cancellation.
        if evaluations % 3000 == 0 {
            error = heap.iter().map(|s| s.error).sum();
            value = heap.iter().map(|s| s.value).sum();
        }
    }
}

/// Integrates over consecutive pieces `[p0, p1], [p1, p2], ...`, each to the
/// shared tolerance. Used to put breakpoints on kinks.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(
    mut f: F,
    points: &[f64],
    tol: Tolerance,
) -> Result<QuadResult> {
    let pieces = points.len().saturating_sub(1).max(1) as f64;
    let piece_tol = Tolerance {
        abs: tol.abs / pieces,
        ..tol
    };
    let mut out = QuadResult {
        value: 0.0,
        error: 0.0,
        evaluations: 0,
    };
    for w in points.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let r = integrate(&mut f, w[0], w[1], piece_tol)?;
        out.value += r.value;
        out.error += r.error;
        out.evaluations += r.evaluations;
    }
    Ok(out)
}

fn fail(message: &str, estimate: f64, error_estimate: f64, evaluations: usize) -> Error {
    Error::Numerical(NumericalDiagnostics {
        routine: "adaptive Gauss-Kronrod",
        message: message.to_string(),
        estimate,
        error_estimate,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| 3.0 * x * x, 0.0, 2.0, Tolerance::new(1e-14, 0.0)).unwrap();
        assert!((r.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn gaussian_tails() {
        let r = integrate(
            crate::special::norm_pdf,
            -12.0,
            12.0,
            Tolerance::new(1e-13, 0.0),
        )
        .unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kink_with_breakpoint() {
        let f = |x: f64| (x - 0.3).abs();
        let r = integrate_pieces(f, &[0.0, 0.3, 1.0], Tolerance::new(1e-14, 0.0)).unwrap();
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-13);
    }

    #[test]
    fn nan_integrand_is_reported() {
        let err = integrate(|_| f64::NAN, 0.0, 1.0, Tolerance::new(1e-8, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn non_finite_limits_rejected() {
        assert!(integrate(|x| x, 0.0, f64::INFINITY, Tolerance::new(1e-8, 0.0)).is_err());
    }
}
