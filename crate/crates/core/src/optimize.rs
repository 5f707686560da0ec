//! One-dimensional maximization: right-expanding bracket plus golden-section search.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9; // (√5 − 1) / 2

/// Golden-section search for the maximum of a unimodal `g` on `[a, b]`.
///
/// Stops when the bracket is narrower than `tol` and returns the midpoint.
pub fn golden_max<G: Fn(f64) -> f64>(g: G, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut gc = g(c);
    let mut gd = g(d);
    while (b - a).abs() > tol {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - INV_PHI * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + INV_PHI * (b - a);
            gd = g(d);
        }
    }
    0.5 * (a + b)
}

/// Finds `[a, c]` containing the maximizer of `g` on `[lo, ∞)`.
///
/// Requires `g(x0) >= g(lo)` with `x0 > lo` and `g` unimodal. The right end is
/// pushed out geometrically from `x0`; fails once it passes `limit`.
pub fn bracket_right<G: Fn(f64) -> f64>(
    g: &G,
    lo: f64,
    x0: f64,
    initial_step: f64,
    limit: f64,
) -> Result<(f64, f64)> {
    let mut a = lo;
    let mut b = x0;
    let mut gb = g(b);
    let mut step = initial_step;
    loop {
        let c = b + step;
        if c > limit || !c.is_finite() {
            return Err(Error::BracketFailure { limit });
        }
        let gc = g(c);
        if gc < gb {
            return Ok((a, c));
        }
        a = b;
        b = c;
        gb = gc;
        step *= 2.0;
    }
}
