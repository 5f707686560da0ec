//! Fill-probability curves and the Hamiltonian functions built on them.
//!
//! Every bond uses an SU Johnson curve
//! `f(δ) = 1 − Φ(α + β·asinh((δ − μ)/σ))` for the probability that the client
//! trades when the dealer answers an RFQ at offset `δ` from the reference price.
//! The same curve is used on both sides of the book.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::optimize::{bracket_right, golden_max};

/// Output clamp of [`SuJohnsonCurve::prob`], keeps inverses finite.
pub const PROB_FLOOR: f64 = 1e-15;

/// Absolute tolerance of the golden-section search behind the Hamiltonian.
pub const HAMILTONIAN_TOL: f64 = 1e-10;

/// Quotes beyond this offset are treated as a bracketing failure.
pub const BRACKET_LIMIT: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuJohnsonCurve {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl SuJohnsonCurve {
    pub fn new(alpha: f64, beta: f64, mu: f64, sigma: f64) -> Result<Self> {
        let curve = Self { alpha, beta, mu, sigma };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "SU Johnson curve needs beta > 0 and sigma > 0, got beta={} sigma={}",
                self.beta, self.sigma
            )));
        }
        if !self.alpha.is_finite() || !self.mu.is_finite() {
            return Err(Error::InvalidParameter("non-finite curve parameter".into()));
        }
        Ok(())
    }

    /// Standardized argument `u(δ) = α + β·asinh((δ − μ)/σ)`.
    #[inline]
    fn u(&self, delta: f64) -> f64 {
        self.alpha + self.beta * ((delta - self.mu) / self.sigma).asinh()
    }

    /// Fill probability `f(δ)`, clamped to `[1e-15, 1 − 1e-15]`.
    #[inline]
    pub fn prob(&self, delta: f64) -> f64 {
        normal::sf(self.u(delta)).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }

    /// `f′(δ)` in closed form.
    pub fn prob_slope(&self, delta: f64) -> f64 {
        let z = (delta - self.mu) / self.sigma;
        let du = self.beta / (self.sigma * (1.0 + z * z).sqrt());
        -normal::pdf(self.u(delta)) * du
    }

    /// `f″(δ)` in closed form.
    pub fn prob_curvature(&self, delta: f64) -> f64 {
        let z = (delta - self.mu) / self.sigma;
        let s = 1.0 + z * z;
        let du = self.beta / (self.sigma * s.sqrt());
        let d2u = -self.beta * z / (self.sigma * self.sigma * s * s.sqrt());
        let u = self.u(delta);
        let phi = normal::pdf(u);
        u * phi * du * du - phi * d2u
    }

    /// Quote whose fill probability is `p`:
    /// `δ = μ + σ·sinh((Φ⁻¹(1 − p) − α)/β)`.
    pub fn quote(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::ProbabilityOutOfRange(p));
        }
        Ok(self.quote_unchecked(p))
    }

    #[inline]
    pub(crate) fn quote_unchecked(&self, p: f64) -> f64 {
        let z = normal::inv_sf(p);
        self.mu + self.sigma * ((z - self.alpha) / self.beta).sinh()
    }

    /// `f·f″/(f′)²` at `δ`, the quantity whose supremum must stay below 2.
    pub fn condition_ratio(&self, delta: f64) -> f64 {
        let z = (delta - self.mu) / self.sigma;
        let s = 1.0 + z * z;
        let du = self.beta / (self.sigma * s.sqrt());
        let d2u = -self.beta * z / (self.sigma * self.sigma * s * s.sqrt());
        let u = self.u(delta);
        // f f'' / f'^2 = sf(u) (u u'^2 - u'') / (φ(u) u'^2); avoids the clamp in `prob`.
        normal::sf(u) * (u * du * du - d2u) / (normal::pdf(u) * du * du)
    }

    /// Maximizer of `δ ↦ δ·f(δ)` over `δ > 0`.
    pub fn myopic_quote(&self) -> Result<f64> {
        let g = |d: f64| d * self.prob(d);
        let scale = self.mu.abs() + self.sigma;
        let (a, b) = bracket_right(&g, 0.0, scale, scale, BRACKET_LIMIT)?;
        Ok(golden_max(g, a, b, 1e-10))
    }

    /// Maximizer `δ*(p)` of `f(δ)(δ − p)` and the maximum value.
    pub fn spread_optimum(&self, p: f64) -> Result<SpreadOptimum> {
        let g = |d: f64| self.prob(d) * (d - p);
        let scale = self.mu.abs() + self.sigma;
        let (a, b) = bracket_right(&g, p, p + scale, scale, p.max(0.0) + BRACKET_LIMIT)?;
        let delta = golden_max(g, a, b, HAMILTONIAN_TOL * (1.0 + p.abs()));
        Ok(SpreadOptimum { delta, value: g(delta) })
    }
}

/// Result of `sup_δ f(δ)(δ − p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpreadOptimum {
    pub delta: f64,
    pub value: f64,
}

/// Fill probability of `curve` at `delta`.
pub fn f_eval(curve: &SuJohnsonCurve, delta: f64) -> f64 {
    curve.prob(delta)
}

/// Inverse of [`f_eval`]; rejects `p ∉ (0, 1)`.
pub fn f_inverse(curve: &SuJohnsonCurve, p: f64) -> Result<f64> {
    curve.quote(p)
}

/// Outcome of scanning `f·f″/(f′)²` over a set of offsets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionCheck {
    pub max_ratio: f64,
    pub at_delta: f64,
}

impl ConditionCheck {
    pub fn satisfied(&self) -> bool {
        self.max_ratio < 2.0
    }
}

/// Maximum of `f·f″/(f′)²` over `deltas`.
pub fn check_condition<I>(curve: &SuJohnsonCurve, deltas: I) -> Result<ConditionCheck>
where
    I: IntoIterator<Item = f64>,
{
    let mut best: Option<ConditionCheck> = None;
    for d in deltas {
        let ratio = curve.condition_ratio(d);
        if !ratio.is_finite() {
            continue;
        }
        if best.map_or(true, |b| ratio > b.max_ratio) {
            best = Some(ConditionCheck { max_ratio: ratio, at_delta: d });
        }
    }
    best.ok_or(Error::Empty("condition grid"))
}

/// Offsets covering the standardized range `z ∈ [z_lo, z_hi]` with `n` points.
pub fn standardized_grid(curve: &SuJohnsonCurve, z_lo: f64, z_hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|k| {
            let z = z_lo + (z_hi - z_lo) * k as f64 / (n - 1) as f64;
            curve.mu + curve.sigma * z
        })
        .collect()
}

pub fn myopic_quote(curve: &SuJohnsonCurve) -> Result<f64> {
    curve.myopic_quote()
}

/// `H(p) = Δ·λ·sup_δ f(δ)(δ − p)`.
pub fn hamiltonian(curve: &SuJohnsonCurve, lambda_rfq: f64, trade_size: f64, p: f64) -> Result<f64> {
    Ok(trade_size * lambda_rfq * curve.spread_optimum(p)?.value)
}

/// Optimal quote `δ*(p)` attached to [`hamiltonian`].
pub fn hamiltonian_argmax(curve: &SuJohnsonCurve, p: f64) -> Result<f64> {
    Ok(curve.spread_optimum(p)?.delta)
}

/// Piecewise-cubic Hermite table of `h(p) = sup_δ f(δ)(δ − p)` and of its
/// slope `h′(p) = −f(δ*(p))`, with direct evaluation outside the table range.
#[derive(Clone, Debug)]
pub struct SpreadTable {
    curve: SuJohnsonCurve,
    lo: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl SpreadTable {
    pub fn build(curve: SuJohnsonCurve, lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if !(hi > lo) || nodes < 2 {
            return Err(Error::InvalidParameter("spread table needs hi > lo and >= 2 nodes".into()));
        }
        let step = (hi - lo) / (nodes - 1) as f64;
        let mut values = Vec::with_capacity(nodes);
        let mut slopes = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let opt = curve.spread_optimum(lo + step * k as f64)?;
            values.push(opt.value);
            slopes.push(-curve.prob(opt.delta));
        }
        Ok(Self { curve, lo, step, values, slopes })
    }

    /// Builds a table over `[lo, hi]` and checks it against direct evaluation
    /// at 1000 pseudo-random points.
    pub fn build_checked(curve: SuJohnsonCurve, lo: f64, hi: f64, nodes: usize, tol: f64) -> Result<Self> {
        let table = Self::build(curve, lo, hi, nodes)?;
        let err = table.max_error(1000, 0x5eed)?;
        if err > tol {
            return Err(Error::InterpolationError { error: err, tol });
        }
        Ok(table)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.lo + self.step * (self.values.len() - 1) as f64)
    }

    /// Largest absolute deviation from direct evaluation over `samples` points.
    pub fn max_error(&self, samples: usize, seed: u64) -> Result<f64> {
        let (lo, hi) = self.range();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let p = rng.gen_range(lo..hi);
            let direct = self.curve.spread_optimum(p)?.value;
            worst = worst.max((self.eval(p)?.0 - direct).abs());
        }
        Ok(worst)
    }

    /// `(h(p), h′(p))`.
    pub fn eval(&self, p: f64) -> Result<(f64, f64)> {
        let x = (p - self.lo) / self.step;
        let last = self.values.len() - 1;
        if !(x >= 0.0 && x <= last as f64) {
            let opt = self.curve.spread_optimum(p)?;
            return Ok((opt.value, -self.curve.prob(opt.delta)));
        }
        let k = (x.floor() as usize).min(last - 1);
        let t = x - k as f64;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * self.step, self.slopes[k + 1] * self.step);
        let t2 = t * t;
        let t3 = t2 * t;
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        let dvalue = (6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1;
        Ok((value, dvalue / self.step))
    }
}

/// Evaluator for `h(p)` and `h′(p)`: direct optimization or a memoized table.
#[derive(Clone, Debug)]
pub enum SpreadFn {
    Direct(SuJohnsonCurve),
    Table(SpreadTable),
}

impl SpreadFn {
    pub fn eval(&self, p: f64) -> Result<(f64, f64)> {
        match self {
            SpreadFn::Direct(curve) => {
                let opt = curve.spread_optimum(p)?;
                Ok((opt.value, -curve.prob(opt.delta)))
            }
            SpreadFn::Table(table) => table.eval(p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bond1() -> SuJohnsonCurve {
        SuJohnsonCurve::new(0.4, 0.6, 0.096, 0.086).unwrap()
    }

    fn bond10() -> SuJohnsonCurve {
        SuJohnsonCurve::new(0.4, 0.6, 0.0096, 0.0086).unwrap()
    }

    /// Survival function by composite Simpson quadrature of the normal density.
    fn sf_quadrature(u: f64) -> f64 {
        // 1 - Φ(u) = 1/2 - ∫_0^u φ
        let n = 20_000;
        let h = u / n as f64;
        let mut acc = normal::pdf(0.0) + normal::pdf(u);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * normal::pdf(k as f64 * h);
        }
        0.5 - acc * h / 3.0
    }

    #[test]
    fn rejects_bad_shape() {
        assert!(SuJohnsonCurve::new(0.4, 0.0, 0.1, 0.1).is_err());
        assert!(SuJohnsonCurve::new(0.4, 0.6, 0.1, -0.1).is_err());
    }

    #[test]
    fn f_eval_reference_values() {
        assert!((f_eval(&bond1(), 0.096) - 0.344_578_258_389_676).abs() < 1e-12);
        let sym = SuJohnsonCurve::new(0.0, 1.3, 0.2, 0.5).unwrap();
        assert!((f_eval(&sym, 0.2) - 0.5).abs() < 1e-15);
        let c = bond10();
        let u = c.alpha + c.beta * ((0.0182 - c.mu) / c.sigma).asinh();
        assert!((f_eval(&c, 0.0182) - sf_quadrature(u)).abs() < 1e-10);
    }

    #[test]
    fn f_inverse_examples() {
        let c = bond1();
        for &d in &[-0.5, 0.0, 0.096, 1.0] {
            assert!((f_inverse(&c, f_eval(&c, d)).unwrap() - d).abs() < 1e-8);
        }
        assert!((f_inverse(&c, 0.34458).unwrap() - 0.096).abs() < 1e-4);
        let sym = SuJohnsonCurve::new(0.0, 2.0, -0.3, 0.7).unwrap();
        assert!((f_inverse(&sym, 0.5).unwrap() + 0.3).abs() < 1e-14);
        assert!(f_inverse(&c, 0.0).is_err());
        assert!(f_inverse(&c, 1.0).is_err());
        assert!(f_inverse(&c, f64::NAN).is_err());
    }

    #[test]
    fn closed_form_derivatives_match_differences() {
        let c = bond1();
        let h = 1e-5;
        for &d in &[-0.2, 0.05, 0.1, 0.3, 0.8] {
            let fd1 = (c.prob(d + h) - c.prob(d - h)) / (2.0 * h);
            let fd2 = (c.prob(d + h) - 2.0 * c.prob(d) + c.prob(d - h)) / (h * h);
            assert!((c.prob_slope(d) - fd1).abs() < 1e-7 * c.prob_slope(d).abs().max(1.0));
            assert!((c.prob_curvature(d) - fd2).abs() < 1e-3 * c.prob_curvature(d).abs().max(1.0));
        }
    }

    #[test]
    fn condition_below_two_for_shared_shape() {
        let h = SuJohnsonCurve::new(0.4, 0.6, 0.0, 1.0).unwrap();
        let check = check_condition(&h, standardized_grid(&h, -50.0, 50.0, 200_001)).unwrap();
        assert!(check.satisfied());
        assert!(check.max_ratio > 1.5, "{check:?}");
        // maximum sits near z ≈ 2.66
        assert!((check.at_delta - 2.66).abs() < 0.05, "{check:?}");

        // same shape at another location/scale: ratio unchanged in the standardized variable
        let moved = bond1();
        let other = check_condition(&moved, standardized_grid(&moved, -50.0, 50.0, 200_001)).unwrap();
        assert!((other.max_ratio - check.max_ratio).abs() < 1e-9);

        let fine = check_condition(&h, standardized_grid(&h, -50.0, 50.0, 2_000_001)).unwrap();
        assert!((fine.max_ratio - check.max_ratio).abs() < 1e-3);
    }

    #[test]
    fn condition_ratio_matches_difference_quotients() {
        let c = bond1();
        let h = 1e-5;
        for &d in &[0.0, 0.1, 0.35, 0.6] {
            let f = c.prob(d);
            let f1 = (c.prob(d + h) - c.prob(d - h)) / (2.0 * h);
            let f2 = (c.prob(d + h) - 2.0 * f + c.prob(d - h)) / (h * h);
            let fd = f * f2 / (f1 * f1);
            assert!((c.condition_ratio(d) - fd).abs() < 1e-3, "{d}");
        }
    }

    #[test]
    fn myopic_quote_matches_grid_search() {
        let c = bond1();
        let m = myopic_quote(&c).unwrap();
        let mut best = (0.0, f64::MIN);
        let n = 2_000_000;
        for k in 0..=n {
            let d = 2.0 * k as f64 / n as f64;
            let v = d * c.prob(d);
            if v > best.1 {
                best = (d, v);
            }
        }
        assert!((m - best.0).abs() < 1e-5, "{m} vs {}", best.0);
        // first-order condition
        assert!((c.prob(m) + m * c.prob_slope(m)).abs() < 1e-6);
    }

    #[test]
    fn myopic_quote_scales_with_curve() {
        let c = bond1();
        let k = 3.7;
        let scaled = SuJohnsonCurve::new(c.alpha, c.beta, k * c.mu, k * c.sigma).unwrap();
        let m = myopic_quote(&c).unwrap();
        assert!((myopic_quote(&scaled).unwrap() - k * m).abs() < 1e-8);
    }

    #[test]
    fn hamiltonian_examples() {
        let bond2 = SuJohnsonCurve::new(0.4, 0.6, 0.0576, 0.0516).unwrap();
        let (lambda, size) = (0.175, 3000.0);
        let m = myopic_quote(&bond2).unwrap();
        let h0 = hamiltonian(&bond2, lambda, size, 0.0).unwrap();
        assert!((h0 - size * lambda * m * bond2.prob(m)).abs() < 1e-9 * h0);
        for &p in &[-0.5, -0.1, 0.0] {
            let h = hamiltonian(&bond2, lambda, size, p).unwrap();
            assert!(h >= size * lambda * bond2.prob(m) * (m - p) - 1e-9);
        }
    }

    #[test]
    fn argmax_examples() {
        let c = bond1();
        assert!((hamiltonian_argmax(&c, 0.0).unwrap() - myopic_quote(&c).unwrap()).abs() < 1e-8);
        assert!(hamiltonian_argmax(&c, 1.0).unwrap() > hamiltonian_argmax(&c, 0.0).unwrap());

        let (lambda, size) = (0.275, 7000.0);
        let step = 1e-5;
        for &p in &[-0.3, -0.05, 0.0, 0.07, 0.4] {
            let d = hamiltonian_argmax(&c, p).unwrap();
            let h = hamiltonian(&c, lambda, size, p).unwrap();
            assert!((c.prob(d) * (d - p) - h / (size * lambda)).abs() < 1e-8);
            let slope = (hamiltonian(&c, lambda, size, p + step).unwrap()
                - hamiltonian(&c, lambda, size, p - step).unwrap())
                / (2.0 * step);
            assert!((c.prob(d) + slope / (size * lambda)).abs() < 1e-4);
            // strict local maximum: negative second derivative of the objective
            let g = |x: f64| c.prob(x) * (x - p);
            let e = 1e-4;
            assert!(g(d + e) - 2.0 * g(d) + g(d - e) < 0.0);
        }
    }

    #[test]
    fn spread_table_matches_direct() {
        let c = bond1();
        let table = SpreadTable::build_checked(c, -1.0, 1.0, 2001, 1e-6).unwrap();
        assert!(table.max_error(1000, 3).unwrap() < 1e-9);
        let (h, dh) = table.eval(5.0).unwrap();
        let opt = c.spread_optimum(5.0).unwrap();
        assert_eq!(h, opt.value);
        assert_eq!(dh, -c.prob(opt.delta));
        // a coarse table fails its self-check
        assert!(matches!(
            SpreadTable::build_checked(c, -1.0, 1.0, 4, 1e-9),
            Err(Error::InterpolationError { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn table2_curves() -> Vec<SuJohnsonCurve> {
            crate::data::bundled_market()
                .unwrap()
                .bonds
                .iter()
                .map(|b| b.curve)
                .collect()
        }

        proptest! {
            #[test]
            fn prob_strictly_decreasing(a in -2.0f64..3.0, gap in 1e-3f64..1.0) {
                let c = bond1();
                prop_assert!(c.prob(a) > c.prob(a + gap));
            }

            #[test]
            fn inverse_roundtrip_all_curves(d in -1.0f64..5.0, k in 0usize..20) {
                let c = table2_curves()[k];
                let back = f_inverse(&c, f_eval(&c, d)).unwrap();
                prop_assert!((back - d).abs() < 1e-8, "d={} back={}", d, back);
            }

            #[test]
            fn hamiltonian_convex_nonincreasing(p1 in -1.0f64..1.0, p2 in -1.0f64..1.0) {
                let c = bond1();
                let h = |p: f64| hamiltonian(&c, 0.275, 7000.0, p).unwrap() / (0.275 * 7000.0);
                let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
                prop_assert!(h(hi) <= h(lo) + 1e-12);
                prop_assert!(h(0.5 * (p1 + p2)) <= 0.5 * (h(p1) + h(p2)) + 1e-9);
                prop_assert!(h(p1) >= 0.0);
            }

            #[test]
            fn argmax_nondecreasing(p in -1.0f64..1.0, gap in 1e-4f64..0.5) {
                let c = bond1();
                prop_assert!(hamiltonian_argmax(&c, p + gap).unwrap() >= hamiltonian_argmax(&c, p).unwrap() - 1e-9);
            }
        }
    }
}
