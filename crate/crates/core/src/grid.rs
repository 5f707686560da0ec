//! Row-major inventory grid: the last bond varies fastest, each coordinate
//! ascending from `-limit` to `+limit`.

use crate::error::{Error, Result};
use crate::model::{RiskLimits, Side};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InventoryGrid {
    limits: Vec<i32>,
    strides: Vec<usize>,
    len: usize,
}

impl InventoryGrid {
    pub fn new(limits: &RiskLimits) -> Self {
        let limits = limits.as_slice().to_vec();
        let d = limits.len();
        let mut strides = vec![1usize; d];
        let mut len = 1usize;
        for i in (0..d).rev() {
            strides[i] = len;
            len = len.saturating_mul(2 * limits[i] as usize + 1);
        }
        Self { limits, strides, len }
    }

    /// Same as [`InventoryGrid::new`] but refuses grids above `max_points`.
    pub fn checked(limits: &RiskLimits, max_points: usize) -> Result<Self> {
        let g = Self::new(limits);
        if g.len > max_points {
            return Err(Error::GridTooLarge { points: g.len, limit: max_points });
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.limits.len()
    }

    pub fn limits(&self) -> RiskLimits {
        RiskLimits(self.limits.clone())
    }

    pub fn limit(&self, bond: usize) -> i32 {
        self.limits[bond]
    }

    pub fn stride(&self, bond: usize) -> usize {
        self.strides[bond]
    }

    pub fn index(&self, units: &[i32]) -> Result<usize> {
        if units.len() != self.dim() || units.iter().zip(&self.limits).any(|(&n, &l)| n.abs() > l) {
            return Err(Error::StateOutOfBounds(units.to_vec()));
        }
        Ok(self.index_unchecked(units))
    }

    #[inline]
    pub fn index_unchecked(&self, units: &[i32]) -> usize {
        units
            .iter()
            .zip(&self.limits)
            .zip(&self.strides)
            .map(|((&n, &l), &s)| (n + l) as usize * s)
            .sum()
    }

    pub fn state(&self, idx: usize) -> Vec<i32> {
        let mut out = vec![0; self.dim()];
        self.state_into(idx, &mut out);
        out
    }

    #[inline]
    pub fn state_into(&self, idx: usize, out: &mut [i32]) {
        for i in 0..self.dim() {
            let w = 2 * self.limits[i] as usize + 1;
            out[i] = ((idx / self.strides[i]) % w) as i32 - self.limits[i];
        }
    }

    /// Coordinate of bond `bond` at grid index `idx`.
    #[inline]
    pub fn coord(&self, idx: usize, bond: usize) -> i32 {
        let w = 2 * self.limits[bond] as usize + 1;
        ((idx / self.strides[bond]) % w) as i32 - self.limits[bond]
    }

    /// Index reached when `side` fills on `bond`, or `None` if blocked.
    #[inline]
    pub fn neighbor(&self, idx: usize, bond: usize, side: Side) -> Option<usize> {
        let n = self.coord(idx, bond);
        match side {
            Side::Bid if n < self.limits[bond] => Some(idx + self.strides[bond]),
            Side::Ask if n > -self.limits[bond] => Some(idx - self.strides[bond]),
            _ => None,
        }
    }

    /// Index of `-q`.
    #[inline]
    pub fn mirror(&self, idx: usize) -> usize {
        self.len - 1 - idx
    }

    pub fn states(&self) -> impl Iterator<Item = Vec<i32>> + '_ {
        (0..self.len).map(|k| self.state(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_last_fastest() {
        let g = InventoryGrid::new(&RiskLimits(vec![1, 2]));
        assert_eq!(g.len(), 15);
        assert_eq!(g.state(0), vec![-1, -2]);
        assert_eq!(g.state(1), vec![-1, -1]);
        assert_eq!(g.state(5), vec![0, -2]);
        for k in 0..g.len() {
            assert_eq!(g.index(&g.state(k)).unwrap(), k);
            let m: Vec<i32> = g.state(k).iter().map(|n| -n).collect();
            assert_eq!(g.state(g.mirror(k)), m);
        }
    }

    #[test]
    fn neighbors_respect_limits() {
        let g = InventoryGrid::new(&RiskLimits(vec![1, 1]));
        let top = g.index(&[1, 0]).unwrap();
        assert_eq!(g.neighbor(top, 0, Side::Bid), None);
        assert_eq!(g.state(g.neighbor(top, 0, Side::Ask).unwrap()), vec![0, 0]);
        assert_eq!(g.state(g.neighbor(top, 1, Side::Bid).unwrap()), vec![1, 1]);
        assert!(matches!(g.index(&[2, 0]), Err(Error::StateOutOfBounds(_))));
    }

    #[test]
    fn size_guard() {
        let r = InventoryGrid::checked(&RiskLimits(vec![5; 8]), 10_000_000);
        assert!(matches!(r, Err(Error::GridTooLarge { points: 214_358_881, .. })));
    }
}
