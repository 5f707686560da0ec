//! Exact solvers on the full inventory grid.
//!
//! Two value functions live side by side: `θ̃` (at any time, [`Flavor::AtAnyTime`])
//! and `θ` (just before an RFQ, [`Flavor::AtRfq`]). They are tied by
//! `θ̃(q) = −ψ(q)/(r+Λ) + γ·θ(q)` with `γ = Λ/(r+Λ)`.

use std::path::Path;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::InventoryGrid;
use crate::model::{MarketSpec, RiskLimits, Side};

/// Largest grid solved by banded elimination; bigger grids are iterated.
pub const DIRECT_SOLVE_MAX_POINTS: usize = 10_000;
/// Hard cap on grid size for any exact solver.
pub const MAX_GRID_POINTS: usize = 10_000_000;
/// Sup-norm target for the linear Bellman residual.
pub const EVALUATION_TOL: f64 = 1e-9;

const PARALLEL_MIN_POINTS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flavor {
    /// `θ̃`, the value at an arbitrary time.
    AtAnyTime,
    /// `θ`, the value just before an RFQ arrives.
    AtRfq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    pub grid: InventoryGrid,
    pub values: Vec<f64>,
    pub flavor: Flavor,
}

impl ValueTable {
    pub fn constant(grid: InventoryGrid, value: f64, flavor: Flavor) -> Self {
        let values = vec![value; grid.len()];
        Self { grid, values, flavor }
    }

    pub fn at(&self, units: &[i32]) -> Result<f64> {
        Ok(self.values[self.grid.index(units)?])
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn span(&self) -> f64 {
        let (lo, hi) = min_max(&self.values);
        hi - lo
    }

    pub fn sup_distance(&self, other: &ValueTable) -> f64 {
        sup_distance(&self.values, &other.values)
    }

    /// Sup-norm distance after removing the best additive constant.
    pub fn aligned_distance(&self, other: &ValueTable) -> f64 {
        let diff: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        let (lo, hi) = min_max(&diff);
        0.5 * (hi - lo)
    }

    /// One row per grid point: `n1..nd,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.grid.dim()).map(|i| format!("n{i}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (k, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self.grid.state(k).iter().map(|n| n.to_string()).collect();
            row.push(format!("{v}"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Quotes and fill probabilities per bond and side on every grid point. Entries
/// for blocked sides (bid at `+limit`, ask at `−limit`) hold `NaN`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    pub grid: InventoryGrid,
    deltas: Vec<f64>,
    probs: Vec<f64>,
}

impl PolicyTable {
    fn slot(&self, bond: usize, side: Side, idx: usize) -> usize {
        let s = match side {
            Side::Bid => 0,
            Side::Ask => 1,
        };
        (2 * bond + s) * self.grid.len() + idx
    }

    /// Builds a policy from a quote function of `(bond, side, units)`.
    pub fn from_quotes<F>(market: &MarketSpec, limits: &RiskLimits, quote: F) -> Result<Self>
    where
        F: Fn(usize, Side, &[i32]) -> f64,
    {
        check_dims(market, limits)?;
        let grid = InventoryGrid::checked(limits, MAX_GRID_POINTS)?;
        let n = grid.len();
        let mut deltas = vec![f64::NAN; 2 * market.dim() * n];
        let mut probs = vec![f64::NAN; 2 * market.dim() * n];
        let mut units = vec![0; market.dim()];
        for idx in 0..n {
            grid.state_into(idx, &mut units);
            for (i, b) in market.bonds.iter().enumerate() {
                for (s, side) in Side::BOTH.into_iter().enumerate() {
                    if grid.neighbor(idx, i, side).is_some() {
                        let d = quote(i, side, &units);
                        deltas[(2 * i + s) * n + idx] = d;
                        probs[(2 * i + s) * n + idx] = b.curve.prob(d);
                    }
                }
            }
        }
        Ok(Self { grid, deltas, probs })
    }

    /// Myopic quote on every admissible side.
    pub fn myopic(market: &MarketSpec, limits: &RiskLimits) -> Result<Self> {
        let quotes = market.bonds.iter().map(|b| b.curve.myopic_quote()).collect::<Result<Vec<_>>>()?;
        Self::from_quotes(market, limits, |i, _, _| quotes[i])
    }

    /// Infinite quotes: no fill ever happens.
    pub fn no_trade(market: &MarketSpec, limits: &RiskLimits) -> Result<Self> {
        let mut p = Self::from_quotes(market, limits, |_, _, _| f64::INFINITY)?;
        for v in &mut p.probs {
            if !v.is_nan() {
                *v = 0.0;
            }
        }
        Ok(p)
    }

    /// Quote at grid index `idx`, `None` when the side is blocked.
    #[inline]
    pub fn delta(&self, bond: usize, side: Side, idx: usize) -> Option<f64> {
        let v = self.deltas[self.slot(bond, side, idx)];
        (!v.is_nan()).then_some(v)
    }

    #[inline]
    pub fn prob(&self, bond: usize, side: Side, idx: usize) -> Option<f64> {
        let v = self.probs[self.slot(bond, side, idx)];
        (!v.is_nan()).then_some(v)
    }

    pub fn delta_at(&self, bond: usize, side: Side, units: &[i32]) -> Result<Option<f64>> {
        Ok(self.delta(bond, side, self.grid.index(units)?))
    }

    pub fn prob_at(&self, bond: usize, side: Side, units: &[i32]) -> Result<Option<f64>> {
        Ok(self.prob(bond, side, self.grid.index(units)?))
    }

    /// `(p, p·δ)` with the product taken as zero when `p = 0`.
    #[inline]
    fn fill_and_spread(&self, bond: usize, side: Side, idx: usize) -> Option<(f64, f64)> {
        let k = self.slot(bond, side, idx);
        let p = self.probs[k];
        if p.is_nan() {
            None
        } else if p == 0.0 {
            Some((0.0, 0.0))
        } else {
            Some((p, p * self.deltas[k]))
        }
    }

    /// Columns `n1..nd`, then `delta_bid_i,prob_bid_i,delta_ask_i,prob_ask_i`
    /// per bond (empty when blocked).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.grid.dim();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=d).map(|i| format!("n{i}")).collect();
        for i in 1..=d {
            for side in Side::BOTH {
                header.push(format!("delta_{side}_{i}"));
                header.push(format!("prob_{side}_{i}"));
            }
        }
        w.write_record(&header)?;
        for idx in 0..self.grid.len() {
            let mut row: Vec<String> = self.grid.state(idx).iter().map(|n| n.to_string()).collect();
            for i in 0..d {
                for side in Side::BOTH {
                    row.push(self.delta(i, side, idx).map(|v| format!("{v}")).unwrap_or_default());
                    row.push(self.prob(i, side, idx).map(|v| format!("{v}")).unwrap_or_default());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_dims(market: &MarketSpec, limits: &RiskLimits) -> Result<()> {
    if limits.dim() != market.dim() {
        return Err(Error::DimensionMismatch { expected: market.dim(), got: limits.dim() });
    }
    if limits.as_slice().iter().any(|&l| l < 0) {
        return Err(Error::InvalidParameter("risk limits must be nonnegative".into()));
    }
    Ok(())
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn penalties(market: &MarketSpec, grid: &InventoryGrid) -> Vec<f64> {
    (0..grid.len()).map(|k| market.penalty_at(&grid.state(k))).collect()
}

fn map_grid<F>(n: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if n >= PARALLEL_MIN_POINTS {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Residual of the linear Bellman equation
/// `−rθ̃ − ψ + Σ λ f(δ)(Δδ + θ̃(q′) − θ̃(q)) = 0` at every grid point.
pub fn evaluation_residual(market: &MarketSpec, policy: &PolicyTable, table: &ValueTable) -> Vec<f64> {
    let grid = &policy.grid;
    let v = &table.values;
    map_grid(grid.len(), |idx| {
        let units = grid.state(idx);
        let mut acc = -market.discount * v[idx] - market.penalty_at(&units);
        for (i, b) in market.bonds.iter().enumerate() {
            for side in Side::BOTH {
                if let (Some(j), Some((p, pd))) = (grid.neighbor(idx, i, side), policy.fill_and_spread(i, side, idx)) {
                    acc += b.lambda(side) * (b.trade_size * pd + p * (v[j] - v[idx]));
                }
            }
        }
        acc
    })
}

/// Solves the linear Bellman equation of `policy` for `θ̃`.
pub fn policy_evaluation(market: &MarketSpec, policy: &PolicyTable) -> Result<ValueTable> {
    let grid = policy.grid.clone();
    let n = grid.len();
    if n > MAX_GRID_POINTS {
        return Err(Error::GridTooLarge { points: n, limit: MAX_GRID_POINTS });
    }
    if n <= DIRECT_SOLVE_MAX_POINTS {
        return Ok(evaluate_direct(market, policy));
    }
    let psi = penalties(market, &grid);
    let total = market.total_rate();
    let gamma = market.gamma_rl();
    let rate = market.discount + total;
    let op = |w: &[f64]| -> Vec<f64> {
        map_grid(n, |idx| {
            let mut theta = w[idx];
            for (i, b) in market.bonds.iter().enumerate() {
                for side in Side::BOTH {
                    if let (Some(j), Some((p, pd))) = (grid.neighbor(idx, i, side), policy.fill_and_spread(i, side, idx)) {
                        theta += b.lambda(side) / total * (b.trade_size * pd + p * (w[j] - w[idx]));
                    }
                }
            }
            -psi[idx] / rate + gamma * theta
        })
    };
    // Error bound `tol` on θ̃ translates into a residual below r·tol + O(Λ·tol).
    let tol = EVALUATION_TOL / (market.discount + 2.0 * total);
    let out = relative_iteration(op, vec![0.0; n], gamma, tol, usize::MAX)?;
    Ok(ValueTable { grid, values: out.values, flavor: Flavor::AtAnyTime })
}

fn evaluate_direct(market: &MarketSpec, policy: &PolicyTable) -> ValueTable {
    let grid = &policy.grid;
    let n = grid.len();
    let band = if grid.dim() == 0 { 0 } else { grid.stride(0) };
    let mut a = BandMatrix::zeros(n, band);
    let mut rhs = vec![0.0; n];
    let mut units = vec![0; grid.dim()];
    for idx in 0..n {
        grid.state_into(idx, &mut units);
        let mut diag = market.discount;
        rhs[idx] = -market.penalty_at(&units);
        for (i, b) in market.bonds.iter().enumerate() {
            for side in Side::BOTH {
                if let (Some(j), Some((p, pd))) = (grid.neighbor(idx, i, side), policy.fill_and_spread(i, side, idx)) {
                    let l = b.lambda(side);
                    diag += l * p;
                    *a.get_mut(idx, j) -= l * p;
                    rhs[idx] += l * b.trade_size * pd;
                }
            }
        }
        *a.get_mut(idx, idx) = diag;
    }
    a.factor();
    let mut table = ValueTable { grid: grid.clone(), values: a.solve(rhs), flavor: Flavor::AtAnyTime };
    // Iterative refinement on the difference-form residual keeps full precision
    // even though the level of θ̃ is ~Λ/r times its spread.
    for _ in 0..3 {
        let res = evaluation_residual(market, policy, &table);
        let worst = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if worst < 1e-13 {
            break;
        }
        let corr = a.solve(res);
        for (v, c) in table.values.iter_mut().zip(corr) {
            *v += c;
        }
    }
    table
}

/// Square band matrix with half-bandwidth `band`, factored in place by
/// Gaussian elimination without pivoting (callers pass diagonally dominant
/// M-matrices).
struct BandMatrix {
    n: usize,
    band: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    fn zeros(n: usize, band: usize) -> Self {
        Self { n, band, data: vec![0.0; n * (2 * band + 1)] }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (2 * self.band + 1) + self.band + j - i]
    }

    #[inline]
    fn get_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let w = 2 * self.band + 1;
        &mut self.data[i * w + self.band + j - i]
    }

    /// LU in place: multipliers stored below the diagonal.
    fn factor(&mut self) {
        let (n, b) = (self.n, self.band);
        for k in 0..n {
            let pivot = self.at(k, k);
            let hi = (k + b + 1).min(n);
            for i in k + 1..hi {
                let m = self.at(i, k) / pivot;
                if m == 0.0 {
                    continue;
                }
                *self.get_mut(i, k) = m;
                for j in k + 1..hi {
                    let u = self.at(k, j);
                    if u != 0.0 {
                        *self.get_mut(i, j) -= m * u;
                    }
                }
            }
        }
    }

    fn solve(&self, mut x: Vec<f64>) -> Vec<f64> {
        let (n, b) = (self.n, self.band);
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let mut s = x[i];
            for k in lo..i {
                s -= self.at(i, k) * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + b + 1).min(n);
            let mut s = x[i];
            for k in i + 1..hi {
                s -= self.at(i, k) * x[k];
            }
            x[i] = s / self.at(i, i);
        }
        x
    }
}

/// `θ̃ → θ` through the coupling `θ = (θ̃ + ψ/(r+Λ))/γ`.
pub fn to_rfq_value(market: &MarketSpec, table: &ValueTable) -> Result<ValueTable> {
    expect_flavor(table, Flavor::AtAnyTime)?;
    let psi = penalties(market, &table.grid);
    let rate = market.discount + market.total_rate();
    let gamma = market.gamma_rl();
    let values = table.values.iter().zip(&psi).map(|(v, p)| (v + p / rate) / gamma).collect();
    Ok(ValueTable { grid: table.grid.clone(), values, flavor: Flavor::AtRfq })
}

/// `θ → θ̃`: `θ̃ = −ψ/(r+Λ) + γθ` (the operator Γ₁).
pub fn to_any_time_value(market: &MarketSpec, table: &ValueTable) -> Result<ValueTable> {
    expect_flavor(table, Flavor::AtRfq)?;
    Ok(ValueTable { grid: table.grid.clone(), values: gamma1(market, &table.grid, &table.values), flavor: Flavor::AtAnyTime })
}

/// `θ` from `θ̃` through the policy: `θ(q) = E[f(δ)(Δδ + θ̃(q′)) + (1 − f(δ))θ̃(q)]`.
/// Agrees with [`to_rfq_value`] when `θ̃` is the value of `policy`.
pub fn rfq_value_from_policy(market: &MarketSpec, table: &ValueTable, policy: &PolicyTable) -> Result<ValueTable> {
    expect_flavor(table, Flavor::AtAnyTime)?;
    let grid = &policy.grid;
    let total = market.total_rate();
    let v = &table.values;
    let values = map_grid(grid.len(), |idx| {
        let mut theta = v[idx];
        for (i, b) in market.bonds.iter().enumerate() {
            for side in Side::BOTH {
                if let (Some(j), Some((p, pd))) = (grid.neighbor(idx, i, side), policy.fill_and_spread(i, side, idx)) {
                    theta += b.lambda(side) / total * (b.trade_size * pd + p * (v[j] - v[idx]));
                }
            }
        }
        theta
    });
    Ok(ValueTable { grid: grid.clone(), values, flavor: Flavor::AtRfq })
}

fn expect_flavor(table: &ValueTable, flavor: Flavor) -> Result<()> {
    if table.flavor != flavor {
        return Err(Error::InvalidParameter(format!("expected a {flavor:?} table, got {:?}", table.flavor)));
    }
    Ok(())
}

fn gamma1(market: &MarketSpec, grid: &InventoryGrid, theta: &[f64]) -> Vec<f64> {
    let rate = market.discount + market.total_rate();
    let gamma = market.gamma_rl();
    map_grid(grid.len(), |idx| -market.penalty_at(&grid.state(idx)) / rate + gamma * theta[idx])
}

/// `Γ₂(θ̃)(q) = Σ P(i,s)[θ̃(q) + Δⁱ h((θ̃(q) − θ̃(q′))/Δⁱ)]`, blocked sides contributing `θ̃(q)`.
fn gamma2(market: &MarketSpec, grid: &InventoryGrid, tilde: &[f64]) -> Result<Vec<f64>> {
    let total = market.total_rate();
    let out: Vec<Result<f64>> = if grid.len() >= PARALLEL_MIN_POINTS {
        (0..grid.len()).into_par_iter().map(|idx| gamma2_at(market, grid, tilde, total, idx)).collect()
    } else {
        (0..grid.len()).map(|idx| gamma2_at(market, grid, tilde, total, idx)).collect()
    };
    out.into_iter().collect()
}

fn gamma2_at(market: &MarketSpec, grid: &InventoryGrid, tilde: &[f64], total: f64, idx: usize) -> Result<f64> {
    let mut theta = tilde[idx];
    for (i, b) in market.bonds.iter().enumerate() {
        for side in Side::BOTH {
            if let Some(j) = grid.neighbor(idx, i, side) {
                let p = (tilde[idx] - tilde[j]) / b.trade_size;
                theta += b.lambda(side) / total * b.trade_size * b.curve.spread_optimum(p)?.value;
            }
        }
    }
    Ok(theta)
}

/// The per-RFQ Bellman operator `Γ₂∘Γ₁` on a `θ` table.
pub fn bellman_operator(market: &MarketSpec, table: &ValueTable) -> Result<ValueTable> {
    expect_flavor(table, Flavor::AtRfq)?;
    let tilde = gamma1(market, &table.grid, &table.values);
    Ok(ValueTable { grid: table.grid.clone(), values: gamma2(market, &table.grid, &tilde)?, flavor: Flavor::AtRfq })
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug)]
pub struct IterationReport {
    pub table: ValueTable,
    pub iterations: usize,
    /// Guaranteed sup-norm distance to the fixed point at exit.
    pub error_bound: f64,
}

struct RelativeOutcome {
    values: Vec<f64>,
    iterations: usize,
    error_bound: f64,
}

/// Fixed point of a `γ`-contraction `T` with `T(u + c) = T(u) + γc`.
///
/// Iterates `w ← T(w) − g` where `g` is the midpoint of the range of
/// `T(w) − w`; the fixed point then lies within `span(T(w) − w)/(2(1 − γ))`
/// of `w + g/(1 − γ)`.
fn relative_iteration<F>(op: F, mut w: Vec<f64>, gamma: f64, tol: f64, max_iter: usize) -> Result<RelativeOutcome>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut best = f64::INFINITY;
    let mut stalled = 0usize;
    let mut k = 0usize;
    loop {
        let tw = op(&w);
        let (lo, hi) = tw.iter().zip(&w).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
            let d = a - b;
            (lo.min(d), hi.max(d))
        });
        let g = 0.5 * (lo + hi);
        let bound = 0.5 * (hi - lo) / (1.0 - gamma);
        k += 1;
        if bound < tol || k >= max_iter || stalled > 2000 {
            if bound >= tol {
                log::warn!("relative iteration stopped at bound {bound:e} (target {tol:e}) after {k} sweeps");
            }
            let shift = g / (1.0 - gamma);
            let values = w.iter().map(|v| v + shift).collect();
            return Ok(RelativeOutcome { values, iterations: k, error_bound: bound });
        }
        if bound < 0.999 * best {
            best = bound;
            stalled = 0;
        } else {
            stalled += 1;
        }
        w = tw.into_iter().map(|v| v - g).collect();
    }
}

/// Optimal `θ` by (relative) value iteration on `Γ₂∘Γ₁` from `θ₀ ≡ 0`, stopped
/// once the distance to the fixed point is guaranteed below `tol`.
pub fn value_iteration(market: &MarketSpec, limits: &RiskLimits, tol: f64) -> Result<IterationReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    check_dims(market, limits)?;
    let grid = InventoryGrid::checked(limits, MAX_GRID_POINTS)?;
    let gamma = market.gamma_rl();
    let failure = std::sync::Mutex::new(None);
    let op = |w: &[f64]| -> Vec<f64> {
        let tilde = gamma1(market, &grid, w);
        match gamma2(market, &grid, &tilde) {
            Ok(v) => v,
            Err(e) => {
                *failure.lock().unwrap() = Some(e);
                vec![0.0; w.len()]
            }
        }
    };
    let out = relative_iteration(op, vec![0.0; grid.len()], gamma, tol, usize::MAX)?;
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(IterationReport {
        table: ValueTable { grid, values: out.values, flavor: Flavor::AtRfq },
        iterations: out.iterations,
        error_bound: out.error_bound,
    })
}

/// Textbook value iteration `θ ← Γ₂∘Γ₁(θ)` from `θ₀ ≡ 0`, stopping when
/// `‖θₖ₊₁ − θₖ‖∞ < tol·(1 − γ)`.
pub fn value_iteration_plain(market: &MarketSpec, limits: &RiskLimits, tol: f64, max_iter: usize) -> Result<IterationReport> {
    check_dims(market, limits)?;
    let grid = InventoryGrid::checked(limits, MAX_GRID_POINTS)?;
    let gamma = market.gamma_rl();
    let mut table = ValueTable::constant(grid, 0.0, Flavor::AtRfq);
    for k in 1..=max_iter {
        let next = bellman_operator(market, &table)?;
        let step = next.sup_distance(&table);
        table = next;
        if step < tol * (1.0 - gamma) {
            return Ok(IterationReport { table, iterations: k, error_bound: step * gamma / (1.0 - gamma) });
        }
    }
    Err(Error::InvalidParameter(format!("value iteration did not reach {tol:e} in {max_iter} sweeps")))
}

/// Greedy quotes `δ*(p)` at `p = (θ̃(q) − θ̃(q′))/Δ` for a `θ` table.
pub fn greedy_policy(market: &MarketSpec, table: &ValueTable) -> Result<PolicyTable> {
    expect_flavor(table, Flavor::AtRfq)?;
    let grid = &table.grid;
    let tilde = gamma1(market, grid, &table.values);
    let limits = grid.limits();
    let mut policy = PolicyTable::from_quotes(market, &limits, |_, _, _| 0.0)?;
    let n = grid.len();
    for (i, b) in market.bonds.iter().enumerate() {
        for (s, side) in Side::BOTH.into_iter().enumerate() {
            for idx in 0..n {
                if let Some(j) = grid.neighbor(idx, i, side) {
                    let d = b.curve.spread_optimum((tilde[idx] - tilde[j]) / b.trade_size)?.delta;
                    policy.deltas[(2 * i + s) * n + idx] = d;
                    policy.probs[(2 * i + s) * n + idx] = b.curve.prob(d);
                }
            }
        }
    }
    Ok(policy)
}

/// Stationary law of the inventory observed at RFQ times.
#[derive(Clone, Debug)]
pub struct Stationary {
    pub grid: InventoryGrid,
    pub mass: Vec<f64>,
    /// `‖m′P − m′‖₁`.
    pub residual: f64,
}

impl Stationary {
    pub fn at(&self, units: &[i32]) -> Result<f64> {
        Ok(self.mass[self.grid.index(units)?])
    }
}

/// Transitions `(to, prob)` of the embedded RFQ chain, self-loops excluded.
fn chain_moves(market: &MarketSpec, policy: &PolicyTable, idx: usize) -> Vec<(usize, f64)> {
    let total = market.total_rate();
    let mut out = Vec::with_capacity(2 * market.dim());
    for (i, b) in market.bonds.iter().enumerate() {
        for side in Side::BOTH {
            if let (Some(j), Some(p)) = (policy.grid.neighbor(idx, i, side), policy.prob(i, side, idx)) {
                if p > 0.0 {
                    out.push((j, b.lambda(side) / total * p));
                }
            }
        }
    }
    out
}

/// Stationary distribution of the inventory chain induced by `policy`. Transient
/// states receive zero mass; more than one closed class is an error.
pub fn stationary_distribution(market: &MarketSpec, policy: &PolicyTable) -> Result<Stationary> {
    stationary_impl(market, policy, None)
}

/// Long-run law of the chain started from `start`: only closed classes
/// reachable from `start` are considered.
pub fn stationary_distribution_from(market: &MarketSpec, policy: &PolicyTable, start: &[i32]) -> Result<Stationary> {
    let idx = policy.grid.index(start)?;
    stationary_impl(market, policy, Some(idx))
}

fn stationary_impl(market: &MarketSpec, policy: &PolicyTable, start: Option<usize>) -> Result<Stationary> {
    let grid = policy.grid.clone();
    let n = grid.len();
    let moves: Vec<Vec<(usize, f64)>> = (0..n).map(|k| chain_moves(market, policy, k)).collect();

    let mut graph = DiGraph::<(), ()>::with_capacity(n, 2 * market.dim() * n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (k, mv) in moves.iter().enumerate() {
        for &(j, _) in mv {
            graph.add_edge(nodes[k], nodes[j], ());
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut component = vec![0usize; n];
    for (c, scc) in sccs.iter().enumerate() {
        for node in scc {
            component[node.index()] = c;
        }
    }
    let reachable = match start {
        Some(s) => {
            let mut seen = vec![false; n];
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(k) = stack.pop() {
                for &(j, _) in &moves[k] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen
        }
        None => vec![true; n],
    };
    let mut closed: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(_, scc)| reachable[scc[0].index()])
        .filter(|(c, scc)| scc.iter().all(|v| moves[v.index()].iter().all(|&(j, _)| component[j] == *c)))
        .map(|(_, scc)| {
            let mut v: Vec<usize> = scc.iter().map(|x| x.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    if closed.len() != 1 {
        closed.sort();
        return Err(Error::ReducibleChain { classes: closed });
    }
    let class = closed.pop().unwrap();

    let mut local = vec![usize::MAX; n];
    for (k, &g) in class.iter().enumerate() {
        local[g] = k;
    }
    let m = class.len();
    let sub: Vec<Vec<(usize, f64)>> = class.iter().map(|&g| moves[g].iter().map(|&(j, p)| (local[j], p)).collect()).collect();
    let pi = if m <= DIRECT_SOLVE_MAX_POINTS { gth_banded(&sub)? } else { power_iteration(&sub) };

    let mut mass = vec![0.0; n];
    for (k, &g) in class.iter().enumerate() {
        mass[g] = pi[k];
    }
    let residual = invariance_residual(&moves, &mass);
    Ok(Stationary { grid, mass, residual })
}

fn invariance_residual(moves: &[Vec<(usize, f64)>], mass: &[f64]) -> f64 {
    let mut next = mass.to_vec();
    for (k, mv) in moves.iter().enumerate() {
        for &(j, p) in mv {
            next[k] -= mass[k] * p;
            next[j] += mass[k] * p;
        }
    }
    next.iter().zip(mass).map(|(a, b)| (a - b).abs()).sum()
}

/// Grassmann–Taksar–Heyman state reduction on a banded irreducible chain.
fn gth_banded(moves: &[Vec<(usize, f64)>]) -> Result<Vec<f64>> {
    let n = moves.len();
    let band = moves
        .iter()
        .enumerate()
        .flat_map(|(k, mv)| mv.iter().map(move |&(j, _)| k.abs_diff(j)))
        .max()
        .unwrap_or(0);
    let mut a = BandMatrix::zeros(n, band);
    for (k, mv) in moves.iter().enumerate() {
        for &(j, p) in mv {
            *a.get_mut(k, j) += p;
        }
    }
    let mut out_sum = vec![0.0; n];
    for k in (1..n).rev() {
        let lo = k.saturating_sub(band);
        let s: f64 = (lo..k).map(|j| a.at(k, j)).sum();
        if !(s > 0.0) {
            return Err(Error::InvalidParameter("chain is not irreducible".into()));
        }
        out_sum[k] = s;
        for i in lo..k {
            let f = a.at(i, k) / s;
            if f == 0.0 {
                continue;
            }
            for j in lo..k {
                if j != i {
                    let v = a.at(k, j);
                    if v != 0.0 {
                        *a.get_mut(i, j) += f * v;
                    }
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        let lo = k.saturating_sub(band);
        pi[k] = (lo..k).map(|i| pi[i] * a.at(i, k)).sum::<f64>() / out_sum[k];
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    Ok(pi)
}

fn power_iteration(moves: &[Vec<(usize, f64)>]) -> Vec<f64> {
    let n = moves.len();
    let mut m = vec![1.0 / n as f64; n];
    for _ in 0..10_000_000 {
        let mut next = m.clone();
        for (k, mv) in moves.iter().enumerate() {
            for &(j, p) in mv {
                // Lazy chain: same invariant law, no periodicity.
                next[k] -= 0.5 * m[k] * p;
                next[j] += 0.5 * m[k] * p;
            }
        }
        let diff: f64 = next.iter().zip(&m).map(|(a, b)| (a - b).abs()).sum();
        m = next;
        if diff < 1e-14 {
            break;
        }
    }
    let total: f64 = m.iter().sum();
    m.iter_mut().for_each(|v| *v /= total);
    m
}

/// Per-RFQ expected reward at every grid point:
/// `Σ P(i,s) f(δ)Δδ − ψ(q)/Λ`.
pub fn reward_per_rfq(market: &MarketSpec, policy: &PolicyTable) -> Vec<f64> {
    let grid = &policy.grid;
    let total = market.total_rate();
    (0..grid.len())
        .map(|idx| {
            let mut r = -market.penalty_at(&grid.state(idx)) / total;
            for (i, b) in market.bonds.iter().enumerate() {
                for side in Side::BOTH {
                    if let Some((_, pd)) = policy.fill_and_spread(i, side, idx) {
                        r += b.lambda(side) / total * b.trade_size * pd;
                    }
                }
            }
            r
        })
        .collect()
}

/// Long-run average reward per RFQ under `policy` starting from a flat
/// inventory (the stationary law when the chain is irreducible).
pub fn average_reward_per_rfq(market: &MarketSpec, policy: &PolicyTable) -> Result<f64> {
    let stat = stationary_distribution_from(market, policy, &vec![0; market.dim()])?;
    Ok(reward_per_rfq(market, policy).iter().zip(&stat.mass).map(|(r, m)| r * m).sum())
}

/// Exact optimal solution of a small market: `θ`, greedy policy and average reward.
#[derive(Clone, Debug)]
pub struct ExactSolution {
    pub theta: ValueTable,
    pub policy: PolicyTable,
    pub average_reward: f64,
    pub iterations: usize,
}

/// Value iteration, greedy extraction and the exact average reward in one call.
pub fn solve_exact(market: &MarketSpec, limits: &RiskLimits, tol: f64) -> Result<ExactSolution> {
    let report = value_iteration(market, limits, tol)?;
    let policy = greedy_policy(market, &report.table)?;
    let average_reward = average_reward_per_rfq(market, &policy)?;
    Ok(ExactSolution { theta: report.table, policy, average_reward, iterations: report.iterations })
}
