//! Implicit finite-difference scheme with operator splitting for the
//! stationary HJB equation, marched backward in time until stationary.

use crate::error::{Error, Result};
use crate::grid::InventoryGrid;
use crate::intensity::{SpreadFn, SpreadTable};
use crate::model::{MarketSpec, RiskLimits, Side};
use crate::tabular::{Flavor, ValueTable, MAX_GRID_POINTS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdConfig {
    /// Horizon `T`.
    pub horizon: f64,
    /// Time step `τ`.
    pub tau: f64,
    /// Sup-norm bound on each stage equation's residual.
    pub newton_tol: f64,
    /// Maximum Gauss-Seidel sweeps per stage.
    pub newton_max_iter: usize,
    /// Stop when `‖θₖ − θₖ₊₁‖∞/τ` falls below this.
    pub stationarity_tol: f64,
    /// Nodes of the Hamiltonian interpolation table; `0` evaluates directly.
    pub table_nodes: usize,
}

impl FdConfig {
    /// `τ = 0.5`, `T = 20/r`, stationarity tolerance `1e-6·V/r`, where `V` is
    /// the largest penalty on the grid (or the largest myopic reward rate
    /// when the penalty vanishes).
    pub fn for_market(market: &MarketSpec, limits: &RiskLimits) -> Result<Self> {
        let scale = value_scale(market, limits)?;
        Ok(Self {
            horizon: 20.0 / market.discount,
            tau: 0.5,
            newton_tol: (1e-12 * scale).max(1e-12),
            newton_max_iter: 200,
            stationarity_tol: 1e-6 * scale,
            table_nodes: 20_001,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tau > 0.0
            && self.horizon >= self.tau
            && self.newton_tol > 0.0
            && self.stationarity_tol > 0.0
            && self.newton_max_iter > 0;
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid FD configuration {self:?}")));
        }
        Ok(())
    }
}

/// `max ψ / r` on the grid, or the myopic reward rate over `r` when `ψ ≡ 0`.
pub fn value_scale(market: &MarketSpec, limits: &RiskLimits) -> Result<f64> {
    let grid = InventoryGrid::checked(limits, MAX_GRID_POINTS)?;
    let max_psi = (0..grid.len()).map(|k| market.penalty_at(&grid.state(k))).fold(0.0, f64::max);
    if max_psi > 0.0 {
        return Ok(max_psi / market.discount);
    }
    let mut rate: f64 = 0.0;
    for b in &market.bonds {
        let d = b.curve.myopic_quote()?;
        rate = rate.max((b.lambda_bid + b.lambda_ask) * b.trade_size * d * b.curve.prob(d));
    }
    Ok(rate / market.discount)
}

/// Why the backward march ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Stationary,
    HorizonExhausted,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub table: ValueTable,
    pub stop: StopReason,
    pub steps: usize,
    /// `‖θₖ − θₖ₊₁‖∞/τ` at the last step.
    pub last_change: f64,
    /// Sup-norm residual of the stationary HJB equation at the result.
    pub hjb_residual: f64,
    /// Steps that needed the halved time step.
    pub halved_steps: usize,
}

/// Per-bond Hamiltonian evaluators `h(p)` and `h′(p)`.
struct Hamiltonians {
    spread: Vec<SpreadFn>,
}

impl Hamiltonians {
    fn new(market: &MarketSpec, nodes: usize) -> Result<Self> {
        let spread = market
            .bonds
            .iter()
            .map(|b| {
                if nodes < 2 {
                    return Ok(SpreadFn::Direct(b.curve));
                }
                let s = b.curve.mu.abs() + b.curve.sigma;
                let h0 = b.curve.spread_optimum(0.0)?.value;
                match SpreadTable::build_checked(b.curve, -50.0 * s, 50.0 * s, nodes, 1e-9 * h0) {
                    Ok(t) => Ok(SpreadFn::Table(t)),
                    Err(Error::InterpolationError { error, tol }) => {
                        log::warn!("{}: table error {error:e} > {tol:e}, evaluating directly", b.id);
                        Ok(SpreadFn::Direct(b.curve))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spread })
    }
}

/// Reusable solver state for one market and grid.
pub struct FdSolver<'a> {
    market: &'a MarketSpec,
    grid: InventoryGrid,
    psi: Vec<f64>,
    ham: Hamiltonians,
    config: FdConfig,
}

impl<'a> FdSolver<'a> {
    pub fn new(market: &'a MarketSpec, limits: &RiskLimits, config: FdConfig) -> Result<Self> {
        config.validate()?;
        if limits.dim() != market.dim() {
            return Err(Error::DimensionMismatch { expected: market.dim(), got: limits.dim() });
        }
        let grid = InventoryGrid::checked(limits, MAX_GRID_POINTS)?;
        let psi = (0..grid.len()).map(|k| market.penalty_at(&grid.state(k))).collect();
        let ham = Hamiltonians::new(market, config.table_nodes)?;
        Ok(Self { market, grid, psi, ham, config })
    }

    pub fn grid(&self) -> &InventoryGrid {
        &self.grid
    }

    pub fn config(&self) -> &FdConfig {
        &self.config
    }

    /// `Σ_s 1_s Δλ h(p_s)` and its derivative w.r.t. `y(idx)` for bond `i`.
    #[inline]
    fn bond_terms(&self, y: &[f64], idx: usize, i: usize) -> Result<(f64, f64)> {
        let b = &self.market.bonds[i];
        let (mut h, mut dh) = (0.0, 0.0);
        for side in Side::BOTH {
            if let Some(j) = self.grid.neighbor(idx, i, side) {
                let (v, dv) = self.ham.spread[i].eval((y[idx] - y[j]) / b.trade_size)?;
                let l = b.lambda(side);
                h += b.trade_size * l * v;
                dh += l * dv;
            }
        }
        Ok((h, dh))
    }

    /// Solves `(prev − y)/τ + H_i(y) = 0` by Gauss-Seidel sweeps with scalar
    /// Newton per point, starting from `y`.
    fn stage(&self, prev: &[f64], y: &mut [f64], i: usize, tau: f64) -> Result<bool> {
        let n = self.grid.len();
        let tol = self.config.newton_tol;
        for _ in 0..self.config.newton_max_iter {
            let mut worst: f64 = 0.0;
            for idx in 0..n {
                let (h, _) = self.bond_terms(y, idx, i)?;
                worst = worst.max(((prev[idx] - y[idx]) / tau + h).abs());
            }
            if worst < tol {
                return Ok(true);
            }
            for pass in 0..2 {
                for k in 0..n {
                    let idx = if pass == 0 { k } else { n - 1 - k };
                    for _ in 0..30 {
                        let (h, dh) = self.bond_terms(y, idx, i)?;
                        let g = (prev[idx] - y[idx]) / tau + h;
                        if g.abs() < 0.1 * tol {
                            break;
                        }
                        y[idx] -= g / (dh - 1.0 / tau);
                    }
                }
            }
        }
        Ok(false)
    }

    fn try_step(&self, next: &[f64], guess: &mut [Vec<f64>], tau: f64) -> Result<std::result::Result<Vec<f64>, (usize, f64)>> {
        let r = self.market.discount;
        let mut prev: Vec<f64> = next.iter().zip(&self.psi).map(|(v, p)| (v - tau * p) / (1.0 + r * tau)).collect();
        for i in 0..self.market.dim() {
            let mut y = if guess[i].len() == prev.len() { guess[i].clone() } else { prev.clone() };
            if !self.stage(&prev, &mut y, i, tau)? {
                let res = self.stage_residual(&prev, &y, i, tau)?;
                return Ok(Err((i + 1, res)));
            }
            guess[i] = y.clone();
            prev = y;
        }
        Ok(Ok(prev))
    }

    fn stage_residual(&self, prev: &[f64], y: &[f64], i: usize, tau: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for idx in 0..self.grid.len() {
            let (h, _) = self.bond_terms(y, idx, i)?;
            worst = worst.max(((prev[idx] - y[idx]) / tau + h).abs());
        }
        Ok(worst)
    }

    /// One backward step `θ̂ₖ₊₁ → θ̂ₖ`. Falls back to two half steps if a stage
    /// does not converge; returns whether that happened.
    fn step_inner(&self, next: &[f64], guess: &mut [Vec<f64>]) -> Result<(Vec<f64>, bool)> {
        let tau = self.config.tau;
        match self.try_step(next, guess, tau)? {
            Ok(v) => Ok((v, false)),
            Err(_) => {
                let mut half_guess = vec![Vec::new(); self.market.dim()];
                let mid = match self.try_step(next, &mut half_guess, 0.5 * tau)? {
                    Ok(v) => v,
                    Err((stage, residual)) => return Err(Error::NewtonFailure { stage, residual }),
                };
                match self.try_step(&mid, &mut half_guess, 0.5 * tau)? {
                    Ok(v) => {
                        guess.clone_from_slice(&half_guess);
                        Ok((v, true))
                    }
                    Err((stage, residual)) => Err(Error::NewtonFailure { stage, residual }),
                }
            }
        }
    }

    /// One splitting step from a `θ̃` table.
    pub fn step(&self, next: &ValueTable) -> Result<ValueTable> {
        if next.grid != self.grid {
            return Err(Error::DimensionMismatch { expected: self.grid.len(), got: next.grid.len() });
        }
        let mut guess = vec![Vec::new(); self.market.dim()];
        let (values, _) = self.step_inner(&next.values, &mut guess)?;
        Ok(ValueTable { grid: self.grid.clone(), values, flavor: Flavor::AtAnyTime })
    }

    /// Marches backward from `terminal` until stationary or `t = 0`.
    pub fn solve_from(&self, terminal: &ValueTable) -> Result<FdReport> {
        let max_steps = (self.config.horizon / self.config.tau).ceil() as usize;
        let mut theta = terminal.values.clone();
        let mut guess = vec![Vec::new(); self.market.dim()];
        let mut last_change = f64::INFINITY;
        let mut halved_steps = 0;
        let mut stop = StopReason::HorizonExhausted;
        let mut steps = 0;
        while steps < max_steps {
            let (next, halved) = self.step_inner(&theta, &mut guess)?;
            halved_steps += halved as usize;
            steps += 1;
            last_change = next.iter().zip(&theta).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / self.config.tau;
            theta = next;
            if last_change < self.config.stationarity_tol {
                stop = StopReason::Stationary;
                break;
            }
        }
        let table = ValueTable { grid: self.grid.clone(), values: theta, flavor: Flavor::AtAnyTime };
        let hjb_residual = self.hjb_residual(&table)?;
        if stop == StopReason::HorizonExhausted {
            log::warn!("horizon exhausted: last change {last_change:e}, HJB residual {hjb_residual:e}");
        }
        Ok(FdReport { table, stop, steps, last_change, hjb_residual, halved_steps })
    }

    /// Stationary solve from the terminal condition `θ̃ ≡ 0`.
    pub fn solve(&self) -> Result<FdReport> {
        self.solve_from(&ValueTable::constant(self.grid.clone(), 0.0, Flavor::AtAnyTime))
    }

    /// `sup_q |−rθ̃ − ψ + Σ 1 H(·)|`.
    pub fn hjb_residual(&self, table: &ValueTable) -> Result<f64> {
        let y = &table.values;
        let mut worst: f64 = 0.0;
        for idx in 0..self.grid.len() {
            let mut acc = -self.market.discount * y[idx] - self.psi[idx];
            for i in 0..self.market.dim() {
                acc += self.bond_terms(y, idx, i)?.0;
            }
            worst = worst.max(acc.abs());
        }
        Ok(worst)
    }
}

/// One splitting step of the scheme (builds a fresh solver).
pub fn splitting_step(market: &MarketSpec, theta_next: &ValueTable, config: &FdConfig) -> Result<ValueTable> {
    FdSolver::new(market, &theta_next.grid.limits(), *config)?.step(theta_next)
}

/// Stationary `θ̃` on the grid of `limits` from a zero terminal condition.
pub fn solve_stationary(market: &MarketSpec, limits: &RiskLimits, config: &FdConfig) -> Result<FdReport> {
    FdSolver::new(market, limits, *config)?.solve()
}
