//! Market primitives: bonds, inventory penalty, RFQ event law and the
//! per-RFQ discount factor.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::SuJohnsonCurve;

/// Side of an RFQ from the dealer's point of view. A bid fill buys one trade
/// size (inventory goes up), an ask fill sells one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Bid, Side::Ask];

    /// Inventory change, in units, when this side fills.
    #[inline]
    pub fn step(self) -> i32 {
        match self {
            Side::Bid => 1,
            Side::Ask => -1,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Bid => "bid",
            Side::Ask => "ask",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BondSpec {
    pub id: String,
    pub lambda_bid: f64,
    pub lambda_ask: f64,
    pub rfq_size_numeraire: f64,
    /// Number of bonds per trade (bonds assumed at par).
    pub trade_size: f64,
    pub curve: SuJohnsonCurve,
    /// Risk limit in units of `trade_size`.
    pub max_units: u32,
}

impl BondSpec {
    pub fn lambda(&self, side: Side) -> f64 {
        match side {
            Side::Bid => self.lambda_bid,
            Side::Ask => self.lambda_ask,
        }
    }

    fn validate(&self) -> Result<()> {
        self.curve.validate()?;
        if !(self.lambda_bid > 0.0 && self.lambda_ask > 0.0) {
            return Err(Error::InvalidParameter(format!("{}: RFQ intensities must be positive", self.id)));
        }
        if !(self.trade_size > 0.0) {
            return Err(Error::InvalidParameter(format!("{}: trade size must be positive", self.id)));
        }
        if self.max_units == 0 {
            return Err(Error::InvalidParameter(format!("{}: risk limit must be at least one unit", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    /// `ψ(q) = ½γ√(q′Σq)`
    StdDev,
    /// `ψ(q) = ½γ q′Σq`
    Variance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub gamma: f64,
}

impl PenaltySpec {
    pub fn std_dev(gamma: f64) -> Self {
        Self { kind: PenaltyKind::StdDev, gamma }
    }

    pub fn variance(gamma: f64) -> Self {
        Self { kind: PenaltyKind::Variance, gamma }
    }
}

/// Active risk limits, in units, one per bond.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RiskLimits(pub Vec<i32>);

impl RiskLimits {
    pub fn uniform(d: usize, units: i32) -> Self {
        Self(vec![units; d])
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, units: &[i32]) -> bool {
        units.len() == self.0.len() && units.iter().zip(&self.0).all(|(&n, &l)| n.abs() <= l)
    }

    /// Whether `side` may fill on `bond` at `units`: bids are blocked at `+limit`
    /// and asks at `−limit`.
    #[inline]
    pub fn admits(&self, units: &[i32], bond: usize, side: Side) -> bool {
        match side {
            Side::Bid => units[bond] < self.0[bond],
            Side::Ask => units[bond] > -self.0[bond],
        }
    }
}

/// Inventory in units of each bond's trade size.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InventoryState(pub Vec<i32>);

impl InventoryState {
    pub fn flat(d: usize) -> Self {
        Self(vec![0; d])
    }

    pub fn units(&self) -> &[i32] {
        &self.0
    }

    /// Moves by one unit of `bond` in the direction of `side`, respecting `limits`.
    pub fn apply_fill(&mut self, limits: &RiskLimits, bond: usize, side: Side) -> bool {
        if limits.admits(&self.0, bond, side) {
            self.0[bond] += side.step();
            true
        } else {
            false
        }
    }

    /// Physical holdings in bonds.
    pub fn holdings(&self, market: &MarketSpec) -> Vec<f64> {
        self.0.iter().zip(&market.bonds).map(|(&n, b)| n as f64 * b.trade_size).collect()
    }
}

/// One RFQ type and its probability among all RFQs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RfqEvent {
    pub bond: usize,
    pub side: Side,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarketSpec {
    pub bonds: Vec<BondSpec>,
    /// Row-major `d×d`, symmetric and positive semidefinite up to 1e-10.
    covariance: Vec<f64>,
    pub penalty: PenaltySpec,
    /// Continuous discount rate `r`.
    pub discount: f64,
}

impl MarketSpec {
    pub fn new(bonds: Vec<BondSpec>, covariance: Vec<Vec<f64>>, penalty: PenaltySpec, discount: f64) -> Result<Self> {
        let d = bonds.len();
        if d == 0 {
            return Err(Error::Empty("bond list"));
        }
        for b in &bonds {
            b.validate()?;
        }
        if covariance.len() != d || covariance.iter().any(|row| row.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: covariance.len() });
        }
        // γ = 0 is accepted so that the penalty-free benchmark can be run.
        if !(penalty.gamma >= 0.0) || !penalty.gamma.is_finite() {
            return Err(Error::InvalidParameter("risk aversion gamma must be finite and nonnegative".into()));
        }
        if !(discount > 0.0) {
            return Err(Error::InvalidParameter("discount rate must be positive".into()));
        }
        for i in 0..d {
            for j in 0..d {
                if (covariance[i][j] - covariance[j][i]).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        let covariance = check_psd(&covariance)?;
        Ok(Self { bonds, covariance, penalty, discount })
    }

    pub fn dim(&self) -> usize {
        self.bonds.len()
    }

    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.dim() + j]
    }

    pub fn covariance_rows(&self) -> Vec<Vec<f64>> {
        self.covariance.chunks(self.dim()).map(<[f64]>::to_vec).collect()
    }

    /// Price volatility `σⁱ = √Σᵢᵢ`.
    pub fn volatility(&self, i: usize) -> f64 {
        self.covariance(i, i).sqrt()
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        let v = self.volatility(i) * self.volatility(j);
        if v > 0.0 {
            self.covariance(i, j) / v
        } else {
            0.0
        }
    }

    pub fn max_limits(&self) -> RiskLimits {
        RiskLimits(self.bonds.iter().map(|b| b.max_units as i32).collect())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.bonds.iter().position(|b| b.id == id)
    }

    /// Sub-market restricted to the given bond ids, in the given order.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let idx = ids
            .iter()
            .map(|id| self.index_of(id.as_ref()).ok_or_else(|| Error::UnknownBond(id.as_ref().to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.subset_indices(&idx))
    }

    pub fn subset_indices(&self, idx: &[usize]) -> Self {
        let d = self.dim();
        let bonds = idx.iter().map(|&i| self.bonds[i].clone()).collect();
        let covariance = idx
            .iter()
            .flat_map(|&i| idx.iter().map(move |&j| self.covariance[i * d + j]))
            .collect();
        Self { bonds, covariance, penalty: self.penalty, discount: self.discount }
    }

    pub fn with_penalty(mut self, penalty: PenaltySpec) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    pub fn with_max_units(mut self, units: u32) -> Self {
        for b in &mut self.bonds {
            b.max_units = units;
        }
        self
    }

    /// `q′Σq` for an inventory given in units.
    pub fn quadratic_form(&self, units: &[i32]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            if units[i] == 0 {
                continue;
            }
            let qi = units[i] as f64 * self.bonds[i].trade_size;
            let mut row = 0.0;
            for j in 0..d {
                row += self.covariance[i * d + j] * units[j] as f64 * self.bonds[j].trade_size;
            }
            acc += qi * row;
        }
        acc.max(0.0)
    }

    /// Running inventory penalty `ψ(q)` per unit of time.
    pub fn penalty_at(&self, units: &[i32]) -> f64 {
        let v = self.quadratic_form(units);
        match self.penalty.kind {
            PenaltyKind::StdDev => 0.5 * self.penalty.gamma * v.sqrt(),
            PenaltyKind::Variance => 0.5 * self.penalty.gamma * v,
        }
    }

    /// Total RFQ rate `Λ = Σᵢ (λⁱᵇ + λⁱᵃ)`.
    pub fn total_rate(&self) -> f64 {
        self.bonds.iter().map(|b| b.lambda_bid + b.lambda_ask).sum()
    }

    /// Per-RFQ discount factor `γ_RL = Λ/(r + Λ)`.
    pub fn gamma_rl(&self) -> f64 {
        let l = self.total_rate();
        l / (self.discount + l)
    }

    /// Penalty paid between two RFQs, discounted: `ψ(q)/(r + Λ)`.
    pub fn discounted_penalty(&self, units: &[i32]) -> f64 {
        self.penalty_at(units) / (self.discount + self.total_rate())
    }

    /// Law of the next RFQ: `P(I = i, s) = λⁱˢ/Λ`, ordered bond-major, bid first.
    pub fn rfq_event_distribution(&self) -> Vec<RfqEvent> {
        let total = self.total_rate();
        self.bonds
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                Side::BOTH.into_iter().map(move |side| RfqEvent { bond: i, side, prob: b.lambda(side) / total })
            })
            .collect()
    }

    /// Probability that the next RFQ is on `bond`/`side`.
    pub fn rfq_prob(&self, bond: usize, side: Side) -> f64 {
        self.bonds[bond].lambda(side) / self.total_rate()
    }
}

fn check_psd(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = rows.len();
    let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (rows[i][j] + rows[j][i]));
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(Error::InvalidParameter(format!("covariance not positive semidefinite (eigenvalue {min:e})")));
    }
    // Eigenvalues in [-1e-10, 0) are rounding noise; `quadratic_form` floors at zero.
    Ok(m.transpose().as_slice().to_vec())
}

/// `ψ` of an inventory state.
pub fn penalty_eval(market: &MarketSpec, state: &InventoryState) -> f64 {
    market.penalty_at(state.units())
}

pub fn gamma_rl(market: &MarketSpec) -> f64 {
    market.gamma_rl()
}

pub fn rfq_event_distribution(market: &MarketSpec) -> Vec<RfqEvent> {
    market.rfq_event_distribution()
}

/// Risk-adjusted reward of one RFQ answered at `delta`:
/// `f(δ)·Δ·δ − ψ(q)/Λ`, with the fill probability forced to zero when the
/// side is blocked by the risk limit.
pub fn expected_step_reward(
    market: &MarketSpec,
    limits: &RiskLimits,
    state: &InventoryState,
    bond: usize,
    side: Side,
    delta: f64,
) -> f64 {
    let b = &market.bonds[bond];
    let spread = if limits.admits(state.units(), bond, side) {
        b.curve.prob(delta) * b.trade_size * delta
    } else {
        0.0
    };
    spread - market.penalty_at(state.units()) / market.total_rate()
}
