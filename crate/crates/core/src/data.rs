//! Market configuration files (TOML or JSON) and the bundled 20-bond data set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::SuJohnsonCurve;
use crate::model::{BondSpec, MarketSpec, PenaltySpec};

/// The bundled 20-bond universe: intensities, RFQ sizes, fill curves and covariance.
pub const BUNDLED_MARKET_TOML: &str = include_str!("../data/bonds20.toml");

/// Default risk limit in units when a bond record does not carry one.
pub const DEFAULT_MAX_UNITS: u32 = 5;

/// On-disk bond record, one per bond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BondRecord {
    pub id: String,
    /// `λᵇ = λᵃ` unless `lambda_ask` is given.
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_ask: Option<f64>,
    pub size_numeraire: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub sigma: f64,
    #[serde(default = "default_max_units")]
    pub max_units: u32,
}

fn default_max_units() -> u32 {
    DEFAULT_MAX_UNITS
}

/// On-disk market description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub discount: f64,
    pub covariance: Vec<Vec<f64>>,
    pub penalty: PenaltySpec,
    pub bonds: Vec<BondRecord>,
}

impl MarketConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Loads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => self.to_json_string()?,
            _ => self.to_toml_string()?,
        };
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn build(&self) -> Result<MarketSpec> {
        let bonds = self
            .bonds
            .iter()
            .map(|r| {
                Ok(BondSpec {
                    id: r.id.clone(),
                    lambda_bid: r.lambda,
                    lambda_ask: r.lambda_ask.unwrap_or(r.lambda),
                    rfq_size_numeraire: r.size_numeraire,
                    trade_size: r.size_numeraire / 100.0,
                    curve: SuJohnsonCurve::new(r.alpha, r.beta, r.mu, r.sigma)?,
                    max_units: r.max_units,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MarketSpec::new(bonds, self.covariance.clone(), self.penalty, self.discount)
    }
}

impl From<&MarketSpec> for MarketConfig {
    fn from(m: &MarketSpec) -> Self {
        Self {
            discount: m.discount,
            covariance: m.covariance_rows(),
            penalty: m.penalty,
            bonds: m
                .bonds
                .iter()
                .map(|b| BondRecord {
                    id: b.id.clone(),
                    lambda: b.lambda_bid,
                    lambda_ask: (b.lambda_ask != b.lambda_bid).then_some(b.lambda_ask),
                    size_numeraire: b.rfq_size_numeraire,
                    alpha: b.curve.alpha,
                    beta: b.curve.beta,
                    mu: b.curve.mu,
                    sigma: b.curve.sigma,
                    max_units: b.max_units,
                })
                .collect(),
        }
    }
}

pub fn bundled_config() -> Result<MarketConfig> {
    MarketConfig::from_toml_str(BUNDLED_MARKET_TOML)
}

/// The bundled 20-bond market with the standard-deviation penalty (γ = 0.05)
/// and r = 1e-4.
pub fn bundled_market() -> Result<MarketSpec> {
    bundled_config()?.build()
}

/// The eight bonds with the largest price volatility, in bundled order.
pub fn most_volatile(market: &MarketSpec, count: usize) -> Vec<String> {
    let mut idx: Vec<usize> = (0..market.dim()).collect();
    idx.sort_by(|&a, &b| market.volatility(b).total_cmp(&market.volatility(a)));
    idx.truncate(count);
    idx.sort_unstable();
    idx.into_iter().map(|i| market.bonds[i].id.clone()).collect()
}
