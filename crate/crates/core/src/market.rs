//! Traders, valuations and utilities of the per-RSU data-sharing market.
//!
//! Every slot the vehicle population is split into buyers (requesting
//! content chunks) and sellers (offering spare transmit capacity). Buyer
//! value follows diminishing marginal returns in the number of chunks,
//! seller cost grows linearly with transmit power.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RsuId(pub u32);

impl VehicleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RsuId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl std::fmt::Display for RsuId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "rsu{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("transmit power must be non-negative and finite, got {0}")]
    InvalidPower(f64),
    #[error("seller value scale must be positive and finite, got {0}")]
    InvalidScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraderRole {
    Buyer,
    Seller,
}

/// Which submarket a buyer enters for the current slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Submarket {
    /// Cleared instantly against the seller pool on arrival.
    Urgent,
    /// Pooled and cleared periodically as a double auction.
    Mundane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyerProfile {
    pub chunks: u32,
    pub valuation: f64,
    pub bid: f64,
    pub submarket: Submarket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellerProfile {
    pub power_mw: f64,
    pub valuation: f64,
    pub ask: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Trader {
    Buyer(BuyerProfile),
    Seller(SellerProfile),
}

impl Trader {
    pub fn role(&self) -> TraderRole {
        match self {
            Trader::Buyer(_) => TraderRole::Buyer,
            Trader::Seller(_) => TraderRole::Seller,
        }
    }

    pub fn valuation(&self) -> f64 {
        match self {
            Trader::Buyer(b) => b.valuation,
            Trader::Seller(s) => s.valuation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: VehicleId,
    pub rsu: RsuId,
    pub trader: Trader,
}

/// Per-vehicle settlement of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TradeResult {
    Unmatched,
    Bought { payment: f64 },
    Sold { revenue: f64 },
}

/// Buyer value of receiving `chunks` chunks: `ln(1 + chunks / 10)`.
pub fn buyer_valuation(chunks: u32) -> f64 {
    (f64::from(chunks) / 10.0).ln_1p()
}

/// Seller cost of relaying at `power_mw`, linear with scale `kappa`.
pub fn seller_valuation(power_mw: f64, kappa: f64) -> Result<f64, MarketError> {
    if !power_mw.is_finite() || power_mw < 0.0 {
        return Err(MarketError::InvalidPower(power_mw));
    }
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(MarketError::InvalidScale(kappa));
    }
    Ok(kappa * power_mw)
}

/// `valuation - payment` for a matched buyer, zero otherwise.
pub fn buyer_utility(valuation: f64, payment: Option<f64>) -> f64 {
    payment.map_or(0.0, |p| valuation - p)
}

/// `revenue - valuation` for a matched seller, zero otherwise.
pub fn seller_utility(valuation: f64, revenue: Option<f64>) -> f64 {
    revenue.map_or(0.0, |r| r - valuation)
}

/// Utility of a trader given its settlement. A result that does not fit the
/// trader's role (a seller that "bought") counts as unmatched.
pub fn utility(trader: &Trader, result: TradeResult) -> f64 {
    match (trader, result) {
        (Trader::Buyer(b), TradeResult::Bought { payment }) => buyer_utility(b.valuation, Some(payment)),
        (Trader::Seller(s), TradeResult::Sold { revenue }) => seller_utility(s.valuation, Some(revenue)),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub vehicles: u32,
    pub rsus: u32,
    pub max_chunks: u32,
    pub max_power_mw: f64,
    pub kappa: f64,
    /// A vehicle is a buyer when its uniform role draw is at least this.
    pub buyer_threshold: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            vehicles: 40,
            rsus: 4,
            max_chunks: 10,
            max_power_mw: 10.0,
            kappa: 0.07,
            buyer_threshold: 0.5,
        }
    }
}

/// Snapshot of the market population for one slot. `vehicles[i].id == i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub rsus: u32,
    pub vehicles: Vec<Vehicle>,
}

impl MarketState {
    pub fn new(rsus: u32, vehicles: Vec<Vehicle>) -> Self {
        debug_assert!(vehicles.iter().enumerate().all(|(i, v)| v.id.index() == i));
        Self { rsus, vehicles }
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&Vehicle> {
        self.vehicles.get(id.index())
    }

    pub fn buyer(&self, id: VehicleId) -> Option<&BuyerProfile> {
        match &self.vehicle(id)?.trader {
            Trader::Buyer(b) => Some(b),
            Trader::Seller(_) => None,
        }
    }

    pub fn seller(&self, id: VehicleId) -> Option<&SellerProfile> {
        match &self.vehicle(id)?.trader {
            Trader::Seller(s) => Some(s),
            Trader::Buyer(_) => None,
        }
    }

    pub fn buyers(&self) -> impl Iterator<Item = (&Vehicle, &BuyerProfile)> {
        self.vehicles.iter().filter_map(|v| match &v.trader {
            Trader::Buyer(b) => Some((v, b)),
            Trader::Seller(_) => None,
        })
    }

    pub fn sellers(&self) -> impl Iterator<Item = (&Vehicle, &SellerProfile)> {
        self.vehicles.iter().filter_map(|v| match &v.trader {
            Trader::Seller(s) => Some((v, s)),
            Trader::Buyer(_) => None,
        })
    }

    pub fn rsu_ids(&self) -> impl Iterator<Item = RsuId> {
        (0..self.rsus).map(RsuId)
    }

    /// Number of buyers and sellers attached to each RSU.
    pub fn participant_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.rsus as usize];
        for v in &self.vehicles {
            counts[v.rsu.index()] += 1;
        }
        counts
    }

    /// `(buyers, sellers)` attached to `rsu`.
    pub fn role_counts(&self, rsu: RsuId) -> (usize, usize) {
        self.vehicles
            .iter()
            .filter(|v| v.rsu == rsu)
            .fold((0, 0), |(b, s), v| match v.trader {
                Trader::Buyer(_) => (b + 1, s),
                Trader::Seller(_) => (b, s + 1),
            })
    }

    pub fn set_attachment(&mut self, id: VehicleId, rsu: RsuId) {
        assert!(rsu.0 < self.rsus, "{rsu} out of range");
        self.vehicles[id.index()].rsu = rsu;
    }

    /// Sets the submarket of a buyer; no-op for sellers.
    pub fn set_submarket(&mut self, id: VehicleId, submarket: Submarket) {
        if let Some(Vehicle { trader: Trader::Buyer(b), .. }) = self.vehicles.get_mut(id.index()) {
            b.submarket = submarket;
        }
    }
}

/// Draws roles, chunk counts, transmit powers and truthful reports for every
/// vehicle. Attachments are drawn uniformly; the simulation driver replaces
/// them with the geometric nearest-RSU attachment.
pub fn sample_population<R: Rng + ?Sized>(config: &PopulationConfig, rng: &mut R) -> MarketState {
    let vehicles = (0..config.vehicles)
        .map(|i| {
            let role_draw: f64 = rng.random();
            let trader = if role_draw >= config.buyer_threshold {
                let chunks = rng.random_range(1..=config.max_chunks.max(1));
                let valuation = buyer_valuation(chunks);
                Trader::Buyer(BuyerProfile { chunks, valuation, bid: valuation, submarket: Submarket::Mundane })
            } else {
                let power_mw = rng.random::<f64>() * config.max_power_mw;
                let valuation = seller_valuation(power_mw, config.kappa).unwrap_or(0.0);
                Trader::Seller(SellerProfile { power_mw, valuation, ask: valuation })
            };
            let rsu = RsuId(if config.rsus == 0 { 0 } else { rng.random_range(0..config.rsus) });
            Vehicle { id: VehicleId(i), rsu, trader }
        })
        .collect();
    MarketState::new(config.rsus, vehicles)
}
