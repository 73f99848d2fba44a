//! Hierarchical per-RSU auction: an urgent single-side second-price
//! submarket cleared on arrival and a mundane double-side submarket cleared
//! with McAfee's trade-reduction rule.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{MarketState, RsuId, Submarket, TradeResult, Trader, VehicleId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuctionError {
    #[error("urgent clearing needs at least two sellers, pool has {sellers}")]
    NoRunnerUp { sellers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub vehicle: VehicleId,
    pub value: f64,
}

impl PoolEntry {
    pub fn new(vehicle: VehicleId, value: f64) -> Self {
        Self { vehicle, value }
    }
}

/// Buyers of one RSU's mundane submarket, bids descending, ties by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuyerPool {
    entries: Vec<PoolEntry>,
}

/// Unmatched sellers of one RSU, asks ascending, ties by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SellerPool {
    entries: Vec<PoolEntry>,
}

fn by_id(a: &PoolEntry, b: &PoolEntry) -> Ordering {
    a.vehicle.cmp(&b.vehicle)
}

impl BuyerPool {
    pub fn new(entries: impl IntoIterator<Item = PoolEntry>) -> Self {
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort_by(|a, b| b.value.total_cmp(&a.value).then_with(|| by_id(a, b)));
        Self { entries }
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl SellerPool {
    pub fn new(entries: impl IntoIterator<Item = PoolEntry>) -> Self {
        let mut entries: Vec<_> = entries.into_iter().collect();
        entries.sort_by(|a, b| a.value.total_cmp(&b.value).then_with(|| by_id(a, b)));
        Self { entries }
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn remove(&mut self, vehicle: VehicleId) -> Option<PoolEntry> {
        let pos = self.entries.iter().position(|e| e.vehicle == vehicle)?;
        Some(self.entries.remove(pos))
    }
}

/// Seller selection rule of the urgent submarket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UrgentMode {
    /// Highest ask wins; buyer pays the highest competing ask and the seller
    /// receives the highest ask in the pool.
    #[default]
    HighestAsk,
    /// Reverse second-price: lowest ask wins and both sides settle at the
    /// second-lowest ask.
    LowestAsk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrgentTrade {
    pub seller: VehicleId,
    pub buyer_payment: f64,
    pub seller_revenue: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UrgentResult {
    Trade(UrgentTrade),
    /// The bid does not cover the payment; the buyer downloads from the RSU.
    ReserveNotMet { payment: f64 },
}

/// Clears one urgent request against `pool`. The pool is left untouched; the
/// caller removes the winning seller.
pub fn clear_urgent(bid: f64, pool: &SellerPool, mode: UrgentMode) -> Result<UrgentResult, AuctionError> {
    let entries = pool.entries();
    if entries.len() < 2 {
        return Err(AuctionError::NoRunnerUp { sellers: entries.len() });
    }
    let (winner, payment, revenue) = match mode {
        UrgentMode::HighestAsk => {
            let top = entries[entries.len() - 1].value;
            // Lowest id among the maximum asks.
            let winner_pos = entries.iter().position(|e| e.value == top).unwrap();
            let runner_up = entries
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != winner_pos)
                .map(|(_, e)| e.value)
                .fold(f64::NEG_INFINITY, f64::max);
            (entries[winner_pos].vehicle, runner_up, top)
        }
        UrgentMode::LowestAsk => {
            let second = entries[1].value;
            (entries[0].vehicle, second, second)
        }
    };
    if bid >= payment {
        Ok(UrgentResult::Trade(UrgentTrade { seller: winner, buyer_payment: payment, seller_revenue: revenue }))
    } else {
        Ok(UrgentResult::ReserveNotMet { payment })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTrade {
    pub buyer: VehicleId,
    pub seller: VehicleId,
    pub buyer_payment: f64,
    pub seller_revenue: f64,
}

/// Which branch of McAfee's rule produced the trades.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Clearing {
    NoTrade,
    /// K pairs trade at the common price `(b_{K+1} + s_{K+1}) / 2`.
    Uniform { k: usize, price: f64 },
    /// K-1 pairs trade, buyers paying `b_K` and sellers receiving `s_K`.
    TradeReduction { k: usize, buyer_price: f64, seller_price: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MundaneResult {
    pub clearing: Clearing,
    pub trades: Vec<PairTrade>,
}

impl MundaneResult {
    pub fn budget(&self) -> f64 {
        self.trades.iter().map(|t| t.buyer_payment - t.seller_revenue).sum()
    }
}

/// Largest `k` with `b_k >= s_k` over the sorted pools (1-based count).
pub fn breakeven_index(buyers: &BuyerPool, sellers: &SellerPool) -> usize {
    buyers
        .entries()
        .iter()
        .zip(sellers.entries())
        .take_while(|(b, s)| b.value >= s.value)
        .count()
}

/// McAfee's dominant-strategy double auction over sorted pools.
pub fn clear_mundane(buyers: &BuyerPool, sellers: &SellerPool) -> MundaneResult {
    let b = buyers.entries();
    let s = sellers.entries();
    let k = breakeven_index(buyers, sellers);
    if k == 0 {
        return MundaneResult { clearing: Clearing::NoTrade, trades: Vec::new() };
    }
    if k < b.len() && k < s.len() {
        let price = (b[k].value + s[k].value) / 2.0;
        let buyers_in = b.iter().filter(|e| e.value >= price).count();
        let sellers_in = s.iter().filter(|e| e.value <= price).count();
        if buyers_in == k && sellers_in == k {
            let trades = b[..k]
                .iter()
                .zip(&s[..k])
                .map(|(bi, si)| PairTrade { buyer: bi.vehicle, seller: si.vehicle, buyer_payment: price, seller_revenue: price })
                .collect();
            return MundaneResult { clearing: Clearing::Uniform { k, price }, trades };
        }
    }
    let buyer_price = b[k - 1].value;
    let seller_price = s[k - 1].value;
    let trades = b[..k - 1]
        .iter()
        .zip(&s[..k - 1])
        .map(|(bi, si)| PairTrade {
            buyer: bi.vehicle,
            seller: si.vehicle,
            buyer_payment: buyer_price,
            seller_revenue: seller_price,
        })
        .collect();
    MundaneResult { clearing: Clearing::TradeReduction { k, buyer_price, seller_price }, trades }
}

/// Sparse supply (`x[buyer][seller]`) and demand (`y[seller][buyer]`) matrices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocationMatrix {
    pub supply: BTreeSet<(VehicleId, VehicleId)>,
    pub demand: BTreeSet<(VehicleId, VehicleId)>,
}

impl AllocationMatrix {
    pub fn allocate(&mut self, buyer: VehicleId, seller: VehicleId) {
        self.supply.insert((buyer, seller));
        self.demand.insert((seller, buyer));
    }

    /// Every seller row of `Y` sums to at most one.
    pub fn sellers_sold_once(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.demand.iter().all(|(seller, _)| seen.insert(*seller))
    }

    /// `x[v][v'] <= y[v'][v]` elementwise.
    pub fn supply_within_demand(&self) -> bool {
        self.supply.iter().all(|(b, s)| self.demand.contains(&(*s, *b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub buyer: VehicleId,
    pub seller: VehicleId,
    pub rsu: RsuId,
    pub submarket: Submarket,
    pub buyer_payment: f64,
    pub seller_revenue: f64,
}

/// Result of clearing every local market for one slot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub allocation: AllocationMatrix,
    pub matches: Vec<Match>,
    pub buyer_payments: BTreeMap<VehicleId, f64>,
    pub seller_revenues: BTreeMap<VehicleId, f64>,
    /// Local budget per RSU, indexed by `RsuId`.
    pub budgets: Vec<f64>,
    /// Mundane clearing per RSU; `None` when the submarket did not clear.
    pub clearings: Vec<Option<Clearing>>,
    /// Budget of the mundane submarket alone, per RSU.
    pub mundane_budgets: Vec<f64>,
}

impl AuctionOutcome {
    fn record(&mut self, m: Match) {
        self.allocation.allocate(m.buyer, m.seller);
        self.buyer_payments.insert(m.buyer, m.buyer_payment);
        self.seller_revenues.insert(m.seller, m.seller_revenue);
        self.matches.push(m);
    }

    pub fn is_matched(&self, vehicle: VehicleId) -> bool {
        self.buyer_payments.contains_key(&vehicle) || self.seller_revenues.contains_key(&vehicle)
    }

    pub fn trade_result(&self, vehicle: VehicleId) -> TradeResult {
        if let Some(&payment) = self.buyer_payments.get(&vehicle) {
            TradeResult::Bought { payment }
        } else if let Some(&revenue) = self.seller_revenues.get(&vehicle) {
            TradeResult::Sold { revenue }
        } else {
            TradeResult::Unmatched
        }
    }

    /// The seller matched to `buyer`, if any.
    pub fn seller_of(&self, buyer: VehicleId) -> Option<VehicleId> {
        self.matches.iter().find(|m| m.buyer == buyer).map(|m| m.seller)
    }
}

/// Pools of `rsu`: unmatched mundane buyers and unmatched sellers attached to it.
pub fn build_pools(state: &MarketState, rsu: RsuId, outcome: &AuctionOutcome) -> (BuyerPool, SellerPool) {
    let here = state.vehicles.iter().filter(|v| v.rsu == rsu && !outcome.is_matched(v.id));
    let mut buyers = Vec::new();
    let mut sellers = Vec::new();
    for v in here {
        match &v.trader {
            Trader::Buyer(b) if b.submarket == Submarket::Mundane => buyers.push(PoolEntry::new(v.id, b.bid)),
            Trader::Buyer(_) => {}
            Trader::Seller(s) => sellers.push(PoolEntry::new(v.id, s.ask)),
        }
    }
    (BuyerPool::new(buyers), SellerPool::new(sellers))
}

/// Clears every RSU market for one slot: urgent requests first in ascending
/// buyer id, each against the pool left by the previous one, then the
/// mundane submarket when `clear_mundane_now` is set.
pub fn clear_slot(state: &MarketState, mode: UrgentMode, clear_mundane_now: bool) -> AuctionOutcome {
    let n = state.rsus as usize;
    let mut outcome = AuctionOutcome {
        budgets: vec![0.0; n],
        clearings: vec![None; n],
        mundane_budgets: vec![0.0; n],
        ..Default::default()
    };
    for rsu in state.rsu_ids() {
        let (_, mut sellers) = build_pools(state, rsu, &outcome);
        let urgent = state
            .buyers()
            .filter(|(v, b)| v.rsu == rsu && b.submarket == Submarket::Urgent);
        for (v, b) in urgent {
            if let Ok(UrgentResult::Trade(t)) = clear_urgent(b.bid, &sellers, mode) {
                sellers.remove(t.seller);
                outcome.record(Match {
                    buyer: v.id,
                    seller: t.seller,
                    rsu,
                    submarket: Submarket::Urgent,
                    buyer_payment: t.buyer_payment,
                    seller_revenue: t.seller_revenue,
                });
            }
        }
        if clear_mundane_now {
            let (buyers, sellers) = build_pools(state, rsu, &outcome);
            let result = clear_mundane(&buyers, &sellers);
            outcome.mundane_budgets[rsu.index()] = result.budget();
            outcome.clearings[rsu.index()] = Some(result.clearing);
            for t in result.trades {
                outcome.record(Match {
                    buyer: t.buyer,
                    seller: t.seller,
                    rsu,
                    submarket: Submarket::Mundane,
                    buyer_payment: t.buyer_payment,
                    seller_revenue: t.seller_revenue,
                });
            }
        }
        outcome.budgets[rsu.index()] = local_budget(&outcome, rsu);
    }
    outcome
}

/// Sum of matched buyer and seller valuations.
pub fn social_welfare(outcome: &AuctionOutcome, state: &MarketState) -> f64 {
    outcome
        .matches
        .iter()
        .map(|m| {
            let buyer = state.buyer(m.buyer).map_or(0.0, |b| b.valuation);
            let seller = state.seller(m.seller).map_or(0.0, |s| s.valuation);
            buyer + seller
        })
        .sum()
}

/// Buyer payments minus seller revenues at `rsu`.
pub fn local_budget(outcome: &AuctionOutcome, rsu: RsuId) -> f64 {
    outcome
        .matches
        .iter()
        .filter(|m| m.rsu == rsu)
        .map(|m| m.buyer_payment - m.seller_revenue)
        .sum()
}

pub fn global_budget(per_rsu: &[f64]) -> f64 {
    per_rsu.iter().sum()
}
