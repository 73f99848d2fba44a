use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NetError, Point};
use crate::auction::AuctionOutcome;
use crate::market::{MarketState, RsuId, VehicleId};

/// Uniform per-slot rate model, all rates in Mb/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub direct_min: f64,
    pub direct_max: f64,
    pub coop_min: f64,
    pub coop_max: f64,
    /// Single-hop V2V range.
    pub v2v_range_m: f64,
    /// Divide the cooperative rate of pairs beyond `v2v_range_m` by the
    /// number of relay hops.
    pub relay_penalty: bool,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { direct_min: 5.0, direct_max: 25.0, coop_min: 10.0, coop_max: 50.0, v2v_range_m: 200.0, relay_penalty: false }
    }
}

impl LinkConfig {
    pub fn hops(&self, distance_m: f64) -> u32 {
        ((distance_m / self.v2v_range_m).ceil() as u32).max(1)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkRates {
    direct: HashMap<VehicleId, (RsuId, f64)>,
    coop: HashMap<(VehicleId, VehicleId), f64>,
}

impl LinkRates {
    pub fn set_direct(&mut self, rsu: RsuId, vehicle: VehicleId, rate: f64) {
        self.direct.insert(vehicle, (rsu, rate));
    }

    pub fn set_coop(&mut self, seller: VehicleId, buyer: VehicleId, rate: f64) {
        self.coop.insert((seller, buyer), rate);
    }

    pub fn direct(&self, rsu: RsuId, vehicle: VehicleId) -> Option<f64> {
        self.direct.get(&vehicle).filter(|(r, _)| *r == rsu).map(|(_, rate)| *rate)
    }

    pub fn coop(&self, seller: VehicleId, buyer: VehicleId) -> Option<f64> {
        self.coop.get(&(seller, buyer)).copied()
    }

    /// Best cooperative rate any seller offers `buyer`.
    pub fn best_coop(&self, buyer: VehicleId) -> Option<f64> {
        self.coop.iter().filter(|((_, b), _)| *b == buyer).map(|(_, r)| *r).reduce(f64::max)
    }

    /// Samples a direct rate for every vehicle to its RSU and a cooperative
    /// rate for every seller-buyer pair sharing an RSU, whatever their
    /// distance unless `relay_penalty` is set. Draws follow vehicle
    /// order, so the stream depends only on roles and attachments.
    pub fn sample<R: Rng + ?Sized>(
        state: &MarketState,
        positions: &[Point],
        config: &LinkConfig,
        rng: &mut R,
    ) -> Self {
        let mut rates = Self::default();
        for v in &state.vehicles {
            rates.set_direct(v.rsu, v.id, rng.random_range(config.direct_min..=config.direct_max));
        }
        for (buyer, _) in state.buyers() {
            for (seller, _) in state.sellers().filter(|(s, _)| s.rsu == buyer.rsu) {
                let base = rng.random_range(config.coop_min..=config.coop_max);
                let hops = match (positions.get(seller.id.index()), positions.get(buyer.id.index())) {
                    (Some(a), Some(b)) if config.relay_penalty => config.hops(a.distance(*b)),
                    _ => 1,
                };
                rates.set_coop(seller.id, buyer.id, base / f64::from(hops));
            }
        }
        rates
    }
}

/// Sum over buyers of `chunks * chunk_mb * 8 / rate`, where the rate is the
/// cooperative link from the matched seller for winners and the direct RSU
/// link for everyone else.
pub fn transmission_latency(
    outcome: &AuctionOutcome,
    state: &MarketState,
    rates: &LinkRates,
    chunk_mb: f64,
) -> Result<f64, NetError> {
    let mut total = 0.0;
    for (v, b) in state.buyers() {
        let megabits = f64::from(b.chunks) * chunk_mb * 8.0;
        let rate = match outcome.seller_of(v.id) {
            Some(seller) => {
                rates.coop(seller, v.id).ok_or(NetError::MissingCoopRate { seller, buyer: v.id })?
            }
            None => rates.direct(v.rsu, v.id).ok_or(NetError::MissingDirectRate { rsu: v.rsu, vehicle: v.id })?,
        };
        total += megabits / rate;
    }
    Ok(total)
}
