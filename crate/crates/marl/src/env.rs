//! Partially observed market-entry environment around the slot driver.

use iov_bazaar_core::gossip::{last_price, queue_estimate};
use iov_bazaar_core::market::{MarketState, RsuId, Submarket, VehicleId};
use iov_bazaar_core::net::{LinkConfig, LinkRates};
use iov_bazaar_core::world::{SlotContext, SlotReport, World, WorldConfig, WorldError};
use serde::{Deserialize, Serialize};

/// Market-entry action: 0 urgent, 1 mundane.
pub fn action_submarket(action: usize) -> Submarket {
    if action == 0 {
        Submarket::Urgent
    } else {
        Submarket::Mundane
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Madrl,
    Random,
    SecondPrice,
    DoubleAuction,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] =
        [Mechanism::Madrl, Mechanism::Random, Mechanism::SecondPrice, Mechanism::DoubleAuction];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Madrl => "madrl",
            Mechanism::Random => "random",
            Mechanism::SecondPrice => "second-price",
            Mechanism::DoubleAuction => "double-auction",
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mechanism {s:?}, expected madrl, random, second-price or double-auction"))
    }
}

/// Observation before normalisation: per-RSU participant counts, last
/// price at the vehicle's RSU (0 when none is known), own direct rate and
/// own best cooperative rate (0 without a partner).
pub fn raw_observation(counts: &[usize], price: Option<f64>, direct: f64, best_coop: Option<f64>) -> Vec<f64> {
    counts
        .iter()
        .map(|&c| c as f64)
        .chain([price.unwrap_or(0.0), direct, best_coop.unwrap_or(0.0)])
        .collect()
}

/// Divides counts by `vehicles`, the price by the largest price seen (1
/// when none) and rates by their configured maxima.
pub fn normalize_observation(raw: &mut [f64], rsus: usize, vehicles: u32, max_price: f64, links: &LinkConfig) {
    let v = f64::from(vehicles.max(1));
    raw[..rsus].iter_mut().for_each(|c| *c /= v);
    raw[rsus] /= if max_price > 0.0 { max_price } else { 1.0 };
    raw[rsus + 1] /= links.direct_max;
    raw[rsus + 2] /= links.coop_max;
}

pub fn observation_dim(rsus: u32) -> usize {
    rsus as usize + 3
}

pub fn state_dim(rsus: u32) -> usize {
    4 * rsus as usize
}

pub struct MarketEnv {
    world: World,
    ctx: Option<SlotContext>,
}

impl MarketEnv {
    pub fn new(config: WorldConfig, seed: u64) -> Result<Self, WorldError> {
        Ok(Self { world: World::new(config, seed)?, ctx: None })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn rsus(&self) -> u32 {
        self.world.rsus()
    }

    /// Opens the next slot and returns the buyers that must act.
    pub fn begin(&mut self) -> Result<Vec<VehicleId>, WorldError> {
        let ctx = self.world.begin_slot()?;
        let buyers = ctx.buyer_ids();
        self.ctx = Some(ctx);
        Ok(buyers)
    }

    pub fn context(&self) -> Option<&SlotContext> {
        self.ctx.as_ref()
    }

    pub fn observe(&self, vehicle: VehicleId) -> Vec<f64> {
        let ctx = self.ctx.as_ref().expect("observe inside an open slot");
        observe(vehicle, &ctx.state, &self.world, &ctx.rates)
    }

    pub fn global_state(&self) -> Vec<f64> {
        let ctx = self.ctx.as_ref().expect("state inside an open slot");
        global_state(&ctx.state, &self.world)
    }

    /// Applies one action per listed buyer and closes the slot.
    pub fn step(&mut self, actions: &[(VehicleId, usize)]) -> Result<SlotReport, WorldError> {
        let mut ctx = self.ctx.take().ok_or(WorldError::NoOpenSlot)?;
        for &(v, a) in actions {
            ctx.state.set_submarket(v, action_submarket(a));
        }
        self.world.finish_slot(&ctx)
    }
}

/// Normalised observation of `vehicle`, read from its own gossip table.
pub fn observe(vehicle: VehicleId, state: &MarketState, world: &World, rates: &LinkRates) -> Vec<f64> {
    let rsu = state.vehicle(vehicle).map_or(RsuId(0), |v| v.rsu);
    let counts = state.participant_counts();
    let price = last_price(world.vehicle_table(vehicle), rsu);
    let direct = rates.direct(rsu, vehicle).unwrap_or(0.0);
    let mut obs = raw_observation(&counts, price, direct, rates.best_coop(vehicle));
    normalize_observation(&mut obs, counts.len(), world.vehicles(), world.max_price(), &world.config().links);
    obs
}

/// Critic input: per RSU buyers/V, sellers/V, RSU-known last price over the
/// largest price seen, and `l / (1 + l)` of the queue estimate.
pub fn global_state(state: &MarketState, world: &World) -> Vec<f64> {
    let v = f64::from(world.vehicles().max(1));
    let max_price = if world.max_price() > 0.0 { world.max_price() } else { 1.0 };
    state
        .rsu_ids()
        .flat_map(|rsu| {
            let (b, s) = state.role_counts(rsu);
            let table = world.rsu_table(rsu);
            let price = last_price(table, rsu).unwrap_or(0.0) / max_price;
            let queue = queue_estimate(table, rsu).unwrap_or(0.0);
            [b as f64 / v, s as f64 / v, price, queue / (1.0 + queue)]
        })
        .collect()
}
