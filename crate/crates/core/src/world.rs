//! Slot-level simulation driver.
//!
//! A slot runs in two halves so that a policy can act in between:
//! [`World::begin_slot`] resamples traders, attaches them to RSUs and draws
//! link rates; [`World::finish_slot`] clears the markets with the chosen
//! submarkets, settles latency and queues, publishes prices through gossip
//! and moves the vehicles. All randomness comes from the world's own
//! stream and none of it depends on the submarket choices, so two
//! mechanisms driven from the same seed see identical traders, rates and
//! movement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{clear_slot, global_budget, social_welfare, AuctionOutcome, UrgentMode};
use crate::gossip::{gossip_round, last_price, price_key, queue_key, GossipGraph, PriceTable, TableEntry, Timestamp};
use crate::market::{sample_population, MarketState, PopulationConfig, RsuId, Submarket, VehicleId};
use crate::net::{transmission_latency, LinkConfig, LinkRates, MobilityConfig, NetError, RsuQueue, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("finish_slot called without a matching begin_slot")]
    NoOpenSlot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub population: PopulationConfig,
    pub mobility: MobilityConfig,
    pub links: LinkConfig,
    pub chunk_mb: f64,
    /// Weight of the squared budget in the slot reward.
    pub alpha: f64,
    pub urgent_mode: UrgentMode,
    /// Mundane markets clear every this many slots.
    pub mundane_period: u32,
    pub slot_seconds: f64,
    /// RSU direct-download service rate, Mb/s.
    pub rsu_service_rate: f64,
    pub gossip_rounds_per_slot: u32,
    pub gossip_range_m: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            population: PopulationConfig::default(),
            mobility: MobilityConfig::default(),
            links: LinkConfig::default(),
            chunk_mb: 1.0,
            alpha: 0.1,
            urgent_mode: UrgentMode::HighestAsk,
            mundane_period: 1,
            slot_seconds: 1.0,
            rsu_service_rate: 50.0,
            gossip_rounds_per_slot: 1,
            gossip_range_m: 200.0,
        }
    }
}

fn positive(field: &'static str, value: f64) -> Result<(), WorldError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(WorldError::InvalidConfig { field, reason: format!("must be positive, got {value}") })
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let p = &self.population;
        if p.rsus != 4 {
            return Err(WorldError::InvalidConfig {
                field: "population.rsus",
                reason: format!("the arena layout has 4 RSUs, got {}", p.rsus),
            });
        }
        if p.max_chunks == 0 {
            return Err(WorldError::InvalidConfig { field: "population.max_chunks", reason: "must be at least 1".into() });
        }
        positive("population.max_power_mw", p.max_power_mw)?;
        positive("population.kappa", p.kappa)?;
        if !(0.0..=1.0).contains(&p.buyer_threshold) {
            return Err(WorldError::InvalidConfig {
                field: "population.buyer_threshold",
                reason: format!("must lie in [0, 1], got {}", p.buyer_threshold),
            });
        }
        positive("mobility.arena_m", self.mobility.arena_m)?;
        positive("mobility.rsu_radius_m", self.mobility.rsu_radius_m)?;
        if !(self.mobility.speed_mean.is_finite() && self.mobility.speed_mean >= 0.0) {
            return Err(WorldError::InvalidConfig { field: "mobility.speed_mean", reason: "must be non-negative".into() });
        }
        if !(self.mobility.speed_std.is_finite() && self.mobility.speed_std >= 0.0) {
            return Err(WorldError::InvalidConfig { field: "mobility.speed_std", reason: "must be non-negative".into() });
        }
        if !(0.0..=1.0).contains(&self.mobility.turn_probability) {
            return Err(WorldError::InvalidConfig {
                field: "mobility.turn_probability",
                reason: "must lie in [0, 1]".into(),
            });
        }
        let l = &self.links;
        positive("links.direct_min", l.direct_min)?;
        positive("links.coop_min", l.coop_min)?;
        positive("links.v2v_range_m", l.v2v_range_m)?;
        if l.direct_max < l.direct_min {
            return Err(WorldError::InvalidConfig { field: "links.direct_max", reason: "below direct_min".into() });
        }
        if l.coop_max < l.coop_min {
            return Err(WorldError::InvalidConfig { field: "links.coop_max", reason: "below coop_min".into() });
        }
        positive("chunk_mb", self.chunk_mb)?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(WorldError::InvalidConfig { field: "alpha", reason: "must be non-negative".into() });
        }
        if self.mundane_period == 0 {
            return Err(WorldError::InvalidConfig { field: "mundane_period", reason: "must be at least 1".into() });
        }
        positive("slot_seconds", self.slot_seconds)?;
        positive("rsu_service_rate", self.rsu_service_rate)?;
        positive("gossip_range_m", self.gossip_range_m)?;
        let topology = Topology::with_defaults(&self.mobility);
        if !topology.fully_covered(self.mobility.arena_m / 100.0) {
            return Err(WorldError::InvalidConfig {
                field: "mobility.rsu_radius_m",
                reason: "RSU discs leave part of the arena uncovered".into(),
            });
        }
        Ok(())
    }
}

/// `sw - alpha * budget^2 - latency`, shared by every agent of the slot.
pub fn reward(sw: f64, budget: f64, latency: f64, alpha: f64) -> f64 {
    sw - alpha * budget * budget - latency
}

/// Traders, attachments and rates of an open slot.
#[derive(Debug, Clone)]
pub struct SlotContext {
    pub slot: u64,
    pub state: MarketState,
    pub rates: LinkRates,
    pub mundane_clears: bool,
}

impl SlotContext {
    pub fn buyer_ids(&self) -> Vec<VehicleId> {
        self.state.buyers().map(|(v, _)| v.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotReport {
    pub slot: u64,
    pub outcome: AuctionOutcome,
    pub social_welfare: f64,
    pub budget: f64,
    pub latency: f64,
    pub reward: f64,
    pub urgent_buyers: usize,
    pub mundane_buyers: usize,
    pub sellers: usize,
}

#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    rng: ChaCha8Rng,
    topology: Topology,
    tables: Vec<PriceTable>,
    queues: Vec<RsuQueue>,
    slot: u64,
    max_price: f64,
    open: Option<u64>,
}

impl World {
    pub fn new(config: WorldConfig, seed: u64) -> Result<Self, WorldError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut topology = Topology::with_defaults(&config.mobility);
        topology.spawn(config.population.vehicles, &config.mobility, &mut rng);
        let nodes = (config.population.vehicles + config.population.rsus) as usize;
        let queues = (0..config.population.rsus).map(|_| RsuQueue::new(config.rsu_service_rate)).collect();
        Ok(Self {
            config,
            rng,
            topology,
            tables: vec![PriceTable::default(); nodes],
            queues,
            slot: 0,
            max_price: 0.0,
            open: None,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn rsus(&self) -> u32 {
        self.config.population.rsus
    }

    pub fn vehicles(&self) -> u32 {
        self.config.population.vehicles
    }

    /// Local price table of a vehicle.
    pub fn vehicle_table(&self, vehicle: VehicleId) -> &PriceTable {
        &self.tables[vehicle.index()]
    }

    /// Price table held by an RSU.
    pub fn rsu_table(&self, rsu: RsuId) -> &PriceTable {
        &self.tables[self.vehicles() as usize + rsu.index()]
    }

    pub fn tables(&self) -> &[PriceTable] {
        &self.tables
    }

    pub fn queue(&self, rsu: RsuId) -> &RsuQueue {
        &self.queues[rsu.index()]
    }

    /// Largest transaction price published so far, 0 before any trade.
    pub fn max_price(&self) -> f64 {
        self.max_price
    }

    pub fn begin_slot(&mut self) -> Result<SlotContext, WorldError> {
        let mut state = sample_population(&self.config.population, &mut self.rng);
        for (i, rsu) in self.topology.attachments()?.into_iter().enumerate() {
            state.set_attachment(VehicleId(i as u32), rsu);
        }
        let positions: Vec<_> = self.topology.vehicles.iter().map(|k| k.position).collect();
        let rates = LinkRates::sample(&state, &positions, &self.config.links, &mut self.rng);
        self.open = Some(self.slot);
        Ok(SlotContext {
            slot: self.slot,
            state,
            rates,
            mundane_clears: self.slot.is_multiple_of(u64::from(self.config.mundane_period)),
        })
    }

    /// Clears the slot with every buyer's submarket as set in `ctx.state`.
    pub fn finish_slot(&mut self, ctx: &SlotContext) -> Result<SlotReport, WorldError> {
        if self.open.take() != Some(ctx.slot) {
            return Err(WorldError::NoOpenSlot);
        }
        let state = &ctx.state;
        let outcome = clear_slot(state, self.config.urgent_mode, ctx.mundane_clears);
        let sw = social_welfare(&outcome, state);
        let budget = global_budget(&outcome.budgets);
        let latency = transmission_latency(&outcome, state, &ctx.rates, self.config.chunk_mb)?;
        let reward = reward(sw, budget, latency, self.config.alpha);

        for (v, b) in state.buyers() {
            if !outcome.is_matched(v.id) {
                self.queues[v.rsu.index()].enqueue(v.id, f64::from(b.chunks) * self.config.chunk_mb * 8.0);
            }
        }
        for q in &mut self.queues {
            q.serve(self.config.slot_seconds);
        }
        self.publish(&outcome);

        let positions: Vec<_> = self.topology.vehicles.iter().map(|k| k.position).collect();
        let attachments: Vec<_> = state.vehicles.iter().map(|v| v.rsu).collect();
        let graph =
            GossipGraph::from_topology(&positions, &attachments, self.rsus() as usize, self.config.gossip_range_m);
        for _ in 0..self.config.gossip_rounds_per_slot {
            gossip_round(&graph, &mut self.tables, &mut self.rng);
        }
        self.topology.step(self.config.slot_seconds, self.config.mobility.turn_probability, &mut self.rng)?;

        let urgent_buyers = state.buyers().filter(|(_, b)| b.submarket == Submarket::Urgent).count();
        let buyers = state.buyers().count();
        let report = SlotReport {
            slot: ctx.slot,
            outcome,
            social_welfare: sw,
            budget,
            latency,
            reward,
            urgent_buyers,
            mundane_buyers: buyers - urgent_buyers,
            sellers: state.vehicles.len() - buyers,
        };
        self.slot += 1;
        Ok(report)
    }

    /// RSU `n` writes its latest buyer payment and queue estimate into its
    /// own table with origin id equal to its gossip node index.
    fn publish(&mut self, outcome: &AuctionOutcome) {
        let base = self.vehicles() as usize;
        for n in 0..self.rsus() {
            let rsu = RsuId(n);
            let node = base + rsu.index();
            let origin = node as u32;
            let ts = Timestamp::new(self.slot, 0);
            if let Some(m) = outcome.matches.iter().rev().find(|m| m.rsu == rsu) {
                self.max_price = self.max_price.max(m.buyer_payment);
                self.tables[node].write(price_key(rsu), TableEntry { value: m.buyer_payment, ts, origin });
            }
            let estimate = self.queues[rsu.index()].estimate();
            let ts = Timestamp::new(self.slot, 1);
            self.tables[node].write(queue_key(rsu), TableEntry { value: estimate, ts, origin });
        }
    }

    /// Last price at `rsu` as seen by `vehicle`.
    pub fn observed_price(&self, vehicle: VehicleId, rsu: RsuId) -> Option<f64> {
        last_price(self.vehicle_table(vehicle), rsu)
    }
}
