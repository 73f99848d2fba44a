//! Per-RSU data-sharing market for vehicular networks: trader model,
//! hierarchical auctions, network model, price gossip and the slot driver.

pub mod auction;
pub mod gossip;
pub mod market;
pub mod net;
pub mod world;
