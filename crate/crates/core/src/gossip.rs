//! Random push-pull gossip of a last-writer-wins price table.
//!
//! The table is a state-based CRDT: merge keeps, per key, the entry with the
//! greatest `(timestamp, origin)` and falls back to the value's bit pattern
//! so that merge stays a total, deterministic join even when two writers
//! reuse a stamp.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::market::RsuId;
use crate::net::Point;

/// Writer-assigned logical time: slot, then sequence within the slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub slot: u64,
    pub seq: u64,
}

impl Timestamp {
    pub const fn new(slot: u64, seq: u64) -> Self {
        Self { slot, seq }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub value: f64,
    pub ts: Timestamp,
    pub origin: u32,
}

impl TableEntry {
    fn order(&self, other: &Self) -> Ordering {
        (self.ts, self.origin)
            .cmp(&(other.ts, other.origin))
            .then_with(|| self.value.to_bits().cmp(&other.value.to_bits()))
    }
}

pub fn price_key(rsu: RsuId) -> String {
    format!("price/rsu/{}", rsu.0)
}

pub fn queue_key(rsu: RsuId) -> String {
    format!("queue/rsu/{}", rsu.0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable {
    entries: BTreeMap<String, TableEntry>,
}

impl PriceTable {
    pub fn get(&self, key: &str) -> Option<&TableEntry> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TableEntry)> {
        self.entries.iter()
    }

    /// Applies a write if it wins against the current entry for `key`.
    /// Returns whether the table changed.
    pub fn write(&mut self, key: impl Into<String>, entry: TableEntry) -> bool {
        match self.entries.entry(key.into()) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(entry);
                true
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                if entry.order(o.get()) == Ordering::Greater {
                    o.insert(entry);
                    true
                } else {
                    false
                }
            }
        }
    }

    pub fn merge_from(&mut self, other: &PriceTable) {
        for (k, e) in &other.entries {
            self.write(k.clone(), *e);
        }
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("table serializes")
    }
}

pub fn merge_tables(a: &PriceTable, b: &PriceTable) -> PriceTable {
    let mut out = a.clone();
    out.merge_from(b);
    out
}

/// Last transaction price recorded for `rsu`.
pub fn last_price(table: &PriceTable, rsu: RsuId) -> Option<f64> {
    table.get(&price_key(rsu)).map(|e| e.value)
}

pub fn queue_estimate(table: &PriceTable, rsu: RsuId) -> Option<f64> {
    table.get(&queue_key(rsu)).map(|e| e.value)
}

/// Undirected graph with sorted, duplicate-free adjacency lists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipGraph {
    adjacency: Vec<Vec<usize>>,
}

impl GossipGraph {
    pub fn from_edges(nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); nodes];
        for (a, b) in edges {
            if a != b && a < nodes && b < nodes {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { adjacency }
    }

    /// Vehicles are nodes `0..V`, RSUs are `V..V+N`. Vehicles within
    /// `range_m` of each other are adjacent and every vehicle is adjacent to
    /// its attached RSU.
    pub fn from_topology(positions: &[Point], attachments: &[RsuId], rsus: usize, range_m: f64) -> Self {
        let v = positions.len();
        let mut edges = Vec::new();
        for i in 0..v {
            for j in i + 1..v {
                if positions[i].distance(positions[j]) <= range_m {
                    edges.push((i, j));
                }
            }
        }
        edges.extend(attachments.iter().enumerate().map(|(i, r)| (i, v + r.index())));
        Self::from_edges(v + rsus, edges)
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn is_connected(&self) -> bool {
        if self.adjacency.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &m in &self.adjacency[n] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// One synchronous round: every node with a neighbour draws one uniformly
/// and both sides merge each other's pre-round table. Draws happen in node
/// order. Returns the contacted peer of each node.
pub fn gossip_round<R: Rng + ?Sized>(
    graph: &GossipGraph,
    tables: &mut [PriceTable],
    rng: &mut R,
) -> Vec<Option<usize>> {
    assert_eq!(graph.len(), tables.len(), "one table per node");
    let peers: Vec<Option<usize>> = (0..graph.len())
        .map(|i| {
            let n = graph.neighbors(i);
            (!n.is_empty()).then(|| n[rng.random_range(0..n.len())])
        })
        .collect();
    let snapshot = tables.to_vec();
    for (i, peer) in peers.iter().enumerate() {
        if let Some(j) = *peer {
            tables[i].merge_from(&snapshot[j]);
            tables[j].merge_from(&snapshot[i]);
        }
    }
    peers
}

pub fn all_identical(tables: &[PriceTable]) -> bool {
    tables.windows(2).all(|w| w[0] == w[1])
}

/// Runs rounds until every table is identical, up to `max_rounds`.
pub fn rounds_to_converge<R: Rng + ?Sized>(
    graph: &GossipGraph,
    tables: &mut [PriceTable],
    max_rounds: usize,
    rng: &mut R,
) -> Option<usize> {
    for round in 0..=max_rounds {
        if all_identical(tables) {
            return Some(round);
        }
        if round < max_rounds {
            gossip_round(graph, tables, rng);
        }
    }
    None
}
