#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use deeptransport::dataset::ConditionStore;
use deeptransport::graph::{load_graph, AttrRecord, TrafficGraph};

/// The six-road example network: L5 feeds L4, L6 and L2 feed L5, L4 feeds
/// L3, and L3 splits into L1 and L2.
pub fn fig3() -> TrafficGraph {
    let edges: Vec<(String, String)> = [("L5", "L4"), ("L6", "L5"), ("L2", "L5"), ("L4", "L3"), ("L3", "L1"), ("L3", "L2")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    let attrs: Vec<AttrRecord> = ["L1", "L2", "L3", "L4", "L5", "L6"]
        .iter()
        .enumerate()
        .map(|(i, v)| AttrRecord::new(*v, 1 + (i % 4) as u8))
        .collect();
    load_graph(&edges, &attrs, true).unwrap()
}

/// Deterministic codes in 1..=4 on the example network.
pub fn patterned_store(graph: &TrafficGraph, len: usize) -> ConditionStore {
    let mut grid = Vec::with_capacity(graph.len() * len);
    for v in 0..graph.len() {
        for t in 0..len {
            grid.push(1 + ((v * 7 + t * 3 + (t * t) % 5) % 4) as u8);
        }
    }
    ConditionStore::new(graph.ids().to_vec(), 0, len, grid).unwrap()
}
