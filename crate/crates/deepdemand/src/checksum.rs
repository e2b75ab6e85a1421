//! Content checksums used to tie artifacts together.

use deepdemand_core::features::FeatureBank;
use deepdemand_core::graph::RoadGraph;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 over node coordinates and edge attributes, including the
/// assigned travel times.
pub fn graph_checksum(graph: &RoadGraph) -> String {
    let mut h = Sha256::new();
    h.update((graph.node_count() as u64).to_le_bytes());
    for n in graph.nodes() {
        h.update(n.id.to_le_bytes());
        h.update(n.x.to_bits().to_le_bytes());
        h.update(n.y.to_bits().to_le_bytes());
    }
    h.update((graph.edge_count() as u64).to_le_bytes());
    for e in graph.edges() {
        h.update(e.id.to_le_bytes());
        h.update(graph.node(e.tail).id.to_le_bytes());
        h.update(graph.node(e.head).id.to_le_bytes());
        h.update(e.length_m.to_bits().to_le_bytes());
        h.update(e.class.as_str().as_bytes());
        h.update([0]);
        h.update(e.posted_mph.map_or(u64::MAX, f64::to_bits).to_le_bytes());
        h.update(e.travel_time_s.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn bank_checksum(bank: &FeatureBank) -> String {
    sha256_json(bank)
}

pub fn sha256_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("in-memory values serialise");
    hex::encode(Sha256::digest(bytes))
}

/// Short hash of a configuration value, embedded in outputs.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_json(value)[..16].to_owned()
}
