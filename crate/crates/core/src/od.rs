//! Origin/destination territories around a target edge and OD pair screening.
//!
//! The competitive search runs both sides in one priority queue. The
//! origin side walks reversed edges from the tail `u`, the destination side
//! walks forward edges from the head `v`, and whichever side settles a node
//! first owns it. Screening then keeps the pairs whose fastest route goes
//! through the target edge.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, NodeId, RoadGraph, TargetEdge};

/// One hour.
pub const DEFAULT_CUTOFF_S: f64 = 3600.0;
pub const DEFAULT_EPSILON_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Origin,
    Destination,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    t: f64,
    side: Side,
    node: usize,
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t
            .total_cmp(&other.t)
            .then(self.side.cmp(&other.side))
            .then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

/// Result of the competitive search. Per-node vectors are indexed by node
/// index; unreached entries hold `f64::INFINITY` / `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub target_edge: usize,
    pub cutoff_s: f64,
    pub winner: Vec<Option<Side>>,
    pub t_origin: Vec<f64>,
    pub t_dest: Vec<f64>,
    pub pred_origin: Vec<Option<usize>>,
    pub pred_dest: Vec<Option<usize>>,
    /// Feature-carrying nodes claimed by the origin side, ascending.
    pub origins: Vec<usize>,
    /// Feature-carrying nodes claimed by the destination side, ascending.
    pub destinations: Vec<usize>,
}

impl Partition {
    pub fn territory(&self, side: Side) -> impl Iterator<Item = usize> + '_ {
        self.winner
            .iter()
            .enumerate()
            .filter(move |(_, w)| **w == Some(side))
            .map(|(i, _)| i)
    }
}

fn resolve_target(graph: &RoadGraph, target: &TargetEdge) -> Result<usize> {
    let idx = graph.edge_index(target.edge).ok_or(Error::UnknownEdge(target.edge))?;
    let e = graph.edge(idx);
    if e.tail == e.head {
        return Err(Error::SelfLoopTarget(target.edge));
    }
    Ok(idx)
}

fn check_cutoff(cutoff_s: f64) -> Result<()> {
    if cutoff_s.is_nan() || cutoff_s < 0.0 {
        return Err(Error::Invalid(alloc::format!("cutoff must be non-negative, got {cutoff_s}")));
    }
    Ok(())
}

/// Competitive two-source Dijkstra around `target`.
///
/// `has_features[i]` says whether node index `i` may be emitted as an
/// origin or destination; other nodes are still traversed and claimed.
pub fn two_source_dijkstra(
    graph: &RoadGraph,
    target: &TargetEdge,
    cutoff_s: f64,
    has_features: &[bool],
) -> Result<Partition> {
    check_cutoff(cutoff_s)?;
    let edge_idx = resolve_target(graph, target)?;
    let (u, v) = (graph.edge(edge_idx).tail, graph.edge(edge_idx).head);
    let n = graph.node_count();

    let mut t_origin = vec![f64::INFINITY; n];
    let mut t_dest = vec![f64::INFINITY; n];
    let mut pred_origin = vec![None; n];
    let mut pred_dest = vec![None; n];
    let mut winner: Vec<Option<Side>> = vec![None; n];
    t_origin[u] = 0.0;
    t_dest[v] = 0.0;

    let mut queue = BinaryHeap::new();
    queue.push(Reverse(Entry { t: 0.0, side: Side::Origin, node: u }));
    queue.push(Reverse(Entry { t: 0.0, side: Side::Destination, node: v }));

    while let Some(Reverse(Entry { t, side, node })) = queue.pop() {
        if t > cutoff_s || winner[node].is_some() {
            continue;
        }
        winner[node] = Some(side);
        match side {
            Side::Origin => {
                for e in graph.in_edges(node) {
                    let j = e.tail;
                    if winner[j].is_some() {
                        continue;
                    }
                    let tj = t + e.travel_time_s;
                    if tj <= cutoff_s && tj < t_origin[j] {
                        t_origin[j] = tj;
                        pred_origin[j] = Some(node);
                        queue.push(Reverse(Entry { t: tj, side, node: j }));
                    }
                }
            }
            Side::Destination => {
                for e in graph.out_edges(node) {
                    let j = e.head;
                    if winner[j].is_some() {
                        continue;
                    }
                    let tj = t + e.travel_time_s;
                    if tj <= cutoff_s && tj < t_dest[j] {
                        t_dest[j] = tj;
                        pred_dest[j] = Some(node);
                        queue.push(Reverse(Entry { t: tj, side, node: j }));
                    }
                }
            }
        }
    }

    let pick = |side: Side| -> Vec<usize> {
        (0..n)
            .filter(|&i| winner[i] == Some(side) && has_features.get(i).copied().unwrap_or(false))
            .collect()
    };
    let origins = pick(Side::Origin);
    let destinations = pick(Side::Destination);
    Ok(Partition {
        target_edge: edge_idx,
        cutoff_s,
        winner,
        t_origin,
        t_dest,
        pred_origin,
        pred_dest,
        origins,
        destinations,
    })
}

/// Reusable state for bounded single-source Dijkstra runs.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    dist: Vec<f64>,
    done: Vec<bool>,
    touched: Vec<usize>,
    heap: BinaryHeap<Reverse<Entry>>,
}

impl Scratch {
    pub fn new(n: usize) -> Scratch {
        Scratch {
            dist: vec![f64::INFINITY; n],
            done: vec![false; n],
            touched: Vec::new(),
            heap: BinaryHeap::new(),
        }
    }

    fn reset(&mut self, n: usize) {
        if self.dist.len() != n {
            *self = Scratch::new(n);
            return;
        }
        for &i in &self.touched {
            self.dist[i] = f64::INFINITY;
            self.done[i] = false;
        }
        self.touched.clear();
        self.heap.clear();
    }

    /// Shortest forward times from `source`, exploring only up to `radius`.
    /// Nodes beyond the radius read as infinity.
    pub fn run(&mut self, graph: &RoadGraph, source: usize, radius: f64) -> &[f64] {
        self.reset(graph.node_count());
        self.dist[source] = 0.0;
        self.touched.push(source);
        self.heap.push(Reverse(Entry { t: 0.0, side: Side::Destination, node: source }));
        while let Some(Reverse(Entry { t, node, .. })) = self.heap.pop() {
            if self.done[node] {
                continue;
            }
            self.done[node] = true;
            for e in graph.out_edges(node) {
                let j = e.head;
                let tj = t + e.travel_time_s;
                if tj <= radius && tj < self.dist[j] {
                    if self.dist[j].is_infinite() {
                        self.touched.push(j);
                    }
                    self.dist[j] = tj;
                    self.heap.push(Reverse(Entry { t: tj, side: Side::Destination, node: j }));
                }
            }
        }
        &self.dist
    }
}

/// A retained OD pair with the times that make up its through-edge route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: NodeId,
    pub destination: NodeId,
    /// Shortest time from the origin to the target's tail.
    pub t_origin: f64,
    /// Shortest time from the target's head to the destination.
    pub t_dest: f64,
    /// Total route time `t_origin + t_edge + t_dest`.
    pub t_od: f64,
}

/// Keeps the pairs of `origins x destinations` whose unconstrained fastest
/// route passes through the target edge.
///
/// The shortest origin-to-tail and head-to-destination times are taken on
/// the full graph: the competitive arrival times can exceed them when the
/// fastest approach runs through territory claimed by the other side.
/// One bounded search runs per origin, so the cost is `|origins|` searches
/// rather than one per pair.
pub fn screen_od_pairs(
    graph: &RoadGraph,
    partition: &Partition,
    epsilon_s: f64,
    scratch: &mut Scratch,
) -> Vec<OdPair> {
    if partition.origins.is_empty() || partition.destinations.is_empty() {
        return Vec::new();
    }
    let edge = graph.edge(partition.target_edge);
    let (u, v, t_edge) = (edge.tail, edge.head, edge.travel_time_s);

    let max_dest = partition
        .destinations
        .iter()
        .map(|&d| partition.t_dest[d])
        .fold(0.0f64, f64::max);
    let from_head: Vec<f64> = {
        let dist = scratch.run(graph, v, max_dest + epsilon_s);
        partition.destinations.iter().map(|&d| dist[d]).collect()
    };

    let mut pairs = Vec::new();
    for &o in &partition.origins {
        let radius = partition.t_origin[o] + t_edge + max_dest + epsilon_s;
        let dist = scratch.run(graph, o, radius);
        let to_tail = dist[u];
        for (&d, &t_dest) in partition.destinations.iter().zip(&from_head) {
            let through = to_tail + t_edge + t_dest;
            if (through - dist[d]).abs() <= epsilon_s {
                pairs.push(OdPair {
                    origin: graph.node(o).id,
                    destination: graph.node(d).id,
                    t_origin: to_tail,
                    t_dest,
                    t_od: through,
                });
            }
        }
    }
    pairs
}

/// Everything the demand model needs about one target edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdContext {
    pub target: EdgeId,
    pub cutoff_s: f64,
    pub epsilon_s: f64,
    /// Origin nodes with their competitive arrival times.
    pub origins: Vec<(NodeId, f64)>,
    /// Destination nodes with their competitive arrival times.
    pub destinations: Vec<(NodeId, f64)>,
    pub pairs: Vec<OdPair>,
}

/// Runs the competitive search and screening for a single target.
pub fn extract_context(
    graph: &RoadGraph,
    target: &TargetEdge,
    cutoff_s: f64,
    epsilon_s: f64,
    has_features: &[bool],
    scratch: &mut Scratch,
) -> Result<OdContext> {
    let partition = two_source_dijkstra(graph, target, cutoff_s, has_features)?;
    let pairs = screen_od_pairs(graph, &partition, epsilon_s, scratch);
    let ids = |nodes: &[usize], t: &[f64]| -> Vec<(NodeId, f64)> {
        nodes.iter().map(|&i| (graph.node(i).id, t[i])).collect()
    };
    Ok(OdContext {
        target: target.edge,
        cutoff_s,
        epsilon_s,
        origins: ids(&partition.origins, &partition.t_origin),
        destinations: ids(&partition.destinations, &partition.t_dest),
        pairs,
    })
}
