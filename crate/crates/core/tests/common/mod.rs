//! Random small graphs plus brute-force references for the search and the
//! pair screening.
#![allow(dead_code)]

use std::collections::BTreeSet;

use deepdemand_core::graph::{EdgeRecord, Node, NodeId, RoadClass, RoadGraph, TargetEdge, MPH_TO_MPS};
use deepdemand_core::od::{Partition, Side};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub graph: RoadGraph,
    pub target: TargetEdge,
    pub has_features: Vec<bool>,
}

/// A random directed graph with shuffled, non-contiguous node ids.
///
/// With `integer_times` every edge takes a whole number of seconds, so equal
/// path times are common and tie handling gets exercised.
pub fn random_case(seed: u64, max_nodes: usize, integer_times: bool) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_nodes);
    let mut ids: Vec<NodeId> = (0..3 * n as u64).collect();
    ids.shuffle(&mut rng);
    ids.truncate(n);
    let nodes: Vec<Node> = ids.iter().map(|&id| Node { id, x: rng.random(), y: rng.random() }).collect();
    let m = rng.random_range(n..=3 * n);
    let mut records = Vec::with_capacity(m + 1);
    let speed = 30.0 * MPH_TO_MPS;
    for e in 0..m {
        let tail = ids[rng.random_range(0..n)];
        let head = ids[rng.random_range(0..n)];
        let record = if integer_times {
            // 30 mph posted: travel time is length / speed
            let t = rng.random_range(1..8) as f64;
            EdgeRecord { id: e as u64, tail, head, length_m: t * speed, class: RoadClass::Other, posted_mph: Some(30.0) }
        } else {
            let class = RoadClass::ALL[rng.random_range(0..RoadClass::ALL.len())];
            let posted = rng.random_bool(0.3).then(|| rng.random_range(10.0..70.0));
            EdgeRecord { id: e as u64, tail, head, length_m: rng.random_range(50.0..3000.0), class, posted_mph: posted }
        };
        records.push(record);
    }
    // the target itself is never a self-loop
    let (a, b) = (ids[0], ids[1]);
    let target_id = m as u64;
    records.push(EdgeRecord {
        id: target_id,
        tail: a,
        head: b,
        length_m: rng.random_range(50.0..3000.0),
        class: RoadClass::Primary,
        posted_mph: None,
    });
    let graph = RoadGraph::new(nodes, records).unwrap();
    let target = TargetEdge::new(&graph, target_id, None, None).unwrap();
    let has_features = (0..n).map(|_| rng.random_bool(0.8)).collect();
    Case { graph, target, has_features }
}

pub struct Replay {
    pub winner: Vec<Option<Side>>,
    /// Arrival time on the winning side.
    pub time: Vec<f64>,
}

/// Discrete-event replay: at every step scan all unclaimed labelled nodes on
/// both sides and claim the smallest `(time, side, node)` event.
pub fn replay(graph: &RoadGraph, target_edge: usize, cutoff: f64) -> Replay {
    let n = graph.node_count();
    let e = graph.edge(target_edge);
    let mut label = [vec![f64::INFINITY; n], vec![f64::INFINITY; n]];
    label[0][e.tail] = 0.0;
    label[1][e.head] = 0.0;
    let mut winner = vec![None; n];
    let mut time = vec![f64::INFINITY; n];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for side in 0..2 {
            for i in 0..n {
                let t = label[side][i];
                if winner[i].is_some() || t > cutoff {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bt, bs, bi)) => (t, side, i) < (bt, bs, bi),
                };
                if better {
                    best = Some((t, side, i));
                }
            }
        }
        let Some((t, side, i)) = best else { break };
        winner[i] = Some(if side == 0 { Side::Origin } else { Side::Destination });
        time[i] = t;
        for edge in graph.edges() {
            let (from, to) = if side == 0 { (edge.head, edge.tail) } else { (edge.tail, edge.head) };
            if from != i || winner[to].is_some() {
                continue;
            }
            let tj = t + edge.travel_time_s;
            if tj <= cutoff && tj < label[side][to] {
                label[side][to] = tj;
            }
        }
    }
    Replay { winner, time }
}

/// Describes every way `got` disagrees with the replay.
pub fn partition_violations(graph: &RoadGraph, got: &Partition, cutoff: f64, has_features: &[bool]) -> Vec<String> {
    let mut out = Vec::new();
    let want = replay(graph, got.target_edge, cutoff);
    for i in 0..graph.node_count() {
        if got.winner[i] != want.winner[i] {
            out.push(format!("node {i}: winner {:?} vs {:?}", got.winner[i], want.winner[i]));
            continue;
        }
        let t = match got.winner[i] {
            Some(Side::Origin) => got.t_origin[i],
            Some(Side::Destination) => got.t_dest[i],
            None => continue,
        };
        if t != want.time[i] {
            out.push(format!("node {i}: time {t} vs {}", want.time[i]));
        }
        if t > cutoff {
            out.push(format!("node {i}: time {t} over cutoff"));
        }
    }
    let o: BTreeSet<usize> = got.origins.iter().copied().collect();
    if got.destinations.iter().any(|d| o.contains(d)) {
        out.push("origin and destination sets intersect".into());
    }
    let expect = |side| -> Vec<usize> {
        (0..graph.node_count()).filter(|&i| want.winner[i] == Some(side) && has_features[i]).collect()
    };
    if got.origins != expect(Side::Origin) {
        out.push(format!("origins {:?}", got.origins));
    }
    if got.destinations != expect(Side::Destination) {
        out.push(format!("destinations {:?}", got.destinations));
    }
    out
}

/// Minimum time over all simple `o -> d` paths, and whether some path
/// attaining it (within `eps`) uses `target_edge`.
pub fn enumerate_paths(graph: &RoadGraph, o: usize, d: usize, target_edge: usize, eps: f64) -> Option<(f64, bool)> {
    let mut paths: Vec<(f64, bool)> = Vec::new();
    let mut on_path = vec![false; graph.node_count()];
    fn dfs(
        graph: &RoadGraph,
        at: usize,
        d: usize,
        target: usize,
        t: f64,
        used: bool,
        on_path: &mut [bool],
        out: &mut Vec<(f64, bool)>,
    ) {
        if at == d {
            out.push((t, used));
            return;
        }
        on_path[at] = true;
        for (idx, e) in graph.edges().iter().enumerate() {
            if e.tail == at && !on_path[e.head] {
                dfs(graph, e.head, d, target, t + e.travel_time_s, used || idx == target, on_path, out);
            }
        }
        on_path[at] = false;
    }
    dfs(graph, o, d, target_edge, 0.0, false, &mut on_path, &mut paths);
    let best = paths.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    Some((best, paths.iter().any(|&(t, used)| used && t <= best + eps)))
}

/// Retained pairs according to exhaustive enumeration.
pub fn screening_reference(graph: &RoadGraph, partition: &Partition, eps: f64) -> BTreeSet<(NodeId, NodeId)> {
    let mut keep = BTreeSet::new();
    for &o in &partition.origins {
        for &d in &partition.destinations {
            if let Some((_, true)) = enumerate_paths(graph, o, d, partition.target_edge, eps) {
                keep.insert((graph.node(o).id, graph.node(d).id));
            }
        }
    }
    keep
}
