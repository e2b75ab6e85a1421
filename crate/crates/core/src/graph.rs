//! Directed road network with travel-time weights.
//!
//! Nodes are stored sorted by id, so node indices order the same way as
//! node ids. Edges keep their load order and their external ids.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u64;
pub type EdgeId = u64;

/// Metres per second in one mile per hour.
pub const MPH_TO_MPS: f64 = 0.44704;
const KMH_TO_MPH: f64 = 0.621_371_192_237_334;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoadClass {
    Motorway,
    MotorwayLink,
    Trunk,
    TrunkLink,
    Primary,
    PrimaryLink,
    Secondary,
    SecondaryLink,
    Tertiary,
    TertiaryLink,
    Residential,
    Unclassified,
    Service,
    Other,
}

impl RoadClass {
    pub const ALL: [RoadClass; 14] = [
        RoadClass::Motorway,
        RoadClass::MotorwayLink,
        RoadClass::Trunk,
        RoadClass::TrunkLink,
        RoadClass::Primary,
        RoadClass::PrimaryLink,
        RoadClass::Secondary,
        RoadClass::SecondaryLink,
        RoadClass::Tertiary,
        RoadClass::TertiaryLink,
        RoadClass::Residential,
        RoadClass::Unclassified,
        RoadClass::Service,
        RoadClass::Other,
    ];

    /// Assumed speed in mph when an edge has no usable posted limit.
    pub fn fallback_mph(self) -> f64 {
        match self {
            RoadClass::Motorway => 70.0,
            RoadClass::MotorwayLink => 60.0,
            RoadClass::Trunk => 60.0,
            RoadClass::TrunkLink => 50.0,
            RoadClass::Primary => 45.0,
            RoadClass::PrimaryLink => 40.0,
            RoadClass::Secondary => 35.0,
            RoadClass::SecondaryLink => 30.0,
            RoadClass::Tertiary => 25.0,
            RoadClass::TertiaryLink => 20.0,
            RoadClass::Residential => 15.0,
            RoadClass::Unclassified => 15.0,
            RoadClass::Service => 15.0,
            RoadClass::Other => 30.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoadClass::Motorway => "motorway",
            RoadClass::MotorwayLink => "motorway_link",
            RoadClass::Trunk => "trunk",
            RoadClass::TrunkLink => "trunk_link",
            RoadClass::Primary => "primary",
            RoadClass::PrimaryLink => "primary_link",
            RoadClass::Secondary => "secondary",
            RoadClass::SecondaryLink => "secondary_link",
            RoadClass::Tertiary => "tertiary",
            RoadClass::TertiaryLink => "tertiary_link",
            RoadClass::Residential => "residential",
            RoadClass::Unclassified => "unclassified",
            RoadClass::Service => "service",
            RoadClass::Other => "other",
        }
    }

    /// Parses an OSM `highway` tag. Anything unrecognised is `Other`.
    pub fn from_tag(tag: &str) -> RoadClass {
        let tag = tag.trim();
        RoadClass::ALL
            .iter()
            .copied()
            .find(|c| c.as_str().eq_ignore_ascii_case(tag))
            .unwrap_or(RoadClass::Other)
    }
}

impl fmt::Display for RoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parses a posted speed such as `"70"`, `"70 mph"` or `"50 km/h"` into mph.
///
/// Returns `None` for empty, unparsable or non-positive values.
pub fn parse_posted_speed(raw: &str) -> Option<f64> {
    let s = raw.trim().to_ascii_lowercase();
    if s.is_empty() {
        return None;
    }
    let (num, factor) = if let Some(n) = s.strip_suffix("mph") {
        (n, 1.0)
    } else if let Some(n) = s
        .strip_suffix("km/h")
        .or_else(|| s.strip_suffix("kmh"))
        .or_else(|| s.strip_suffix("kph"))
    {
        (n, KMH_TO_MPH)
    } else {
        (s.as_str(), 1.0)
    };
    let v: f64 = num.trim().parse().ok()?;
    let mph = v * factor;
    (mph.is_finite() && mph > 0.0).then_some(mph)
}

/// Travel time in seconds for one edge.
pub fn edge_travel_time(length_m: f64, class: RoadClass, posted_mph: Option<f64>) -> f64 {
    let mph = match posted_mph {
        Some(v) if v.is_finite() && v > 0.0 => v,
        _ => class.fallback_mph(),
    };
    length_m / (mph * MPH_TO_MPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

/// An edge as read from an edge list, before indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub id: EdgeId,
    pub tail: NodeId,
    pub head: NodeId,
    pub length_m: f64,
    pub class: RoadClass,
    pub posted_mph: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: EdgeId,
    /// Node index of the tail.
    pub tail: usize,
    /// Node index of the head.
    pub head: usize,
    pub length_m: f64,
    pub class: RoadClass,
    pub posted_mph: Option<f64>,
    pub travel_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    node_index: BTreeMap<NodeId, usize>,
    edge_index: BTreeMap<EdgeId, usize>,
    out_offsets: Vec<usize>,
    out_list: Vec<usize>,
    in_offsets: Vec<usize>,
    in_list: Vec<usize>,
}

impl RoadGraph {
    /// Builds and validates a graph, then assigns travel times.
    pub fn new(mut nodes: Vec<Node>, records: Vec<EdgeRecord>) -> Result<RoadGraph> {
        nodes.sort_by_key(|n| n.id);
        let mut node_index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id, i).is_some() {
                return Err(Error::DuplicateNode(n.id));
            }
        }

        let bad_length: Vec<EdgeId> = records
            .iter()
            .filter(|r| !(r.length_m.is_finite() && r.length_m > 0.0))
            .map(|r| r.id)
            .collect();
        if !bad_length.is_empty() {
            return Err(Error::InvalidEdges {
                reason: "non-positive or non-finite length",
                edges: bad_length,
            });
        }

        let mut edge_index = BTreeMap::new();
        let mut edges = Vec::with_capacity(records.len());
        for r in records {
            let tail = *node_index.get(&r.tail).ok_or(Error::UnknownNode(r.tail))?;
            let head = *node_index.get(&r.head).ok_or(Error::UnknownNode(r.head))?;
            if edge_index.insert(r.id, edges.len()).is_some() {
                return Err(Error::DuplicateEdge(r.id));
            }
            edges.push(Edge {
                id: r.id,
                tail,
                head,
                length_m: r.length_m,
                class: r.class,
                posted_mph: r.posted_mph,
                travel_time_s: 0.0,
            });
        }

        let n = nodes.len();
        let (out_offsets, out_list) = csr(n, edges.iter().map(|e| e.tail));
        let (in_offsets, in_list) = csr(n, edges.iter().map(|e| e.head));
        let mut graph = RoadGraph {
            nodes,
            edges,
            node_index,
            edge_index,
            out_offsets,
            out_list,
            in_offsets,
            in_list,
        };
        graph.assign_travel_times();
        Ok(graph)
    }

    /// Recomputes every edge's travel time from its length and speed.
    pub fn assign_travel_times(&mut self) {
        for e in &mut self.edges {
            e.travel_time_s = edge_travel_time(e.length_m, e.class, e.posted_mph);
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, index: usize) -> &Node {
        &self.nodes[index]
    }

    pub fn edge(&self, index: usize) -> &Edge {
        &self.edges[index]
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.node_index.get(&id).copied()
    }

    pub fn edge_index(&self, id: EdgeId) -> Option<usize> {
        self.edge_index.get(&id).copied()
    }

    pub fn edge_by_id(&self, id: EdgeId) -> Option<&Edge> {
        self.edge_index(id).map(|i| &self.edges[i])
    }

    /// Edges leaving node `index`.
    pub fn out_edges(&self, index: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.out_list[self.out_offsets[index]..self.out_offsets[index + 1]]
            .iter()
            .map(move |&e| &self.edges[e])
    }

    /// Edges entering node `index`.
    pub fn in_edges(&self, index: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.in_list[self.in_offsets[index]..self.in_offsets[index + 1]]
            .iter()
            .map(move |&e| &self.edges[e])
    }
}

fn csr(n: usize, keys: impl Iterator<Item = usize> + Clone) -> (Vec<usize>, Vec<usize>) {
    let mut offsets = alloc::vec![0usize; n + 1];
    for k in keys.clone() {
        offsets[k + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut fill = offsets.clone();
    let mut list = alloc::vec![0usize; offsets[n]];
    for (e, k) in keys.enumerate() {
        list[fill[k]] = e;
        fill[k] += 1;
    }
    (offsets, list)
}

/// A road segment with (optionally) observed traffic volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEdge {
    pub edge: EdgeId,
    pub tail: NodeId,
    pub head: NodeId,
    pub travel_time_s: f64,
    /// Observed AADT, vehicles per day.
    pub volume: Option<f64>,
    pub region: Option<String>,
}

impl TargetEdge {
    pub fn new(
        graph: &RoadGraph,
        edge: EdgeId,
        volume: Option<f64>,
        region: Option<String>,
    ) -> Result<TargetEdge> {
        let e = graph.edge_by_id(edge).ok_or(Error::UnknownEdge(edge))?;
        if let Some(y) = volume {
            if !(y >= 0.0) {
                return Err(Error::NegativeVolume(edge));
            }
        }
        Ok(TargetEdge {
            edge,
            tail: graph.node(e.tail).id,
            head: graph.node(e.head).id,
            travel_time_s: e.travel_time_s,
            volume,
            region,
        })
    }

    pub fn observed(&self) -> Result<f64> {
        self.volume.ok_or(Error::MissingVolume(self.edge))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn line(len: f64, class: RoadClass, posted: Option<f64>) -> RoadGraph {
        RoadGraph::new(
            vec![Node { id: 1, x: 0.0, y: 0.0 }, Node { id: 2, x: len, y: 0.0 }],
            vec![EdgeRecord { id: 10, tail: 1, head: 2, length_m: len, class, posted_mph: posted }],
        )
        .unwrap()
    }

    #[test]
    fn motorway_mile_without_posted_speed() {
        let g = line(1609.34, RoadClass::Motorway, None);
        let t = g.edge(0).travel_time_s;
        assert!((t - 1609.34 / (70.0 * 0.44704)).abs() < 1e-12);
        assert!((t - 51.43).abs() < 5e-3);
    }

    #[test]
    fn residential_hundred_seconds() {
        let g = line(670.56, RoadClass::Residential, None);
        assert!((g.edge(0).travel_time_s - 100.0).abs() < 1e-9);
    }

    #[test]
    fn fallback_table_per_class() {
        let expected = [
            (RoadClass::Motorway, 70.0),
            (RoadClass::MotorwayLink, 60.0),
            (RoadClass::Trunk, 60.0),
            (RoadClass::TrunkLink, 50.0),
            (RoadClass::Primary, 45.0),
            (RoadClass::PrimaryLink, 40.0),
            (RoadClass::Secondary, 35.0),
            (RoadClass::SecondaryLink, 30.0),
            (RoadClass::Tertiary, 25.0),
            (RoadClass::TertiaryLink, 20.0),
            (RoadClass::Residential, 15.0),
            (RoadClass::Unclassified, 15.0),
            (RoadClass::Service, 15.0),
            (RoadClass::Other, 30.0),
        ];
        for (class, mph) in expected {
            let g = line(1000.0, class, None);
            assert_eq!(g.edge(0).travel_time_s, 1000.0 / (mph * MPH_TO_MPS), "{class}");
            // posted speed equal to the fallback gives the same time
            let p = line(1000.0, class, Some(mph));
            assert_eq!(p.edge(0).travel_time_s, g.edge(0).travel_time_s);
            assert_eq!(RoadClass::from_tag(class.as_str()), class);
        }
        assert_eq!(RoadClass::from_tag("living_street"), RoadClass::Other);
    }

    #[test]
    fn posted_speed_overrides_class() {
        let g = line(1000.0, RoadClass::Residential, Some(30.0));
        assert_eq!(g.edge(0).travel_time_s, 1000.0 / (30.0 * MPH_TO_MPS));
        let bad = line(1000.0, RoadClass::Residential, Some(0.0));
        assert_eq!(bad.edge(0).travel_time_s, 1000.0 / (15.0 * MPH_TO_MPS));
    }

    #[test]
    fn parses_speed_strings() {
        assert_eq!(parse_posted_speed("70 mph"), Some(70.0));
        assert_eq!(parse_posted_speed(" 40"), Some(40.0));
        assert_eq!(parse_posted_speed("20mph"), Some(20.0));
        let kmh = parse_posted_speed("50 km/h").unwrap();
        assert!((kmh - 31.068_559_6).abs() < 1e-6);
        assert_eq!(parse_posted_speed(""), None);
        assert_eq!(parse_posted_speed("signals"), None);
        assert_eq!(parse_posted_speed("-5"), None);
    }

    #[test]
    fn rejects_bad_lengths_listing_ids() {
        let nodes = vec![Node { id: 1, x: 0.0, y: 0.0 }, Node { id: 2, x: 1.0, y: 0.0 }];
        let rec = |id, len| EdgeRecord {
            id,
            tail: 1,
            head: 2,
            length_m: len,
            class: RoadClass::Primary,
            posted_mph: None,
        };
        let err = RoadGraph::new(nodes, vec![rec(1, 5.0), rec(2, 0.0), rec(3, -1.0)]).unwrap_err();
        match err {
            Error::InvalidEdges { edges, .. } => assert_eq!(edges, vec![2, 3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_dangling_edges() {
        let nodes = vec![Node { id: 1, x: 0.0, y: 0.0 }];
        let rec = EdgeRecord {
            id: 1,
            tail: 1,
            head: 9,
            length_m: 5.0,
            class: RoadClass::Primary,
            posted_mph: None,
        };
        assert_eq!(RoadGraph::new(nodes, vec![rec]).unwrap_err(), Error::UnknownNode(9));
    }

    #[test]
    fn parallel_edges_are_distinct() {
        let nodes = vec![Node { id: 1, x: 0.0, y: 0.0 }, Node { id: 2, x: 1.0, y: 0.0 }];
        let rec = |id, len| EdgeRecord {
            id,
            tail: 1,
            head: 2,
            length_m: len,
            class: RoadClass::Primary,
            posted_mph: None,
        };
        let g = RoadGraph::new(nodes, vec![rec(7, 5.0), rec(8, 6.0)]).unwrap();
        assert_eq!(g.out_edges(0).count(), 2);
        assert_eq!(g.in_edges(1).count(), 2);
        assert_eq!(g.edge_by_id(8).unwrap().length_m, 6.0);
    }

    #[test]
    fn target_edge_rejects_negative_volume() {
        let g = line(100.0, RoadClass::Primary, None);
        assert_eq!(
            TargetEdge::new(&g, 10, Some(-1.0), None).unwrap_err(),
            Error::NegativeVolume(10)
        );
        let t = TargetEdge::new(&g, 10, Some(5.0), None).unwrap();
        assert_eq!(t.travel_time_s, g.edge(0).travel_time_s);
        assert_eq!(TargetEdge::new(&g, 11, None, None).unwrap_err(), Error::UnknownEdge(11));
    }
}
