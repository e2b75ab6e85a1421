//! Deterministic synthetic fixtures: grid road networks with a motorway
//! spine, area placements with raw features, and planted demand models.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::{Centroid, FeatureTable};
use crate::graph::{EdgeRecord, Node, NodeId, RoadClass, RoadGraph, TargetEdge};
use crate::model::{Activation, Architecture, Mlp, ModelParams, PreparedEdge};

/// Relative weights of the non-spine road classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMix {
    pub weights: Vec<(RoadClass, f64)>,
}

impl Default for ClassMix {
    fn default() -> Self {
        ClassMix {
            weights: vec![
                (RoadClass::Primary, 0.2),
                (RoadClass::Secondary, 0.3),
                (RoadClass::Tertiary, 0.3),
                (RoadClass::Residential, 0.2),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Nodes per side of the square grid.
    pub size: usize,
    pub spacing_m: f64,
    pub seed: u64,
    pub class_mix: ClassMix,
    /// Probability that a node hosts an area centroid.
    pub area_share: f64,
    /// Raw feature columns; the first is a population count.
    pub features: usize,
    /// Random non-spine target edges added after the spine.
    pub extra_targets: usize,
    /// Number of vertical region bands used for target labels.
    pub regions: usize,
}

impl SynthSpec {
    pub fn new(size: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            size,
            spacing_m: 1000.0,
            seed,
            class_mix: ClassMix::default(),
            area_share: 1.0,
            features: 6,
            extra_targets: 0,
            regions: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthNetwork {
    pub graph: RoadGraph,
    pub targets: Vec<TargetEdge>,
    pub centroids: Vec<Centroid>,
    pub features: FeatureTable,
}

fn node_id(size: usize, r: usize, c: usize) -> NodeId {
    (r * size + c) as NodeId
}

/// Builds a bidirectional grid. The middle row is a motorway spine and its
/// eastbound edges are the first targets.
pub fn generate_synthetic_network(spec: &SynthSpec) -> Result<SynthNetwork> {
    let n = spec.size;
    if n < 2 {
        return Err(Error::DegenerateSpec("grid size must be at least 2"));
    }
    if !(spec.spacing_m > 0.0) {
        return Err(Error::DegenerateSpec("spacing must be positive"));
    }
    if spec.features == 0 {
        return Err(Error::DegenerateSpec("at least one feature column is needed"));
    }
    let total_w: f64 = spec.class_mix.weights.iter().map(|w| w.1).sum();
    if spec.class_mix.weights.is_empty() || !(total_w > 0.0) {
        return Err(Error::DegenerateSpec("class mix has no positive weight"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.spacing_m;

    let mut nodes = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let jx = rng.random_range(-0.1..0.1) * s;
            let jy = rng.random_range(-0.1..0.1) * s;
            nodes.push(Node { id: node_id(n, r, c), x: c as f64 * s + jx, y: r as f64 * s + jy });
        }
    }

    let spine = n / 2;
    let pick_class = |rng: &mut ChaCha8Rng| {
        let mut x = rng.random_range(0.0..total_w);
        for &(class, w) in &spec.class_mix.weights {
            if x < w {
                return class;
            }
            x -= w;
        }
        spec.class_mix.weights.last().unwrap().0
    };
    let mut edges = Vec::with_capacity(4 * n * (n - 1));
    let mut spine_targets = Vec::new();
    let mut other = Vec::new();
    for r in 0..n {
        for c in 0..n {
            for (dr, dc) in [(0usize, 1usize), (1, 0)] {
                let (r2, c2) = (r + dr, c + dc);
                if r2 >= n || c2 >= n {
                    continue;
                }
                let a = &nodes[r * n + c];
                let b = &nodes[r2 * n + c2];
                let straight = libm::hypot(a.x - b.x, a.y - b.y);
                let length = straight * (1.0 + rng.random_range(0.0..0.3));
                let is_spine = dr == 0 && r == spine;
                let class = if is_spine { RoadClass::Motorway } else { pick_class(&mut rng) };
                for (tail, head) in [(a.id, b.id), (b.id, a.id)] {
                    let id = edges.len() as u64;
                    if is_spine && tail == a.id {
                        spine_targets.push(id);
                    } else {
                        other.push(id);
                    }
                    edges.push(EdgeRecord { id, tail, head, length_m: length, class, posted_mph: None });
                }
            }
        }
    }
    let graph = RoadGraph::new(nodes, edges)?;

    other.shuffle(&mut rng);
    let bands = spec.regions.max(1);
    let region_of = |edge: u64| -> String {
        let e = graph.edge_by_id(edge).unwrap();
        let col = graph.node(e.tail).id as usize % n;
        format!("R{}", col * bands / n)
    };
    let mut targets = Vec::new();
    for &id in spine_targets.iter().chain(other.iter().take(spec.extra_targets)) {
        targets.push(TargetEdge::new(&graph, id, None, Some(region_of(id)))?);
    }

    let mut centroids = Vec::new();
    for node in graph.nodes() {
        if rng.random::<f64>() < spec.area_share {
            centroids.push(Centroid {
                area_id: format!("A{:05}", node.id),
                x: node.x + rng.random_range(-0.2..0.2) * s,
                y: node.y + rng.random_range(-0.2..0.2) * s,
                land_area_km2: rng.random_range(0.5..5.0),
            });
        }
    }
    if centroids.len() < 2 {
        return Err(Error::DegenerateSpec("fewer than two areas were placed"));
    }

    let extent = s * n as f64;
    let noise = Normal::new(0.0, 1.0).unwrap();
    let phases: Vec<(f64, f64, f64)> = (0..spec.features)
        .map(|_| {
            (
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..core::f64::consts::TAU),
                rng.random_range(0.0..core::f64::consts::TAU),
            )
        })
        .collect();
    let mut names = vec![String::from("population")];
    names.extend((1..spec.features).map(|j| format!("f{j}")));
    let rows = centroids
        .iter()
        .map(|c| {
            let (u, v) = (c.x / extent, c.y / extent);
            phases
                .iter()
                .enumerate()
                .map(|(j, &(freq, px, py))| {
                    let field = libm::sin(freq * u * 6.0 + px) * libm::cos(freq * v * 6.0 + py);
                    let z = field + 0.5 * noise.sample(&mut rng);
                    if j == 0 {
                        libm::round(1500.0 * (1.0 + 0.5 * z).max(0.05))
                    } else {
                        z
                    }
                })
                .collect()
        })
        .collect();
    let features = FeatureTable { names, area_ids: centroids.iter().map(|c| c.area_id.clone()).collect(), rows };
    Ok(SynthNetwork { graph, targets, centroids, features })
}

/// Gain on the planted encoder and interaction parameters. At the default
/// initialisation scale the aggregate is driven mostly by the pair count;
/// the gain makes the area features matter.
pub const PLANTED_GAIN: f64 = 2.5;

/// Random demand model whose deterrence is strictly decreasing in travel
/// time: positive first- and second-layer weights through `tanh`, then a
/// negative output layer.
pub fn planted_params(arch: &Architecture, seed: u64) -> ModelParams {
    let mut params = ModelParams::init(arch, seed);
    for mlp in [&mut params.origin, &mut params.destination, &mut params.interaction] {
        mlp.params.iter_mut().for_each(|p| *p *= PLANTED_GAIN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDE7E);
    let dims = params.deterrence.dims.clone();
    let mut det = Mlp::zeros(&dims, Activation::Tanh);
    let nl = dims.len() - 1;
    let mut off = 0;
    for (l, w) in dims.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let bound = 1.0 / libm::sqrt(n_in as f64);
        for p in &mut det.params[off..off + n_in * n_out] {
            *p = match l {
                0 => rng.random_range(0.5..1.5),
                _ if l + 1 == nl => -rng.random_range(0.5..1.5) * bound * 2.0,
                _ => rng.random_range(0.2..1.0) * bound * 2.0,
            };
        }
        for p in &mut det.params[off + n_in * n_out..off + n_in * n_out + n_out] {
            *p = match l {
                0 => rng.random_range(-1.5..1.5),
                _ => rng.random_range(-0.2..0.2),
            };
        }
        off += n_in * n_out + n_out;
    }
    params.deterrence = det;
    params
}

/// Observed volumes `y = y_true * (1 + eta)`, `eta ~ N(0, noise_sd)`,
/// floored at zero.
pub fn planted_volumes(params: &ModelParams, edges: &[PreparedEdge], noise_sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta = Normal::new(0.0, noise_sd.max(0.0)).unwrap();
    edges
        .iter()
        .map(|e| (params.predict(e) * (1.0 + eta.sample(&mut rng))).max(0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_network() {
        let a = generate_synthetic_network(&SynthSpec::new(3, 7)).unwrap();
        let b = generate_synthetic_network(&SynthSpec::new(3, 7)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_network(&SynthSpec::new(3, 8)).unwrap();
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn grid_counts_match_enumeration() {
        for n in 2..7 {
            let net = generate_synthetic_network(&SynthSpec::new(n, 1)).unwrap();
            assert_eq!(net.graph.node_count(), n * n);
            // enumerate ordered neighbour pairs on the lattice
            let mut count = 0;
            for r in 0..n as i64 {
                for c in 0..n as i64 {
                    for (dr, dc) in [(0, 1), (1, 0), (0, -1), (-1, 0)] {
                        let (r2, c2) = (r + dr, c + dc);
                        if (0..n as i64).contains(&r2) && (0..n as i64).contains(&c2) {
                            count += 1;
                        }
                    }
                }
            }
            assert_eq!(net.graph.edge_count(), count);
            assert_eq!(count, 4 * n * (n - 1));
        }
    }

    #[test]
    fn spine_targets_are_motorways() {
        let net = generate_synthetic_network(&SynthSpec::new(5, 2)).unwrap();
        assert_eq!(net.targets.len(), 4);
        for t in &net.targets {
            assert_eq!(net.graph.edge_by_id(t.edge).unwrap().class, RoadClass::Motorway);
        }
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(matches!(
            generate_synthetic_network(&SynthSpec::new(1, 0)),
            Err(Error::DegenerateSpec(_))
        ));
    }

    #[test]
    fn extra_targets_and_regions() {
        let mut spec = SynthSpec::new(6, 3);
        spec.extra_targets = 10;
        let net = generate_synthetic_network(&spec).unwrap();
        assert_eq!(net.targets.len(), 15);
        assert!(net.targets.iter().all(|t| t.region.is_some()));
        let mut ids: Vec<u64> = net.targets.iter().map(|t| t.edge).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 15);
        assert_eq!(net.features.rows.len(), net.centroids.len());
        assert!(net.features.column("population").unwrap().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn planted_deterrence_decreases() {
        let arch = Architecture::new(4);
        for seed in 0..5 {
            let p = planted_params(&arch, seed);
            let mut prev = p.deterrence(0.0);
            for i in 1..=240 {
                let cur = p.deterrence(i as f64 * 30.0);
                assert!(cur < prev);
                prev = cur;
            }
        }
    }
}
