//! Area feature bank: z-scoring, PCA reduction and node attachment.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, RoadGraph};

/// Default number of retained principal components.
pub const DEFAULT_COMPONENTS: usize = 64;

/// Raw per-area features. Missing values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub area_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub area_id: String,
    pub x: f64,
    pub y: f64,
    pub land_area_km2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBank {
    pub names: Vec<String>,
    pub area_ids: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Features with zero variance, mapped to a constant 0.
    pub constant: Vec<bool>,
    /// `k` unit loading vectors of length `F`, by descending eigenvalue.
    pub loadings: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    /// Row-major `areas x k`.
    reduced: Vec<f64>,
    pub land_area_km2: Vec<Option<f64>>,
    pub node_of_area: Vec<Option<NodeId>>,
    area_of_node: BTreeMap<NodeId, usize>,
}

impl FeatureBank {
    /// Fits z-score normalisation and PCA on all rows and projects them onto
    /// the top `k` components.
    pub fn fit_transform(table: &FeatureTable, k: usize) -> Result<FeatureBank> {
        let n = table.rows.len();
        let f = table.names.len();
        if n < 2 {
            return Err(Error::TooFewRows(n));
        }
        if k == 0 || k > f {
            return Err(Error::TooManyComponents { k, features: f });
        }
        for r in &table.rows {
            if r.len() != f {
                return Err(Error::DimensionMismatch { expected: f, found: r.len() });
            }
        }

        let mut means = vec![0.0; f];
        let mut stds = vec![0.0; f];
        let mut constant = vec![false; f];
        for j in 0..f {
            let present: Vec<f64> =
                table.rows.iter().map(|r| r[j]).filter(|v| v.is_finite()).collect();
            if present.is_empty() {
                constant[j] = true;
                continue;
            }
            let m = present.iter().sum::<f64>() / present.len() as f64;
            // imputed values sit at the mean and add nothing to the variance
            let var = present.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            means[j] = m;
            stds[j] = libm::sqrt(var);
            if !(stds[j] > 0.0) {
                constant[j] = true;
                log::warn!("feature {} has zero variance; mapped to 0", table.names[j]);
            }
        }

        let z = DMatrix::from_fn(n, f, |i, j| zscore(table.rows[i][j], j, &means, &stds, &constant));
        let cov = (z.transpose() * &z) / (n as f64 - 1.0);
        let total_variance = cov.trace();
        let eig = SymmetricEigen::new(cov);

        let mut order: Vec<usize> = (0..f).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut loadings = Vec::with_capacity(k);
        let mut explained_variance = Vec::with_capacity(k);
        for &c in order.iter().take(k) {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            orient(&mut v);
            loadings.push(v);
            explained_variance.push(eig.eigenvalues[c].max(0.0));
        }

        let mut bank = FeatureBank {
            names: table.names.clone(),
            area_ids: table.area_ids.clone(),
            means,
            stds,
            constant,
            loadings,
            explained_variance,
            total_variance,
            reduced: Vec::new(),
            land_area_km2: vec![None; n],
            node_of_area: vec![None; n],
            area_of_node: BTreeMap::new(),
        };
        bank.reduced = bank.project(&table.rows)?;
        Ok(bank)
    }

    pub fn k(&self) -> usize {
        self.loadings.len()
    }

    pub fn area_count(&self) -> usize {
        self.area_ids.len()
    }

    /// Applies the stored normalisation and projection to raw rows.
    pub fn project(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let f = self.names.len();
        let mut out = Vec::with_capacity(rows.len() * self.k());
        for r in rows {
            if r.len() != f {
                return Err(Error::DimensionMismatch { expected: f, found: r.len() });
            }
            let z: Vec<f64> =
                (0..f).map(|j| zscore(r[j], j, &self.means, &self.stds, &self.constant)).collect();
            for l in &self.loadings {
                out.push(dot(l, &z));
            }
        }
        Ok(out)
    }

    /// Maps reduced vectors back to z-score space.
    pub fn reconstruct(&self, reduced: &[f64]) -> Vec<f64> {
        let f = self.names.len();
        let mut z = vec![0.0; f];
        for (c, l) in reduced.iter().zip(&self.loadings) {
            for j in 0..f {
                z[j] += c * l[j];
            }
        }
        z
    }

    /// Z-scored version of a raw row, as used before projection.
    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        (0..self.names.len())
            .map(|j| zscore(row[j], j, &self.means, &self.stds, &self.constant))
            .collect()
    }

    /// Replaces the reduced vectors with those of an alternate raw table,
    /// keeping the fitted transform and node assignments.
    pub fn with_features(&self, table: &FeatureTable) -> Result<FeatureBank> {
        if table.names != self.names {
            return Err(Error::Invalid("alternate feature columns differ from the fitted bank".into()));
        }
        let index: BTreeMap<&str, usize> =
            table.area_ids.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
        let mut rows = Vec::with_capacity(self.area_count());
        for a in &self.area_ids {
            let i = index
                .get(a.as_str())
                .ok_or_else(|| Error::Invalid(alloc::format!("alternate features lack area {a}")))?;
            rows.push(table.rows[*i].clone());
        }
        let mut bank = self.clone();
        bank.reduced = self.project(&rows)?;
        Ok(bank)
    }

    pub fn vector(&self, area: usize) -> &[f64] {
        let k = self.k();
        &self.reduced[area * k..(area + 1) * k]
    }

    pub fn reduced(&self) -> &[f64] {
        &self.reduced
    }

    pub fn area_of_node(&self, node: NodeId) -> Option<usize> {
        self.area_of_node.get(&node).copied()
    }

    pub fn feature_nodes(&self) -> impl Iterator<Item = (NodeId, usize)> + '_ {
        self.area_of_node.iter().map(|(&n, &a)| (n, a))
    }

    pub fn area_index(&self, area_id: &str) -> Option<usize> {
        self.area_ids.iter().position(|a| a == area_id)
    }

    /// Marks graph nodes (by index) that carry a feature vector.
    pub fn feature_mask(&self, graph: &RoadGraph) -> Vec<bool> {
        let mut mask = vec![false; graph.node_count()];
        for (node, _) in self.feature_nodes() {
            if let Some(i) = graph.node_index(node) {
                mask[i] = true;
            }
        }
        mask
    }

    /// Assigns each area to its nearest graph node by planar distance.
    ///
    /// Ties between nodes go to the smaller node id. When several areas
    /// share a nearest node the nearest area keeps it and the others stay
    /// unattached.
    pub fn attach_to_nodes(mut self, graph: &RoadGraph, centroids: &[Centroid]) -> Result<FeatureBank> {
        if graph.node_count() == 0 {
            return Err(Error::EmptyGraph);
        }
        let by_id: BTreeMap<&str, &Centroid> =
            centroids.iter().map(|c| (c.area_id.as_str(), c)).collect();

        let mut best: BTreeMap<NodeId, (f64, usize)> = BTreeMap::new();
        for (a, id) in self.area_ids.iter().enumerate() {
            let c = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Invalid(alloc::format!("no centroid for area {id}")))?;
            self.land_area_km2[a] = Some(c.land_area_km2);
            let (node, dist2) = nearest_node(graph, c.x, c.y);
            match best.get(&node) {
                Some(&(d, other)) if d <= dist2 => {
                    log::warn!("area {} displaced from node {node} by area {}", id, self.area_ids[other]);
                }
                Some(&(_, other)) => {
                    log::warn!("area {} displaced from node {node} by area {}", self.area_ids[other], id);
                    best.insert(node, (dist2, a));
                }
                None => {
                    best.insert(node, (dist2, a));
                }
            }
        }

        self.node_of_area = vec![None; self.area_count()];
        self.area_of_node.clear();
        for (node, (_, a)) in best {
            self.node_of_area[a] = Some(node);
            self.area_of_node.insert(node, a);
        }
        Ok(self)
    }
}

fn nearest_node(graph: &RoadGraph, x: f64, y: f64) -> (NodeId, f64) {
    let mut best = (graph.node(0).id, f64::INFINITY);
    for n in graph.nodes() {
        let d = (n.x - x) * (n.x - x) + (n.y - y) * (n.y - y);
        if d < best.1 {
            best = (n.id, d);
        }
    }
    best
}

fn zscore(v: f64, j: usize, means: &[f64], stds: &[f64], constant: &[bool]) -> f64 {
    if constant[j] || !v.is_finite() {
        0.0
    } else {
        (v - means[j]) / stds[j]
    }
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn orient(v: &mut [f64]) {
    let mut idx = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[idx].abs() {
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
