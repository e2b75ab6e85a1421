//! The demand predictor.
//!
//! For every screened pair `(o, d)` of a target edge the origin and
//! destination feature vectors pass through separate encoders, the
//! concatenated embeddings through an interaction network with a Softplus
//! head (flow potential `s`), and the standardised route time through a
//! deterrence network with a sigmoid head (`p`). The edge volume is
//! `gamma * f(sum s * p)`.

mod mlp;
mod optim;
mod train;

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use mlp::{Activation, Mlp, MlpCache};
pub use optim::{clip_global_norm, AdamW, AdamWConfig};
pub use train::{evaluate_mgeh, split_validation, train, EvalPoint, TrainConfig, TrainLog};

use crate::error::{Error, Result};
use crate::features::FeatureBank;
use crate::graph::{EdgeId, NodeId};
use crate::numeric::{exact_sum, sigmoid, softplus};
use crate::od::OdContext;

/// Guard inside the square root's derivative.
const SQRT_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputTransform {
    Sqrt,
    Identity,
    Log1p,
}

impl OutputTransform {
    pub fn apply(self, s: f64) -> f64 {
        match self {
            OutputTransform::Sqrt => libm::sqrt(s),
            OutputTransform::Identity => s,
            OutputTransform::Log1p => libm::log1p(s),
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        match self {
            OutputTransform::Sqrt => 0.5 / libm::sqrt(s + SQRT_GUARD),
            OutputTransform::Identity => 1.0,
            OutputTransform::Log1p => 1.0 / (1.0 + s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Travel-time centring, seconds.
    pub mu_s: f64,
    /// Travel-time scale, seconds.
    pub scale_s: f64,
    pub gamma: f64,
    pub transform: OutputTransform,
}

impl Default for Constants {
    fn default() -> Self {
        Constants { mu_s: 3600.0, scale_s: 1000.0, gamma: 100.0, transform: OutputTransform::Sqrt }
    }
}

/// Layer widths and activations of the four networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Input dimension, the feature bank's `k`.
    pub k: usize,
    pub encoder: Vec<usize>,
    pub interaction: Vec<usize>,
    pub deterrence: Vec<usize>,
    pub hidden: Activation,
    pub deterrence_hidden: Activation,
    pub constants: Constants,
}

impl Architecture {
    pub fn new(k: usize) -> Architecture {
        Architecture {
            k,
            encoder: vec![16, 16],
            interaction: vec![16, 8],
            deterrence: vec![16, 16],
            hidden: Activation::Relu,
            deterrence_hidden: Activation::Tanh,
            constants: Constants::default(),
        }
    }

    fn encoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.k];
        d.extend_from_slice(&self.encoder);
        d
    }

    fn interaction_dims(&self) -> Vec<usize> {
        let h = *self.encoder.last().unwrap_or(&self.k);
        let mut d = vec![2 * h];
        d.extend_from_slice(&self.interaction);
        d.push(1);
        d
    }

    fn deterrence_dims(&self) -> Vec<usize> {
        let mut d = vec![1];
        d.extend_from_slice(&self.deterrence);
        d.push(1);
        d
    }
}

/// Learnable networks plus the fixed constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub origin: Mlp,
    pub destination: Mlp,
    pub interaction: Mlp,
    pub deterrence: Mlp,
    pub constants: Constants,
}

pub const BLOCK_NAMES: [&str; 4] = ["origin", "destination", "interaction", "deterrence"];

impl ModelParams {
    pub fn init(arch: &Architecture, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = arch.encoder_dims();
        ModelParams {
            origin: Mlp::random(&enc, arch.hidden, &mut rng),
            destination: Mlp::random(&enc, arch.hidden, &mut rng),
            interaction: Mlp::random(&arch.interaction_dims(), arch.hidden, &mut rng),
            deterrence: Mlp::random(&arch.deterrence_dims(), arch.deterrence_hidden, &mut rng),
            constants: arch.constants,
        }
    }

    pub fn zeros(arch: &Architecture) -> ModelParams {
        let enc = arch.encoder_dims();
        ModelParams {
            origin: Mlp::zeros(&enc, arch.hidden),
            destination: Mlp::zeros(&enc, arch.hidden),
            interaction: Mlp::zeros(&arch.interaction_dims(), arch.hidden),
            deterrence: Mlp::zeros(&arch.deterrence_dims(), arch.deterrence_hidden),
            constants: arch.constants,
        }
    }

    pub fn k(&self) -> usize {
        self.origin.input_dim()
    }

    pub fn blocks(&self) -> [&Mlp; 4] {
        [&self.origin, &self.destination, &self.interaction, &self.deterrence]
    }

    pub fn blocks_mut(&mut self) -> [&mut Mlp; 4] {
        [&mut self.origin, &mut self.destination, &mut self.interaction, &mut self.deterrence]
    }

    /// Zeroed gradient buffers shaped like the four parameter blocks.
    pub fn zero_grads(&self) -> Grads {
        Grads(self.blocks().map(|b| vec![0.0; b.params.len()]))
    }

    /// Checks the structural invariants tying the networks together.
    pub fn validate(&self) -> Result<()> {
        let h = self.origin.output_dim();
        if self.destination.input_dim() != self.k() || self.destination.output_dim() != h {
            return Err(Error::Invalid("origin and destination encoders differ in shape".into()));
        }
        if self.interaction.input_dim() != 2 * h {
            return Err(Error::DimensionMismatch {
                expected: 2 * h,
                found: self.interaction.input_dim(),
            });
        }
        if self.interaction.output_dim() != 1
            || self.deterrence.input_dim() != 1
            || self.deterrence.output_dim() != 1
        {
            return Err(Error::Invalid("scorer and deterrence heads must be scalar".into()));
        }
        for b in self.blocks() {
            if b.params.len() != Mlp::param_count(&b.dims) {
                return Err(Error::Invalid("parameter buffer does not match layer dims".into()));
            }
            if b.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Invalid("non-finite parameter".into()));
            }
        }
        Ok(())
    }

    /// Origin and destination embeddings for single feature vectors.
    pub fn encode(&self, x_o: &[f64], x_d: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        for x in [x_o, x_d] {
            if x.len() != self.k() {
                return Err(Error::DimensionMismatch { expected: self.k(), found: x.len() });
            }
        }
        let mut c = MlpCache::default();
        self.origin.forward(x_o, 1, &mut c);
        let h_o = c.output().to_vec();
        self.destination.forward(x_d, 1, &mut c);
        Ok((h_o, c.output().to_vec()))
    }

    /// Flow potential `s_od` for a pair of embeddings.
    pub fn od_score(&self, h_o: &[f64], h_d: &[f64]) -> f64 {
        let mut x = h_o.to_vec();
        x.extend_from_slice(h_d);
        let mut c = MlpCache::default();
        self.interaction.forward(&x, 1, &mut c);
        softplus(c.output()[0])
    }

    /// Fraction of flow potential surviving a route of `t_od` seconds.
    pub fn deterrence(&self, t_od: f64) -> f64 {
        let mut c = MlpCache::default();
        self.deterrence.forward(&[self.standardize_time(t_od)], 1, &mut c);
        sigmoid(c.output()[0])
    }

    pub fn standardize_time(&self, t_od: f64) -> f64 {
        (t_od - self.constants.mu_s) / self.constants.scale_s
    }

    /// Predicted volume for one prepared edge.
    pub fn predict(&self, edge: &PreparedEdge) -> f64 {
        let mut ws = Workspace::default();
        self.forward(edge, &mut ws)
    }

    /// Predicted volume for a context, looking features up in `bank`.
    pub fn predict_edge(&self, context: &OdContext, bank: &FeatureBank) -> Result<f64> {
        let edge = PreparedEdge::new(context, bank, None)?;
        Ok(self.predict(&edge))
    }

    /// Forward pass keeping everything the backward pass needs.
    pub fn forward(&self, edge: &PreparedEdge, ws: &mut Workspace) -> f64 {
        let n = edge.pair_count();
        ws.s.clear();
        ws.p.clear();
        ws.sp.clear();
        if n == 0 {
            ws.total = 0.0;
            return 0.0;
        }
        self.origin.forward(&edge.origin_x, edge.origin_count(), &mut ws.origin);
        self.destination.forward(&edge.dest_x, edge.dest_count(), &mut ws.dest);
        let h = self.origin.output_dim();
        let ho = ws.origin.output();
        let hd = ws.dest.output();
        ws.pair_in.clear();
        ws.pair_in.reserve(n * 2 * h);
        for (&o, &d) in edge.pair_origin.iter().zip(&edge.pair_dest) {
            ws.pair_in.extend_from_slice(&ho[o as usize * h..(o as usize + 1) * h]);
            ws.pair_in.extend_from_slice(&hd[d as usize * h..(d as usize + 1) * h]);
        }
        self.interaction.forward(&ws.pair_in, n, &mut ws.interaction);
        ws.t_in.clear();
        ws.t_in.extend(edge.t_od.iter().map(|&t| self.standardize_time(t)));
        self.deterrence.forward(&ws.t_in, n, &mut ws.deterrence);
        for (&z, &a) in ws.interaction.output().iter().zip(ws.deterrence.output()) {
            let s = softplus(z);
            let p = sigmoid(a);
            ws.s.push(s);
            ws.p.push(p);
            ws.sp.push(s * p);
        }
        ws.total = exact_sum(ws.sp.iter().copied());
        self.constants.gamma * self.constants.transform.apply(ws.total)
    }

    /// Accumulates `d(output)/d(params) * upstream` into `grads`, using the
    /// state of the most recent `forward` on `edge`.
    pub fn backward(&self, edge: &PreparedEdge, ws: &mut Workspace, upstream: f64, grads: &mut Grads) {
        let n = edge.pair_count();
        if n == 0 {
            return;
        }
        let g_total =
            upstream * self.constants.gamma * self.constants.transform.derivative(ws.total);
        ws.dz.clear();
        ws.da.clear();
        for i in 0..n {
            let z = ws.interaction.output()[i];
            let p = ws.p[i];
            ws.dz.push(g_total * p * sigmoid(z));
            ws.da.push(g_total * ws.s[i] * p * (1.0 - p));
        }
        let [g_origin, g_dest, g_inter, g_det] = &mut grads.0;
        self.deterrence.backward(&ws.deterrence, &ws.da, g_det, None);
        let mut d_pair = core::mem::take(&mut ws.d_pair);
        self.interaction.backward(&ws.interaction, &ws.dz, g_inter, Some(&mut d_pair));

        let h = self.origin.output_dim();
        ws.d_ho.clear();
        ws.d_ho.resize(edge.origin_count() * h, 0.0);
        ws.d_hd.clear();
        ws.d_hd.resize(edge.dest_count() * h, 0.0);
        for (i, (&o, &d)) in edge.pair_origin.iter().zip(&edge.pair_dest).enumerate() {
            let row = &d_pair[i * 2 * h..(i + 1) * 2 * h];
            let (ro, rd) = row.split_at(h);
            for (acc, g) in ws.d_ho[o as usize * h..(o as usize + 1) * h].iter_mut().zip(ro) {
                *acc += g;
            }
            for (acc, g) in ws.d_hd[d as usize * h..(d as usize + 1) * h].iter_mut().zip(rd) {
                *acc += g;
            }
        }
        ws.d_pair = d_pair;
        self.origin.backward(&ws.origin, &ws.d_ho, g_origin, None);
        self.destination.backward(&ws.dest, &ws.d_hd, g_dest, None);
    }

    /// Squared error on one edge and its gradient (added into `grads`,
    /// scaled by `weight`).
    pub fn loss_and_grad(
        &self,
        edge: &PreparedEdge,
        y: f64,
        weight: f64,
        ws: &mut Workspace,
        grads: &mut Grads,
    ) -> f64 {
        let y_hat = self.forward(edge, ws);
        let r = y - y_hat;
        self.backward(edge, ws, -2.0 * r * weight, grads);
        r * r
    }
}

/// Gradient buffers, one per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub [Vec<f64>; 4]);

impl Grads {
    pub fn zero(&mut self) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().flatten().map(|g| g * g).sum::<f64>())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.is_finite())
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.0.iter_mut().flatten() {
            *g *= c;
        }
    }
}

/// Reusable buffers for forward and backward passes.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    origin: MlpCache,
    dest: MlpCache,
    interaction: MlpCache,
    deterrence: MlpCache,
    pair_in: Vec<f64>,
    t_in: Vec<f64>,
    s: Vec<f64>,
    p: Vec<f64>,
    sp: Vec<f64>,
    total: f64,
    dz: Vec<f64>,
    da: Vec<f64>,
    d_pair: Vec<f64>,
    d_ho: Vec<f64>,
    d_hd: Vec<f64>,
}

impl Workspace {
    /// Which hidden units of the three feature networks were positive in
    /// the last forward pass. A change between two nearby parameter vectors
    /// means a ReLU kink lies between them.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut p = self.origin.active_pattern();
        p.extend(self.dest.active_pattern());
        p.extend(self.interaction.active_pattern());
        p
    }

    /// Pair flow potentials from the last forward pass.
    pub fn scores(&self) -> &[f64] {
        &self.s
    }

    /// Pair deterrence values from the last forward pass.
    pub fn deterrences(&self) -> &[f64] {
        &self.p
    }

    /// Aggregate `S` from the last forward pass.
    pub fn total(&self) -> f64 {
        self.total
    }
}

/// One target edge with its pairs resolved to feature rows.
///
/// Unique origins and destinations are stored once; pairs index into them.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedEdge {
    pub edge: EdgeId,
    pub volume: Option<f64>,
    pub origin_nodes: Vec<NodeId>,
    pub dest_nodes: Vec<NodeId>,
    pub origin_x: Vec<f64>,
    pub dest_x: Vec<f64>,
    pub pair_origin: Vec<u32>,
    pub pair_dest: Vec<u32>,
    pub t_od: Vec<f64>,
    k: usize,
}

impl PreparedEdge {
    pub fn new(context: &OdContext, bank: &FeatureBank, volume: Option<f64>) -> Result<PreparedEdge> {
        let k = bank.k();
        let mut edge = PreparedEdge {
            edge: context.target,
            volume,
            origin_nodes: Vec::new(),
            dest_nodes: Vec::new(),
            origin_x: Vec::new(),
            dest_x: Vec::new(),
            pair_origin: Vec::with_capacity(context.pairs.len()),
            pair_dest: Vec::with_capacity(context.pairs.len()),
            t_od: Vec::with_capacity(context.pairs.len()),
            k,
        };
        let mut origin_slot = alloc::collections::BTreeMap::new();
        let mut dest_slot = alloc::collections::BTreeMap::new();
        for pair in &context.pairs {
            let o = slot(&mut origin_slot, &mut edge.origin_nodes, &mut edge.origin_x, pair.origin, bank)?;
            let d = slot(&mut dest_slot, &mut edge.dest_nodes, &mut edge.dest_x, pair.destination, bank)?;
            edge.pair_origin.push(o);
            edge.pair_dest.push(d);
            edge.t_od.push(pair.t_od);
        }
        Ok(edge)
    }

    /// Builds an edge directly from feature rows and pair indices.
    pub fn from_parts(
        edge: EdgeId,
        k: usize,
        origin_x: Vec<f64>,
        dest_x: Vec<f64>,
        pairs: &[(u32, u32, f64)],
    ) -> PreparedEdge {
        let no = origin_x.len() / k.max(1);
        let nd = dest_x.len() / k.max(1);
        PreparedEdge {
            edge,
            volume: None,
            origin_nodes: (0..no as u64).collect(),
            dest_nodes: (0..nd as u64).collect(),
            origin_x,
            dest_x,
            pair_origin: pairs.iter().map(|p| p.0).collect(),
            pair_dest: pairs.iter().map(|p| p.1).collect(),
            t_od: pairs.iter().map(|p| p.2).collect(),
            k,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pair_count(&self) -> usize {
        self.t_od.len()
    }

    pub fn origin_count(&self) -> usize {
        self.origin_nodes.len()
    }

    pub fn dest_count(&self) -> usize {
        self.dest_nodes.len()
    }

    pub fn observed(&self) -> Result<f64> {
        self.volume.ok_or(Error::MissingVolume(self.edge))
    }
}

fn slot(
    index: &mut alloc::collections::BTreeMap<NodeId, u32>,
    nodes: &mut Vec<NodeId>,
    rows: &mut Vec<f64>,
    node: NodeId,
    bank: &FeatureBank,
) -> Result<u32> {
    if let Some(&i) = index.get(&node) {
        return Ok(i);
    }
    let area = bank.area_of_node(node).ok_or(Error::MissingFeatures(node))?;
    let i = nodes.len() as u32;
    nodes.push(node);
    rows.extend_from_slice(bank.vector(area));
    index.insert(node, i);
    Ok(i)
}
