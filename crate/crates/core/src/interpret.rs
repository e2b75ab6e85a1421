//! Learned deterrence curves and origin/destination potentials.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureBank;
use crate::model::{MlpCache, ModelParams};
use crate::numeric::softplus;
use crate::od::OdContext;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start_min: f64,
    pub end_min: f64,
    pub step_min: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { start_min: 0.0, end_min: 120.0, step_min: 0.5 }
    }
}

impl GridSpec {
    /// Grid points in minutes, `start + i * step` up to `end`.
    pub fn points(&self) -> Vec<f64> {
        if !(self.step_min > 0.0) || self.end_min < self.start_min {
            return vec![self.start_min];
        }
        let n = libm::floor((self.end_min - self.start_min) / self.step_min + 1e-9) as usize;
        (0..=n).map(|i| self.start_min + i as f64 * self.step_min).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterrenceCurve {
    pub t_min: Vec<f64>,
    pub p_od: Vec<f64>,
    pub fold: Option<usize>,
}

pub fn export_deterrence(params: &ModelParams, grid: &GridSpec) -> DeterrenceCurve {
    let t_min = grid.points();
    let p_od = t_min.iter().map(|&t| params.deterrence(t * 60.0)).collect();
    DeterrenceCurve { t_min, p_od, fold: None }
}

/// Per-fold curves with their pointwise mean and range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub t_min: Vec<f64>,
    pub folds: Vec<DeterrenceCurve>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn export_deterrence_folds(params: &[ModelParams], grid: &GridSpec) -> Result<CurveBand> {
    if params.is_empty() {
        return Err(Error::EmptyInput("fold checkpoints"));
    }
    let folds: Vec<DeterrenceCurve> = params
        .iter()
        .enumerate()
        .map(|(f, p)| DeterrenceCurve { fold: Some(f), ..export_deterrence(p, grid) })
        .collect();
    let t_min = folds[0].t_min.clone();
    let n = folds.len() as f64;
    let col = |i: usize| folds.iter().map(move |c| c.p_od[i]);
    let mean = (0..t_min.len()).map(|i| col(i).sum::<f64>() / n).collect();
    let min = (0..t_min.len()).map(|i| col(i).fold(f64::INFINITY, f64::min)).collect();
    let max = (0..t_min.len()).map(|i| col(i).fold(f64::NEG_INFINITY, f64::max)).collect();
    Ok(CurveBand { t_min, folds, mean, min, max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PairUniverse {
    /// Every distinct screened pair across the contexts.
    AllScreened,
    /// A uniform sample without replacement from the screened pairs.
    Sample { size: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaPotential {
    pub area_id: String,
    /// Mean flow potential over sampled pairs with this area as origin.
    pub o_potential: Option<f64>,
    pub d_potential: Option<f64>,
    /// Potentials per km² of land area.
    pub o_density: Option<f64>,
    pub d_density: Option<f64>,
    /// 1 (lowest) to 5, by density among areas with data.
    pub quintile_o: Option<u8>,
    pub quintile_d: Option<u8>,
    pub n_pairs_o: usize,
    pub n_pairs_d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialMap {
    pub areas: Vec<AreaPotential>,
    pub pair_count: usize,
}

/// Distinct `(origin area, destination area)` pairs screened across contexts.
pub fn screened_area_pairs(bank: &FeatureBank, contexts: &[OdContext]) -> Result<Vec<(usize, usize)>> {
    let mut set = BTreeSet::new();
    for c in contexts {
        for p in &c.pairs {
            let o = bank.area_of_node(p.origin).ok_or(Error::MissingFeatures(p.origin))?;
            let d = bank.area_of_node(p.destination).ok_or(Error::MissingFeatures(p.destination))?;
            set.insert((o, d));
        }
    }
    Ok(set.into_iter().collect())
}

/// Raw flow potentials `s_od` for area pairs (no deterrence applied).
pub fn pair_scores(params: &ModelParams, bank: &FeatureBank, pairs: &[(usize, usize)]) -> Vec<f64> {
    let areas = bank.area_count();
    let h = params.origin.output_dim();
    let mut origin = MlpCache::default();
    let mut dest = MlpCache::default();
    params.origin.forward(bank.reduced(), areas, &mut origin);
    params.destination.forward(bank.reduced(), areas, &mut dest);
    let (ho, hd) = (origin.output(), dest.output());
    let mut input = Vec::with_capacity(pairs.len() * 2 * h);
    for &(o, d) in pairs {
        input.extend_from_slice(&ho[o * h..(o + 1) * h]);
        input.extend_from_slice(&hd[d * h..(d + 1) * h]);
    }
    let mut inter = MlpCache::default();
    params.interaction.forward(&input, pairs.len(), &mut inter);
    inter.output().iter().map(|&z| softplus(z)).collect()
}

pub fn compute_potentials(
    params: &ModelParams,
    bank: &FeatureBank,
    contexts: &[OdContext],
    universe: PairUniverse,
) -> Result<PotentialMap> {
    let all = screened_area_pairs(bank, contexts)?;
    let pairs = match universe {
        PairUniverse::AllScreened => all,
        PairUniverse::Sample { size, seed } if size < all.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = sample(&mut rng, all.len(), size).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| all[i]).collect()
        }
        PairUniverse::Sample { .. } => all,
    };
    potentials_from_scores(bank, &pairs, &pair_scores(params, bank, &pairs))
}

/// Aggregates per-pair scores into per-area potentials.
pub fn potentials_from_scores(
    bank: &FeatureBank,
    pairs: &[(usize, usize)],
    scores: &[f64],
) -> Result<PotentialMap> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("OD pair universe"));
    }
    let n = bank.area_count();
    let mut o_sum = vec![0.0; n];
    let mut d_sum = vec![0.0; n];
    let mut o_n = vec![0usize; n];
    let mut d_n = vec![0usize; n];
    for (&(o, d), &s) in pairs.iter().zip(scores) {
        o_sum[o] += s;
        o_n[o] += 1;
        d_sum[d] += s;
        d_n[d] += 1;
    }
    let mean = |sum: &[f64], cnt: &[usize], a: usize| (cnt[a] > 0).then(|| sum[a] / cnt[a] as f64);
    let density = |p: Option<f64>, a: usize| {
        let area = bank.land_area_km2[a];
        p.zip(area).and_then(|(v, area)| (area > 0.0).then(|| v / area))
    };
    let mut areas: Vec<AreaPotential> = (0..n)
        .map(|a| {
            let o = mean(&o_sum, &o_n, a);
            let d = mean(&d_sum, &d_n, a);
            AreaPotential {
                area_id: bank.area_ids[a].clone(),
                o_potential: o,
                d_potential: d,
                o_density: density(o, a),
                d_density: density(d, a),
                quintile_o: None,
                quintile_d: None,
                n_pairs_o: o_n[a],
                n_pairs_d: d_n[a],
            }
        })
        .collect();
    let o_q = quintiles(&areas.iter().map(|a| a.o_density).collect::<Vec<_>>());
    let d_q = quintiles(&areas.iter().map(|a| a.d_density).collect::<Vec<_>>());
    for (a, (qo, qd)) in areas.iter_mut().zip(o_q.into_iter().zip(d_q)) {
        a.quintile_o = qo;
        a.quintile_d = qd;
    }
    Ok(PotentialMap { areas, pair_count: pairs.len() })
}

/// Rank-based quintiles (1..=5) over the defined values.
pub fn quintiles(values: &[Option<f64>]) -> Vec<Option<u8>> {
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    order.sort_by(|&a, &b| values[a].unwrap().total_cmp(&values[b].unwrap()).then(a.cmp(&b)));
    let m = order.len();
    let mut out = vec![None; values.len()];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = Some((pos * 5 / m) as u8 + 1);
    }
    out
}
