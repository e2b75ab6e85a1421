//! Metrics, fold plans, cross-validation and baseline models.

mod baselines;
mod cv;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{fit_gravity, fit_linear, GravityConfig, GravityEdge, GravityModel, LinearModel};
pub use cv::{run_cv, run_cv_with_models, Dataset, EdgeResult, EvalReport, Fitted, FoldSummary, ModelSpec, Summary};

use crate::error::{Error, Result};
use crate::graph::TargetEdge;

/// GEH statistic; defined as 0 when both volumes are 0.
pub fn geh(y: f64, y_hat: f64) -> f64 {
    let denom = y + y_hat;
    if denom == 0.0 {
        return 0.0;
    }
    let r = y - y_hat;
    libm::sqrt(2.0 * r * r / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mgeh: f64,
    pub mae: f64,
    /// `None` when the observed volumes have zero spread.
    pub r2: Option<f64>,
}

/// MGEH, MAE and R² over `(observed, predicted)` pairs.
pub fn metrics(pairs: &[(f64, f64)]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("metric pairs"));
    }
    let n = pairs.len() as f64;
    let mgeh = pairs.iter().map(|&(y, p)| geh(y, p)).sum::<f64>() / n;
    let mae = pairs.iter().map(|&(y, p)| (y - p).abs()).sum::<f64>() / n;
    let y_bar = pairs.iter().map(|&(y, _)| y).sum::<f64>() / n;
    let sse: f64 = pairs.iter().map(|&(y, p)| (y - p) * (y - p)).sum();
    let sst: f64 = pairs.iter().map(|&(y, _)| (y - y_bar) * (y - y_bar)).sum();
    let r2 = (sst > 0.0).then(|| 1.0 - sse / sst);
    Ok(Metrics { n: pairs.len(), mgeh, mae, r2 })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    RandomKFold { k: usize },
    /// Leave one region out.
    Spatial,
}

impl Protocol {
    pub fn tag(&self) -> &'static str {
        match self {
            Protocol::RandomKFold { .. } => "random-kfold",
            Protocol::Spatial => "spatial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub protocol: Protocol,
    pub seed: u64,
    /// Display label per fold (region name for spatial plans).
    pub labels: Vec<String>,
    /// Fold of each target, by position in the target list.
    pub fold_of: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_count(&self) -> usize {
        self.labels.len()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

pub fn make_folds(targets: &[TargetEdge], protocol: Protocol, seed: u64) -> Result<FoldPlan> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("targets"));
    }
    match protocol {
        Protocol::RandomKFold { k } => {
            if k < 2 || k > targets.len() {
                return Err(Error::Invalid(alloc::format!(
                    "need 2 <= k <= {} folds, got {k}",
                    targets.len()
                )));
            }
            let mut order: Vec<usize> = (0..targets.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut fold_of = alloc::vec![0; targets.len()];
            for (pos, &i) in order.iter().enumerate() {
                fold_of[i] = pos % k;
            }
            let labels = (0..k).map(|f| alloc::format!("fold{f}")).collect();
            Ok(FoldPlan { protocol, seed, labels, fold_of })
        }
        Protocol::Spatial => {
            let missing: Vec<_> = targets
                .iter()
                .filter(|t| t.region.as_deref().map_or(true, str::is_empty))
                .map(|t| t.edge)
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingRegions(missing));
            }
            let regions: BTreeSet<&str> = targets.iter().filter_map(|t| t.region.as_deref()).collect();
            let labels: Vec<String> = regions.iter().map(|r| String::from(*r)).collect();
            let fold_of = targets
                .iter()
                .map(|t| labels.iter().position(|l| Some(l.as_str()) == t.region.as_deref()).unwrap())
                .collect();
            Ok(FoldPlan { protocol, seed, labels, fold_of })
        }
    }
}
