use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::baselines::{fit_gravity, fit_linear, GravityConfig, GravityEdge};
use super::{metrics, FoldPlan, Metrics};
use crate::error::{Error, Result};
use crate::features::FeatureBank;
use crate::graph::{EdgeId, TargetEdge};
use crate::model::{split_validation, train, Architecture, ModelParams, PreparedEdge, TrainConfig, TrainLog};
use crate::od::OdContext;

/// Everything a model needs per target edge, aligned with `targets`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub targets: Vec<TargetEdge>,
    pub edges: Vec<PreparedEdge>,
    /// Baseline design vectors: mean origin features, mean destination
    /// features, pair count, mean pair travel time.
    pub design: Vec<Vec<f64>>,
    /// Pair masses and times for the gravity baseline, when masses exist.
    pub gravity: Option<Vec<GravityEdge>>,
}

impl Dataset {
    /// `contexts[i]` must belong to `targets[i]`. `masses` holds one
    /// non-negative mass per bank area.
    pub fn build(
        targets: &[TargetEdge],
        contexts: &[OdContext],
        bank: &FeatureBank,
        masses: Option<&[f64]>,
    ) -> Result<Dataset> {
        if targets.len() != contexts.len() {
            return Err(Error::DimensionMismatch { expected: targets.len(), found: contexts.len() });
        }
        let k = bank.k();
        let mut edges = Vec::with_capacity(targets.len());
        let mut design = Vec::with_capacity(targets.len());
        let mut gravity = masses.map(|_| Vec::with_capacity(targets.len()));
        for (t, c) in targets.iter().zip(contexts) {
            if t.edge != c.target {
                return Err(Error::Invalid(alloc::format!(
                    "context for edge {} paired with target {}",
                    c.target,
                    t.edge
                )));
            }
            edges.push(PreparedEdge::new(c, bank, t.volume)?);

            let mean_of = |nodes: &[(u64, f64)]| -> Result<Vec<f64>> {
                let mut m = alloc::vec![0.0; k];
                for &(n, _) in nodes {
                    let a = bank.area_of_node(n).ok_or(Error::MissingFeatures(n))?;
                    for (acc, v) in m.iter_mut().zip(bank.vector(a)) {
                        *acc += v;
                    }
                }
                if !nodes.is_empty() {
                    m.iter_mut().for_each(|v| *v /= nodes.len() as f64);
                }
                Ok(m)
            };
            let mut row = mean_of(&c.origins)?;
            row.extend(mean_of(&c.destinations)?);
            row.push(c.pairs.len() as f64);
            let mean_t = if c.pairs.is_empty() {
                0.0
            } else {
                c.pairs.iter().map(|p| p.t_od).sum::<f64>() / c.pairs.len() as f64
            };
            row.push(mean_t);
            design.push(row);

            if let (Some(g), Some(m)) = (gravity.as_mut(), masses) {
                let mass = |n: u64| -> Result<f64> {
                    Ok(m[bank.area_of_node(n).ok_or(Error::MissingFeatures(n))?])
                };
                let pairs = c
                    .pairs
                    .iter()
                    .map(|p| Ok((mass(p.origin)?, mass(p.destination)?, p.t_od)))
                    .collect::<Result<Vec<_>>>()?;
                g.push(GravityEdge { pairs });
            }
        }
        Ok(Dataset { targets: targets.to_vec(), edges, design, gravity })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn volumes(&self, idx: &[usize]) -> Result<Vec<f64>> {
        idx.iter().map(|&i| self.targets[i].observed()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    /// Returns the stored observation; a sanity check for the harness.
    Oracle,
    /// Mean of the training volumes.
    ConstantMean,
    /// OLS when `lambda == 0`, ridge otherwise.
    Linear { lambda: f64 },
    Gravity(GravityConfig),
    DeepDemand { arch: Architecture, train: TrainConfig },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Oracle => "oracle",
            ModelSpec::ConstantMean => "constant",
            ModelSpec::Linear { lambda } if *lambda == 0.0 => "ols",
            ModelSpec::Linear { .. } => "ridge",
            ModelSpec::Gravity(_) => "gravity",
            ModelSpec::DeepDemand { .. } => "deepdemand",
        }
    }

    /// Fits on `train_idx` and predicts `predict_idx`.
    pub fn fit_predict(
        &self,
        data: &Dataset,
        train_idx: &[usize],
        predict_idx: &[usize],
        fold: usize,
    ) -> Result<Fitted> {
        let y = data.volumes(train_idx)?;
        let plain = |predictions| Fitted { predictions, log: None, params: None };
        match self {
            ModelSpec::Oracle => Ok(plain(data.volumes(predict_idx)?)),
            ModelSpec::ConstantMean => {
                let mean = y.iter().sum::<f64>() / y.len() as f64;
                Ok(plain(alloc::vec![mean; predict_idx.len()]))
            }
            ModelSpec::Linear { lambda } => {
                let x: Vec<Vec<f64>> = train_idx.iter().map(|&i| data.design[i].clone()).collect();
                let m = fit_linear(&x, &y, *lambda)?;
                Ok(plain(predict_idx.iter().map(|&i| m.predict(&data.design[i]).max(0.0)).collect()))
            }
            ModelSpec::Gravity(config) => {
                let g = data
                    .gravity
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("gravity baseline needs a mass column".into()))?;
                let edges: Vec<&GravityEdge> = train_idx.iter().map(|&i| &g[i]).collect();
                let m = fit_gravity(&edges, &y, *config)?;
                Ok(plain(predict_idx.iter().map(|&i| m.predict(&g[i])).collect()))
            }
            ModelSpec::DeepDemand { arch, train: config } => {
                let (tr, val) = split_validation(
                    train_idx.len(),
                    config.validation_fraction,
                    config.seed.wrapping_add(fold as u64),
                );
                let pick = |pos: &[usize]| -> Vec<&PreparedEdge> {
                    pos.iter().map(|&p| &data.edges[train_idx[p]]).collect()
                };
                let mut cfg = config.clone();
                cfg.seed = config.seed.wrapping_add(fold as u64);
                let init = ModelParams::init(arch, config.seed);
                let (params, log) = train(init, &pick(&tr), &pick(&val), &cfg)?;
                Ok(Fitted {
                    predictions: predict_idx.iter().map(|&i| params.predict(&data.edges[i])).collect(),
                    log: Some(log),
                    params: Some(params),
                })
            }
        }
    }
}

/// Output of one fit: predictions plus, for the neural model, its training
/// log and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub predictions: Vec<f64>,
    pub log: Option<TrainLog>,
    pub params: Option<ModelParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeResult {
    pub edge: EdgeId,
    pub fold: usize,
    pub y: f64,
    pub y_hat: f64,
    pub geh: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub label: String,
    pub train: Metrics,
    pub test: Metrics,
    pub log: Option<TrainLog>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mgeh: f64,
    pub mae: f64,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub protocol: String,
    pub seed: u64,
    /// Test-set predictions, one per evaluated edge.
    pub records: Vec<EdgeResult>,
    pub folds: Vec<FoldSummary>,
    /// Mean over folds.
    pub mean: Summary,
    /// Population standard deviation over folds.
    pub std: Summary,
    /// Metrics over all test records pooled together.
    pub pooled: Metrics,
    pub skipped_folds: Vec<String>,
}

impl EvalReport {
    /// Test metrics of one fold recomputed from the edge records.
    pub fn fold_metrics_from_records(&self, fold: usize) -> Result<Metrics> {
        let pairs: Vec<(f64, f64)> =
            self.records.iter().filter(|r| r.fold == fold).map(|r| (r.y, r.y_hat)).collect();
        metrics(&pairs)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, libm::sqrt(var))
}

/// Trains on each fold's complement and evaluates on the fold.
pub fn run_cv(data: &Dataset, plan: &FoldPlan, spec: &ModelSpec) -> Result<EvalReport> {
    run_cv_with_models(data, plan, spec).map(|(report, _)| report)
}

/// Like [`run_cv`], also returning the fitted parameters of every evaluated
/// fold for the neural model.
pub fn run_cv_with_models(
    data: &Dataset,
    plan: &FoldPlan,
    spec: &ModelSpec,
) -> Result<(EvalReport, Vec<(usize, ModelParams)>)> {
    let mut models = Vec::new();
    if plan.fold_of.len() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), found: plan.fold_of.len() });
    }
    let mut records = Vec::new();
    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    for fold in 0..plan.fold_count() {
        let test_idx = plan.test_indices(fold);
        let train_idx = plan.train_indices(fold);
        if test_idx.is_empty() || train_idx.is_empty() {
            log::warn!("fold {} has no test or training edges; skipped", plan.labels[fold]);
            skipped.push(plan.labels[fold].clone());
            continue;
        }
        let mut all = test_idx.clone();
        all.extend_from_slice(&train_idx);
        let fitted = spec.fit_predict(data, &train_idx, &all, fold)?;
        let log = fitted.log;
        if let Some(p) = fitted.params {
            models.push((fold, p));
        }
        let (test_pred, train_pred) = fitted.predictions.split_at(test_idx.len());
        let pairs = |idx: &[usize], p: &[f64]| -> Result<Vec<(f64, f64)>> {
            idx.iter().zip(p).map(|(&i, &yh)| Ok((data.targets[i].observed()?, yh))).collect()
        };
        let test_pairs = pairs(&test_idx, test_pred)?;
        for (&i, &(y, y_hat)) in test_idx.iter().zip(&test_pairs) {
            records.push(EdgeResult {
                edge: data.targets[i].edge,
                fold,
                y,
                y_hat,
                geh: super::geh(y, y_hat),
                residual: y - y_hat,
            });
        }
        folds.push(FoldSummary {
            fold,
            label: plan.labels[fold].clone(),
            train: metrics(&pairs(&train_idx, train_pred)?)?,
            test: metrics(&test_pairs)?,
            log,
        });
    }
    if folds.is_empty() {
        return Err(Error::EmptyInput("evaluable folds"));
    }
    let col = |f: fn(&Metrics) -> f64| -> (f64, f64) {
        mean_std(&folds.iter().map(|s| f(&s.test)).collect::<Vec<_>>())
    };
    let (mgeh_m, mgeh_s) = col(|m| m.mgeh);
    let (mae_m, mae_s) = col(|m| m.mae);
    let r2s: Vec<f64> = folds.iter().filter_map(|s| s.test.r2).collect();
    let (r2_m, r2_s) = if r2s.is_empty() { (None, None) } else {
        let (m, s) = mean_std(&r2s);
        (Some(m), Some(s))
    };
    let pooled_pairs: Vec<(f64, f64)> = records.iter().map(|r| (r.y, r.y_hat)).collect();
    let report = EvalReport {
        model: spec.name().into(),
        protocol: plan.protocol.tag().into(),
        seed: plan.seed,
        pooled: metrics(&pooled_pairs)?,
        records,
        folds,
        mean: Summary { mgeh: mgeh_m, mae: mae_m, r2: r2_m },
        std: Summary { mgeh: mgeh_s, mae: mae_s, r2: r2_s },
        skipped_folds: skipped,
    };
    Ok((report, models))
}
