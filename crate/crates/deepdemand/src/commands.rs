//! Subcommand implementations. Each reads its inputs from a resolved
//! [`RunConfig`], writes its artifacts, the effective configuration and a
//! run manifest, and returns the paths it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use deepdemand_core::eval::{make_folds, run_cv_with_models, Dataset, ModelSpec};
use deepdemand_core::features::{FeatureBank, FeatureTable};
use deepdemand_core::graph::{RoadGraph, TargetEdge};
use deepdemand_core::interpret::{compute_potentials, export_deterrence, export_deterrence_folds};
use deepdemand_core::model::{split_validation, train, ModelParams, PreparedEdge};
use deepdemand_core::od::{extract_context, OdContext, Scratch};
use deepdemand_core::synth::{generate_synthetic_network, planted_params, planted_volumes, SynthSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{load_bank, load_checkpoint, save_bank, save_checkpoint, write_json, Checkpoint, BANK_FILE};
use crate::checksum::{bank_checksum, config_hash, graph_checksum};
use crate::config::{ModelSection, Paths, RunConfig, TrainSection};
use crate::error::{require, AppError, AppResult};
use crate::report::{self, FailedModel, ReportFile, BASELINE_DESIGN};
use crate::store::{extract_all, load_contexts, ContextHeader, ExtractJob, ExtractManifest};
use crate::tables::{self, load_graph, read_centroids, read_features, read_targets, write_atomic, write_tagged_rows};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";
pub const PLANTED_FILE: &str = "planted_params.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<PathBuf>,
}

/// Writes `run_<command>.toml` (the effective configuration) and
/// `run_<command>.json` into `dir`.
fn finish(cfg: &RunConfig, dir: &Path, command: &str, hash: &str, start: Instant, mut outputs: Vec<PathBuf>) -> AppResult<Vec<PathBuf>> {
    let toml_path = dir.join(format!("run_{command}.toml"));
    write_atomic(&toml_path, cfg.to_toml().as_bytes())?;
    outputs.push(toml_path);
    let manifest = RunManifest {
        command: command.to_owned(),
        config_hash: hash.to_owned(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_owned(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: outputs.clone(),
    };
    let path = dir.join(format!("run_{command}.json"));
    write_json(&path, &manifest)?;
    outputs.push(path);
    log::info!("{command} finished in {:.1} s (config {hash})", manifest.wall_time_s);
    Ok(outputs)
}

fn components(cfg: &RunConfig, table: &FeatureTable) -> usize {
    let f = table.names.len();
    if cfg.features.pca_components > f {
        log::info!("keeping all {f} components ({} requested)", cfg.features.pca_components);
    }
    cfg.features.pca_components.min(f).max(1)
}

fn fit_bank(cfg: &RunConfig, graph: &RoadGraph, table: &FeatureTable, centroids: &[deepdemand_core::features::Centroid]) -> AppResult<FeatureBank> {
    Ok(FeatureBank::fit_transform(table, components(cfg, table))?.attach_to_nodes(graph, centroids)?)
}

#[derive(Serialize)]
struct ContextKey<'a> {
    graph: &'a str,
    bank: &'a str,
    cutoff_s: f64,
    epsilon_s: f64,
}

/// Hash tying context files to the graph, the bank and the search limits.
pub fn context_hash(graph_checksum: &str, bank_checksum: &str, cutoff_s: f64, epsilon_s: f64) -> String {
    config_hash(&ContextKey { graph: graph_checksum, bank: bank_checksum, cutoff_s, epsilon_s })
}

#[derive(Serialize)]
struct TrainKey<'a> {
    context: &'a str,
    model: &'a ModelSection,
    train: &'a TrainSection,
    seed: u64,
}

#[derive(Serialize)]
struct EvalKey<'a> {
    train: TrainKey<'a>,
    evaluate: &'a crate::config::EvaluateSection,
}

fn train_hash(cfg: &RunConfig, context: &str) -> String {
    config_hash(&TrainKey { context, model: &cfg.model, train: &cfg.train, seed: cfg.seed })
}

fn eval_hash(cfg: &RunConfig, context: &str) -> String {
    config_hash(&EvalKey {
        train: TrainKey { context, model: &cfg.model, train: &cfg.train, seed: cfg.seed },
        evaluate: &cfg.evaluate,
    })
}

/// Generates a synthetic grid with planted volumes into `out`, together
/// with a `config.toml` that points at the generated files.
pub fn synth(cfg: &RunConfig, out: &Path) -> AppResult<Vec<PathBuf>> {
    let start = Instant::now();
    let s = &cfg.synth;
    let spec = SynthSpec {
        spacing_m: s.spacing_m,
        area_share: s.area_share,
        features: s.features,
        extra_targets: s.extra_targets,
        regions: s.regions,
        ..SynthSpec::new(s.size, cfg.seed)
    };
    let mut net = generate_synthetic_network(&spec)?;
    let bank = fit_bank(cfg, &net.graph, &net.features, &net.centroids)?;
    let mask = bank.feature_mask(&net.graph);
    let contexts = extract_parallel(cfg, &net.graph, &net.targets, &mask)?;
    let prepared: Vec<PreparedEdge> =
        contexts.iter().map(|c| PreparedEdge::new(c, &bank, None)).collect::<deepdemand_core::Result<_>>()?;
    let truth = planted_params(&cfg.model.architecture(bank.k()), s.planted_seed);
    let volumes = planted_volumes(&truth, &prepared, s.noise_sd, s.planted_seed.wrapping_add(1));
    for (t, y) in net.targets.iter_mut().zip(volumes) {
        t.volume = Some(y);
    }

    let mut file_cfg = cfg.clone();
    file_cfg.paths = Paths::default();
    let regions: BTreeMap<_, _> =
        net.targets.iter().filter_map(|t| t.region.clone().map(|r| (t.edge, r))).collect();
    let p = file_cfg.paths.clone();
    let at = |rel: &Path| out.join(rel);
    let mut outputs = vec![
        at(&p.nodes()),
        at(&p.edges()),
        at(&p.targets),
        at(&p.features),
        at(&p.centroids),
        out.join(PLANTED_FILE),
        out.join("config.toml"),
    ];
    tables::write_nodes(&outputs[0], &net.graph)?;
    tables::write_edges(&outputs[1], &net.graph, &regions)?;
    tables::write_targets(&outputs[2], &net.targets)?;
    tables::write_features(&outputs[3], &net.features)?;
    tables::write_centroids(&outputs[4], &net.centroids)?;
    write_json(&outputs[5], &truth)?;
    write_atomic(&outputs[6], file_cfg.to_toml().as_bytes())?;
    log::info!(
        "synthetic network: {} nodes, {} edges, {} targets, {} areas",
        net.graph.node_count(),
        net.graph.edge_count(),
        net.targets.len(),
        net.centroids.len()
    );
    let hash = config_hash(&(&cfg.synth, &cfg.model, cfg.seed));
    outputs = finish(cfg, out, "synth", &hash, start, outputs)?;
    Ok(outputs)
}

fn extract_parallel(cfg: &RunConfig, graph: &RoadGraph, targets: &[TargetEdge], mask: &[bool]) -> AppResult<Vec<OdContext>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| AppError::Usage(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let (cutoff, eps) = (cfg.extract.cutoff_s, cfg.extract.epsilon_s);
    let out: deepdemand_core::Result<Vec<OdContext>> = pool.install(|| {
        targets
            .par_iter()
            .map_init(|| Scratch::new(graph.node_count()), |s, t| extract_context(graph, t, cutoff, eps, mask, s))
            .collect()
    });
    Ok(out?)
}

fn require_all(paths: &[&Path]) -> AppResult<()> {
    paths.iter().try_for_each(|p| require(p))
}

/// Fits the feature bank, stores it next to the contexts and extracts every
/// target. Fails with exit code 1 when any target failed.
pub fn extract_od(cfg: &RunConfig) -> AppResult<(ExtractManifest, Vec<PathBuf>)> {
    let start = Instant::now();
    let p = &cfg.paths;
    require_all(&[&p.graph, &p.nodes(), &p.edges(), &p.targets, &p.features, &p.centroids])?;
    let (graph, regions) = load_graph(&p.nodes(), &p.edges())?;
    let targets = read_targets(&p.targets, &graph, &regions)?;
    let table = read_features(&p.features)?;
    let centroids = read_centroids(&p.centroids)?;
    let bank = fit_bank(cfg, &graph, &table, &centroids)?;
    let mask = bank.feature_mask(&graph);
    let g_ck = graph_checksum(&graph);
    let b_ck = bank_checksum(&bank);
    let hash = context_hash(&g_ck, &b_ck, cfg.extract.cutoff_s, cfg.extract.epsilon_s);
    let bank_path = p.contexts.join(BANK_FILE);
    std::fs::create_dir_all(&p.contexts).map_err(crate::error::io_at(&p.contexts))?;
    save_bank(&bank_path, &bank)?;
    let manifest = extract_all(&ExtractJob {
        graph: &graph,
        targets: &targets,
        has_features: &mask,
        cutoff_s: cfg.extract.cutoff_s,
        epsilon_s: cfg.extract.epsilon_s,
        workers: cfg.workers,
        out_dir: &p.contexts,
        graph_checksum: &g_ck,
        config_hash: &hash,
    })?;
    log::info!(
        "{} targets: {} computed, skipped {} existing, {} failed",
        manifest.targets,
        manifest.computed,
        manifest.skipped_existing,
        manifest.failed.len()
    );
    let outputs = finish(cfg, &p.contexts, "extract_od", &hash, start, vec![bank_path, p.contexts.join(crate::store::MANIFEST)])?;
    if !manifest.failed.is_empty() {
        return Err(AppError::Compute(deepdemand_core::Error::Invalid(format!(
            "{} of {} targets failed; see {}",
            manifest.failed.len(),
            manifest.targets,
            p.contexts.join(crate::store::MANIFEST).display()
        ))));
    }
    Ok((manifest, outputs))
}

/// Graph, targets, bank and contexts of an earlier `extract-od` run,
/// checked against each other.
pub struct Stage {
    pub graph: RoadGraph,
    /// Targets that have a context, in target-file order.
    pub targets: Vec<TargetEdge>,
    pub contexts: Vec<OdContext>,
    pub bank: FeatureBank,
    pub header: ContextHeader,
}

impl Stage {
    pub fn context_hash(&self) -> &str {
        &self.header.config_hash
    }
}

pub fn load_stage(cfg: &RunConfig) -> AppResult<Stage> {
    let p = &cfg.paths;
    let bank_path = p.contexts.join(BANK_FILE);
    require_all(&[&p.graph, &p.nodes(), &p.edges(), &p.targets, &p.contexts, &bank_path])?;
    let (graph, regions) = load_graph(&p.nodes(), &p.edges())?;
    let all = read_targets(&p.targets, &graph, &regions)?;
    let bank = load_bank(&bank_path)?;
    let (targets, contexts, header) = load_contexts(&p.contexts, &all)?;
    let g_ck = graph_checksum(&graph);
    if g_ck != header.graph_checksum {
        return Err(AppError::Mismatch(format!(
            "contexts in {} were extracted on a different graph than {}",
            p.contexts.display(),
            p.graph.display()
        )));
    }
    if header.cutoff_s != cfg.extract.cutoff_s || header.epsilon_s != cfg.extract.epsilon_s {
        return Err(AppError::Mismatch(format!(
            "contexts use cutoff {} s and epsilon {} s, the configuration asks for {} s and {} s",
            header.cutoff_s, header.epsilon_s, cfg.extract.cutoff_s, cfg.extract.epsilon_s
        )));
    }
    let expected = context_hash(&g_ck, &bank_checksum(&bank), header.cutoff_s, header.epsilon_s);
    if expected != header.config_hash {
        return Err(AppError::Mismatch(format!(
            "{} does not belong to the contexts beside it (context hash {}, bank gives {expected})",
            bank_path.display(),
            header.config_hash
        )));
    }
    Ok(Stage { graph, targets, contexts, bank, header })
}

fn observed(stage: &Stage) -> AppResult<Vec<PreparedEdge>> {
    let edges: Vec<PreparedEdge> = stage
        .targets
        .iter()
        .zip(&stage.contexts)
        .filter(|(t, _)| t.volume.is_some())
        .map(|(t, c)| PreparedEdge::new(c, &stage.bank, t.volume))
        .collect::<deepdemand_core::Result<_>>()?;
    if edges.is_empty() {
        return Err(AppError::Usage("no target with an observed volume".into()));
    }
    Ok(edges)
}

fn dir_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Trains on every observed target, holding back the configured validation
/// share for early stopping, and writes the checkpoint.
pub fn train_cmd(cfg: &RunConfig) -> AppResult<(Checkpoint, Vec<PathBuf>)> {
    let start = Instant::now();
    let stage = load_stage(cfg)?;
    let edges = observed(&stage)?;
    let tc = cfg.train.train_config(cfg.seed);
    let (tr, val) = split_validation(edges.len(), tc.validation_fraction, cfg.seed);
    let pick = |idx: &[usize]| -> Vec<&PreparedEdge> { idx.iter().map(|&i| &edges[i]).collect() };
    let arch = cfg.model.architecture(stage.bank.k());
    let (params, log) = train(ModelParams::init(&arch, cfg.seed), &pick(&tr), &pick(&val), &tc)?;
    log::info!(
        "trained {} iterations on {} edges; best validation MGEH {:.3} at iteration {}",
        log.iterations,
        tr.len(),
        log.best_mgeh,
        log.best_iteration
    );
    let hash = train_hash(cfg, stage.context_hash());
    let ckpt = Checkpoint::new(params, Some(log), hash.clone(), stage.context_hash().to_owned(), &stage.bank, cfg.seed);
    let path = &cfg.paths.checkpoint;
    save_checkpoint(path, &ckpt)?;
    let outputs = finish(cfg, &dir_of(path), "train", &hash, start, vec![path.clone()])?;
    Ok((ckpt, outputs))
}

fn masses(cfg: &RunConfig, bank: &FeatureBank) -> AppResult<Vec<f64>> {
    let path = &cfg.paths.features;
    require(path)?;
    let table = read_features(path)?;
    let col = table
        .column(&cfg.features.mass_column)
        .ok_or_else(|| AppError::format(path, format!("no mass column `{}`", cfg.features.mass_column)))?;
    let index: BTreeMap<&str, usize> = table.area_ids.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    bank.area_ids
        .iter()
        .map(|a| {
            let m = index.get(a.as_str()).map(|&i| col[i]).unwrap_or(f64::NAN);
            if m >= 0.0 {
                Ok(m)
            } else {
                Err(AppError::format(path, format!("area {a}: mass must be a non-negative number")))
            }
        })
        .collect()
}

/// Cross-validates every configured model and writes the report, the
/// aligned table, residual files and the neural model's fold checkpoints.
pub fn evaluate(cfg: &RunConfig) -> AppResult<(ReportFile, Vec<PathBuf>)> {
    let start = Instant::now();
    let stage = load_stage(cfg)?;
    let keep: Vec<usize> = (0..stage.targets.len()).filter(|&i| stage.targets[i].volume.is_some()).collect();
    let targets: Vec<TargetEdge> = keep.iter().map(|&i| stage.targets[i].clone()).collect();
    let contexts: Vec<OdContext> = keep.iter().map(|&i| stage.contexts[i].clone()).collect();
    if targets.is_empty() {
        return Err(AppError::Usage("no target with an observed volume".into()));
    }
    let mut failed = Vec::new();
    let mass = if cfg.evaluate.models.iter().any(|m| m == "gravity") {
        match masses(cfg, &stage.bank) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("gravity baseline disabled: {e}");
                failed.push(FailedModel { model: "gravity".into(), error: e.to_string() });
                None
            }
        }
    } else {
        None
    };
    let data = Dataset::build(&targets, &contexts, &stage.bank, mass.as_deref())?;
    let plan = make_folds(&targets, cfg.evaluate.protocol(), cfg.seed)?;
    let hash = eval_hash(cfg, stage.context_hash());
    let out = &cfg.paths.report_dir;
    let mut outputs = Vec::new();
    let mut models = Vec::new();
    for name in &cfg.evaluate.models {
        if failed.iter().any(|f: &FailedModel| &f.model == name) {
            continue;
        }
        let spec = match name.as_str() {
            "constant" => ModelSpec::ConstantMean,
            "ols" => ModelSpec::Linear { lambda: 0.0 },
            "ridge" => ModelSpec::Linear { lambda: cfg.evaluate.ridge_lambda },
            "gravity" => ModelSpec::Gravity(cfg.evaluate.gravity()),
            _ => ModelSpec::DeepDemand {
                arch: cfg.model.architecture(stage.bank.k()),
                train: cfg.train.train_config(cfg.seed),
            },
        };
        log::info!("evaluating {name} over {} folds", plan.fold_count());
        match run_cv_with_models(&data, &plan, &spec) {
            Ok((mut report, params)) => {
                report.model = name.clone();
                for (fold, p) in params {
                    let log = report.folds.iter().find(|f| f.fold == fold).and_then(|f| f.log.clone());
                    let path = out.join("checkpoints").join(format!("{name}_fold_{fold}.json"));
                    let ckpt = Checkpoint::new(p, log, hash.clone(), stage.context_hash().to_owned(), &stage.bank, cfg.seed);
                    save_checkpoint(&path, &ckpt)?;
                    outputs.push(path);
                }
                let path = out.join(format!("residuals_{name}.csv"));
                report::write_residuals(&path, &hash, &report)?;
                outputs.push(path);
                models.push(report);
            }
            Err(e) => {
                log::warn!("{name} failed: {e}");
                failed.push(FailedModel { model: name.clone(), error: e.to_string() });
            }
        }
    }
    let report = ReportFile {
        format: "deepdemand-report".into(),
        config_hash: hash.clone(),
        context_hash: stage.context_hash().to_owned(),
        bank_checksum: bank_checksum(&stage.bank),
        protocol: plan.protocol.tag().into(),
        folds: plan.fold_count(),
        seed: cfg.seed,
        baseline_design: BASELINE_DESIGN.into(),
        models,
        failed_models: failed,
    };
    let json = out.join(REPORT_JSON);
    write_json(&json, &report)?;
    let table = out.join(REPORT_TABLE);
    write_atomic(&table, report::render_table(&report).as_bytes())?;
    outputs.push(json);
    outputs.push(table);
    let outputs = finish(cfg, out, "evaluate", &hash, start, outputs)?;
    Ok((report, outputs))
}

fn load_checked_checkpoint(path: &Path, stage: &Stage) -> AppResult<Checkpoint> {
    require(path)?;
    let ckpt = load_checkpoint(path)?;
    ckpt.check_bank(&stage.bank)?;
    if ckpt.context_hash != stage.context_hash() {
        return Err(AppError::Mismatch(format!(
            "{} was trained on contexts {}, the configured contexts are {}",
            path.display(),
            ckpt.context_hash,
            stage.context_hash()
        )));
    }
    if ckpt.params.k() != stage.bank.k() {
        return Err(AppError::Mismatch(format!(
            "{} expects {} features per area, the bank has {}",
            path.display(),
            ckpt.params.k(),
            stage.bank.k()
        )));
    }
    Ok(ckpt)
}

#[derive(Serialize)]
struct PredictKey<'a> {
    checkpoint: &'a str,
    bank: &'a str,
}

pub const PREDICTIONS: &str = "predictions.csv";

/// Predicts every target with a context. `scenario` swaps in an alternate
/// raw feature table projected with the fitted transform.
pub fn predict(cfg: &RunConfig, scenario: Option<&Path>) -> AppResult<(Vec<(TargetEdge, f64)>, Vec<PathBuf>)> {
    let start = Instant::now();
    let stage = load_stage(cfg)?;
    let ckpt = load_checked_checkpoint(&cfg.paths.checkpoint, &stage)?;
    let bank = match scenario {
        Some(path) => {
            require(path)?;
            log::info!("scenario features from {}", path.display());
            stage.bank.with_features(&read_features(path)?)?
        }
        None => stage.bank.clone(),
    };
    let b_ck = bank_checksum(&bank);
    let hash = config_hash(&PredictKey { checkpoint: &ckpt.config_hash, bank: &b_ck });
    let rows = stage
        .targets
        .iter()
        .zip(&stage.contexts)
        .map(|(t, c)| Ok((t.clone(), ckpt.params.predict_edge(c, &bank)?)))
        .collect::<AppResult<Vec<_>>>()?;
    let out = cfg.paths.report_dir.join(PREDICTIONS);
    write_tagged_rows(
        &out,
        Some(&hash),
        &["edge_id", "yhat", "y"],
        rows.iter().map(|(t, yh)| [t.edge.to_string(), yh.to_string(), tables::opt(t.volume)]),
    )?;
    let outputs = finish(cfg, &cfg.paths.report_dir, "predict", &hash, start, vec![out])?;
    Ok((rows, outputs))
}

pub const DETERRENCE: &str = "deterrence.csv";
pub const POTENTIALS: &str = "potentials.csv";

#[derive(Serialize)]
struct InterpretKey<'a> {
    checkpoints: Vec<&'a str>,
    contexts: Option<&'a str>,
    interpret: &'a crate::config::InterpretSection,
    seed: u64,
}

/// Exports the deterrence curve of one checkpoint, or the per-fold curves
/// with their mean and range when several are given.
pub fn deterrence(cfg: &RunConfig, checkpoints: &[PathBuf]) -> AppResult<Vec<PathBuf>> {
    let start = Instant::now();
    let paths: Vec<PathBuf> = if checkpoints.is_empty() { vec![cfg.paths.checkpoint.clone()] } else { checkpoints.to_vec() };
    let ckpts = paths
        .iter()
        .map(|p| require(p).and_then(|_| load_checkpoint(p)))
        .collect::<AppResult<Vec<_>>>()?;
    let hash = config_hash(&InterpretKey {
        checkpoints: ckpts.iter().map(|c| c.config_hash.as_str()).collect(),
        contexts: None,
        interpret: &cfg.interpret,
        seed: cfg.seed,
    });
    let grid = cfg.interpret.grid();
    let out = cfg.paths.report_dir.join(DETERRENCE);
    if let [one] = ckpts.as_slice() {
        report::write_curve(&out, &hash, &export_deterrence(&one.params, &grid))?;
    } else {
        let params: Vec<ModelParams> = ckpts.into_iter().map(|c| c.params).collect();
        report::write_curve_band(&out, &hash, &export_deterrence_folds(&params, &grid)?)?;
    }
    finish(cfg, &cfg.paths.report_dir, "deterrence", &hash, start, vec![out])
}

/// Origin and destination potentials over the screened pair universe.
pub fn potentials(cfg: &RunConfig) -> AppResult<Vec<PathBuf>> {
    let start = Instant::now();
    let stage = load_stage(cfg)?;
    let ckpt = load_checked_checkpoint(&cfg.paths.checkpoint, &stage)?;
    let hash = config_hash(&InterpretKey {
        checkpoints: vec![&ckpt.config_hash],
        contexts: Some(stage.context_hash()),
        interpret: &cfg.interpret,
        seed: cfg.seed,
    });
    let map = compute_potentials(&ckpt.params, &stage.bank, &stage.contexts, cfg.interpret.universe(cfg.seed))?;
    log::info!("potentials over {} pairs", map.pair_count);
    let out = cfg.paths.report_dir.join(POTENTIALS);
    report::write_potentials(&out, &hash, &map)?;
    finish(cfg, &cfg.paths.report_dir, "potentials", &hash, start, vec![out])
}
