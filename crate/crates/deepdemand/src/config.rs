//! Run configuration: built-in defaults, a TOML file, `DEEPDEMAND_*`
//! environment variables and command-line flags, later sources winning.

use std::path::{Path, PathBuf};

use deepdemand_core::eval::{GravityConfig, Protocol};
use deepdemand_core::interpret::{GridSpec, PairUniverse};
use deepdemand_core::model::{Activation, AdamWConfig, Architecture, Constants, OutputTransform, TrainConfig};
use deepdemand_core::od::{DEFAULT_CUTOFF_S, DEFAULT_EPSILON_S};
use serde::{Deserialize, Serialize};

use crate::error::{io_at, AppError, AppResult};

pub const ENV_PREFIX: &str = "DEEPDEMAND_";
/// Names the config file when `--config` is absent.
pub const ENV_CONFIG: &str = "DEEPDEMAND_CONFIG";
/// Log filter, in `env_logger` syntax.
pub const ENV_LOG: &str = "DEEPDEMAND_LOG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Caps every worker pool.
    pub workers: usize,
    pub paths: Paths,
    pub synth: SynthSection,
    pub extract: ExtractSection,
    pub features: FeatureSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
    pub interpret: InterpretSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            paths: Paths::default(),
            synth: SynthSection::default(),
            extract: ExtractSection::default(),
            features: FeatureSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            evaluate: EvaluateSection::default(),
            interpret: InterpretSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `nodes.csv` and `edges.csv`.
    pub graph: PathBuf,
    pub targets: PathBuf,
    pub features: PathBuf,
    pub centroids: PathBuf,
    pub contexts: PathBuf,
    pub checkpoint: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            graph: "graph".into(),
            targets: "targets.csv".into(),
            features: "features.csv".into(),
            centroids: "centroids.csv".into(),
            contexts: "contexts".into(),
            checkpoint: "checkpoint.json".into(),
            report_dir: "report".into(),
        }
    }
}

impl Paths {
    pub fn nodes(&self) -> PathBuf {
        self.graph.join("nodes.csv")
    }

    pub fn edges(&self) -> PathBuf {
        self.graph.join("edges.csv")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub size: usize,
    pub spacing_m: f64,
    pub area_share: f64,
    pub features: usize,
    pub extra_targets: usize,
    pub regions: usize,
    /// Seed of the frozen model that generates the volumes.
    pub planted_seed: u64,
    pub noise_sd: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            size: 20,
            spacing_m: 2500.0,
            area_share: 0.5,
            features: 8,
            extra_targets: 100,
            regions: 3,
            planted_seed: 1,
            noise_sd: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub cutoff_s: f64,
    pub epsilon_s: f64,
}

impl Default for ExtractSection {
    fn default() -> Self {
        ExtractSection { cutoff_s: DEFAULT_CUTOFF_S, epsilon_s: DEFAULT_EPSILON_S }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    /// Clamped to the number of feature columns.
    pub pca_components: usize,
    /// Raw column used as the gravity mass.
    pub mass_column: String,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection { pca_components: deepdemand_core::features::DEFAULT_COMPONENTS, mass_column: "population".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    Relu,
    Tanh,
    Identity,
}

impl From<ActivationName> for Activation {
    fn from(a: ActivationName) -> Activation {
        match a {
            ActivationName::Relu => Activation::Relu,
            ActivationName::Tanh => Activation::Tanh,
            ActivationName::Identity => Activation::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformName {
    Sqrt,
    Identity,
    Log1p,
}

impl From<TransformName> for OutputTransform {
    fn from(t: TransformName) -> OutputTransform {
        match t {
            TransformName::Sqrt => OutputTransform::Sqrt,
            TransformName::Identity => OutputTransform::Identity,
            TransformName::Log1p => OutputTransform::Log1p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: Vec<usize>,
    pub interaction: Vec<usize>,
    pub deterrence: Vec<usize>,
    pub hidden: ActivationName,
    pub deterrence_hidden: ActivationName,
    pub mu_s: f64,
    pub scale_s: f64,
    pub gamma: f64,
    pub transform: TransformName,
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = Architecture::new(1);
        let c = Constants::default();
        ModelSection {
            encoder: a.encoder,
            interaction: a.interaction,
            deterrence: a.deterrence,
            hidden: ActivationName::Relu,
            deterrence_hidden: ActivationName::Tanh,
            mu_s: c.mu_s,
            scale_s: c.scale_s,
            gamma: c.gamma,
            transform: TransformName::Sqrt,
        }
    }
}

impl ModelSection {
    pub fn architecture(&self, k: usize) -> Architecture {
        Architecture {
            k,
            encoder: self.encoder.clone(),
            interaction: self.interaction.clone(),
            deterrence: self.deterrence.clone(),
            hidden: self.hidden.into(),
            deterrence_hidden: self.deterrence_hidden.into(),
            constants: Constants {
                mu_s: self.mu_s,
                scale_s: self.scale_s,
                gamma: self.gamma,
                transform: self.transform.into(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub eval_every: u64,
    pub patience: u32,
    pub min_delta: f64,
    pub max_iters: u64,
    pub batch_size: usize,
    pub validation_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let o = t.optimizer;
        TrainSection {
            lr: o.lr,
            weight_decay: o.weight_decay,
            beta1: o.beta1,
            beta2: o.beta2,
            adam_eps: o.eps,
            clip_norm: t.clip_norm,
            eval_every: t.eval_every,
            patience: t.patience,
            min_delta: t.min_delta,
            max_iters: t.max_iters,
            batch_size: t.batch_size,
            validation_fraction: t.validation_fraction,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            optimizer: AdamWConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            clip_norm: self.clip_norm,
            eval_every: self.eval_every,
            patience: self.patience,
            min_delta: self.min_delta,
            max_iters: self.max_iters,
            batch_size: self.batch_size,
            validation_fraction: self.validation_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolName {
    Random,
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub protocol: ProtocolName,
    pub folds: usize,
    /// Any of `constant`, `ols`, `ridge`, `gravity`, `deepdemand`.
    pub models: Vec<String>,
    pub ridge_lambda: f64,
    pub gravity_steps: usize,
    pub gravity_lr: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        let g = GravityConfig::default();
        EvaluateSection {
            protocol: ProtocolName::Random,
            folds: 5,
            models: ["constant", "ols", "ridge", "gravity", "deepdemand"].map(String::from).to_vec(),
            ridge_lambda: 1.0,
            gravity_steps: g.steps,
            gravity_lr: g.lr,
        }
    }
}

impl EvaluateSection {
    pub fn protocol(&self) -> Protocol {
        match self.protocol {
            ProtocolName::Random => Protocol::RandomKFold { k: self.folds },
            ProtocolName::Spatial => Protocol::Spatial,
        }
    }

    pub fn gravity(&self) -> GravityConfig {
        GravityConfig { steps: self.gravity_steps, lr: self.gravity_lr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum UniverseName {
    All,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretSection {
    pub start_min: f64,
    pub end_min: f64,
    pub step_min: f64,
    pub universe: UniverseName,
    pub sample_size: usize,
}

impl Default for InterpretSection {
    fn default() -> Self {
        let g = GridSpec::default();
        InterpretSection {
            start_min: g.start_min,
            end_min: g.end_min,
            step_min: g.step_min,
            universe: UniverseName::Sample,
            sample_size: 50_000,
        }
    }
}

impl InterpretSection {
    pub fn grid(&self) -> GridSpec {
        GridSpec { start_min: self.start_min, end_min: self.end_min, step_min: self.step_min }
    }

    pub fn universe(&self, seed: u64) -> PairUniverse {
        match self.universe {
            UniverseName::All => PairUniverse::AllScreened,
            UniverseName::Sample => PairUniverse::Sample { size: self.sample_size, seed },
        }
    }
}

/// One `section.key = value` override.
pub type Override = (String, toml::Value);

/// Parses `"section.key=value"`; the value is read as a TOML literal and
/// falls back to a plain string.
pub fn parse_assignment(raw: &str) -> AppResult<Override> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| AppError::Usage(format!("expected KEY=VALUE, got {raw:?}")))?;
    Ok((key.trim().to_owned(), literal(value.trim())))
}

fn literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

/// `DEEPDEMAND_SECTION__KEY=value` pairs; a single-segment name such as
/// `DEEPDEMAND_SEED` sets a top-level key.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<Override> {
    let mut out: Vec<Override> = vars
        .into_iter()
        .filter(|(k, _)| k != ENV_CONFIG && k != ENV_LOG)
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            let key = rest.split("__").map(str::to_lowercase).collect::<Vec<_>>().join(".");
            Some((key, literal(&v)))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn set(root: &mut toml::Table, key: &str, value: toml::Value) -> AppResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| AppError::Usage(format!("empty key {key:?}")))?;
    let mut table = root;
    for p in parts {
        table = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| AppError::Usage(format!("{key}: `{p}` is not a section")))?;
    }
    table.insert(last.to_owned(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, other: toml::Table) {
    for (k, v) in other {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Rewrites relative entries of `[paths]` against `dir`.
fn anchor_paths(table: &mut toml::Table, dir: &Path) {
    if let Some(toml::Value::Table(paths)) = table.get_mut("paths") {
        for (_, v) in paths.iter_mut() {
            if let Some(s) = v.as_str().filter(|s| Path::new(s).is_relative()) {
                *v = toml::Value::String(dir.join(s).to_string_lossy().into_owned());
            }
        }
    }
}

/// Reads a config file. Relative paths inside it are taken from the file's
/// directory.
pub fn read_file(path: &Path) -> AppResult<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    let mut table: toml::Table = text.parse().map_err(|e| AppError::format(path, e))?;
    anchor_paths(&mut table, path.parent().unwrap_or(Path::new("")));
    Ok(table)
}

/// Layers `file`, then `env`, then `flags` over the defaults.
pub fn resolve(file: Option<toml::Table>, env: &[Override], flags: &[Override]) -> AppResult<RunConfig> {
    let mut root = match toml::Value::try_from(RunConfig::default()) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("the default config is a table"),
    };
    if let Some(f) = file {
        merge(&mut root, f);
    }
    for (k, v) in env.iter().chain(flags) {
        set(&mut root, k, v.clone())?;
    }
    let cfg: RunConfig = toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| AppError::Usage(format!("invalid configuration: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> AppResult<()> {
        let bad = |m: &str| Err(AppError::Usage(m.to_owned()));
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !(self.extract.cutoff_s > 0.0) || !(self.extract.epsilon_s >= 0.0) {
            return bad("extract.cutoff_s must be positive and extract.epsilon_s non-negative");
        }
        if self.features.pca_components == 0 {
            return bad("features.pca_components must be at least 1");
        }
        for m in &self.evaluate.models {
            if !["constant", "ols", "ridge", "gravity", "deepdemand"].contains(&m.as_str()) {
                return Err(AppError::Usage(format!("unknown model {m:?} in evaluate.models")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("the config serialises")
    }
}
