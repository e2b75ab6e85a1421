//! Command-line definitions. Every flag is turned into a config override so
//! flags beat `DEEPDEMAND_*` variables, which beat the config file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{self, Override, ProtocolName, RunConfig, UniverseName, ENV_CONFIG};
use crate::error::{require, AppResult};

#[derive(Debug, Parser)]
#[command(name = "deepdemand", version, about = "Edge-level traffic demand estimation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML run configuration; defaults to $DEEPDEMAND_CONFIG when set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Any configuration key, e.g. `--set train.max_iters=5000`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps every worker pool.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic grid with planted volumes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        extra_targets: Option<usize>,
    },
    /// Fit the feature bank and extract OD contexts for every target.
    ExtractOd {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        centroids: Option<PathBuf>,
        #[arg(long)]
        cutoff_s: Option<f64>,
        #[arg(long)]
        epsilon_s: Option<f64>,
        /// Context directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on every observed target and write a checkpoint.
    Train {
        #[command(flatten)]
        stage: Stage,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        max_iters: Option<u64>,
    },
    /// Cross-validate the model and the baselines.
    Evaluate {
        #[command(flatten)]
        stage: Stage,
        #[arg(long)]
        protocol: Option<ProtocolName>,
        /// Number of random folds.
        #[arg(long)]
        k: Option<usize>,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict every target with a context.
    Predict {
        #[command(flatten)]
        stage: Stage,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Alternate raw feature table (scenario mode).
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the learned deterrence curve; repeat `--checkpoint` for folds.
    Deterrence {
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Origin and destination potentials per area.
    Potentials {
        #[command(flatten)]
        stage: Stage,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        universe: Option<UniverseName>,
        #[arg(long)]
        sample_size: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Directory with `nodes.csv` and `edges.csv`.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub targets: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Stage {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub contexts: Option<PathBuf>,
}

#[derive(Default)]
struct Flags(Vec<Override>);

impl Flags {
    fn put<T: Into<toml::Value>>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.0.push((key.to_owned(), v.into()));
        }
    }

    fn path(&mut self, key: &str, value: &Option<PathBuf>) {
        self.put(key, value.as_ref().map(|p| p.to_string_lossy().into_owned()));
    }

    fn int(&mut self, key: &str, value: Option<impl TryInto<i64>>) {
        self.put(key, value.and_then(|v| v.try_into().ok()));
    }

    fn inputs(&mut self, i: &Inputs) {
        self.path("paths.graph", &i.graph);
        self.path("paths.targets", &i.targets);
    }

    fn stage(&mut self, s: &Stage) {
        self.inputs(&s.inputs);
        self.path("paths.contexts", &s.contexts);
    }
}

fn name_of<T: serde::Serialize>(v: T) -> String {
    match toml::Value::try_from([v]) {
        Ok(toml::Value::Array(a)) => a[0].as_str().unwrap_or_default().to_owned(),
        _ => String::new(),
    }
}

fn flags(cli: &Cli) -> AppResult<Vec<Override>> {
    let mut f = Flags::default();
    let g = &cli.global;
    f.int("seed", g.seed);
    f.int("workers", g.workers);
    match &cli.command {
        Command::Synth { size, extra_targets, .. } => {
            f.int("synth.size", *size);
            f.int("synth.extra_targets", *extra_targets);
        }
        Command::ExtractOd { inputs, features, centroids, cutoff_s, epsilon_s, out } => {
            f.inputs(inputs);
            f.path("paths.features", features);
            f.path("paths.centroids", centroids);
            f.put("extract.cutoff_s", *cutoff_s);
            f.put("extract.epsilon_s", *epsilon_s);
            f.path("paths.contexts", out);
        }
        Command::Train { stage, checkpoint, max_iters } => {
            f.stage(stage);
            f.path("paths.checkpoint", checkpoint);
            f.int("train.max_iters", *max_iters);
        }
        Command::Evaluate { stage, protocol, k, out } => {
            f.stage(stage);
            f.put("evaluate.protocol", protocol.map(name_of));
            f.int("evaluate.folds", *k);
            f.path("paths.report_dir", out);
        }
        Command::Predict { stage, checkpoint, out, .. } => {
            f.stage(stage);
            f.path("paths.checkpoint", checkpoint);
            f.path("paths.report_dir", out);
        }
        Command::Deterrence { out, .. } => f.path("paths.report_dir", out),
        Command::Potentials { stage, checkpoint, universe, sample_size, out } => {
            f.stage(stage);
            f.path("paths.checkpoint", checkpoint);
            f.put("interpret.universe", universe.map(name_of));
            f.int("interpret.sample_size", *sample_size);
            f.path("paths.report_dir", out);
        }
    }
    let mut out: Vec<Override> = g.set.iter().map(|s| config::parse_assignment(s)).collect::<AppResult<_>>()?;
    out.extend(f.0);
    Ok(out)
}

/// Resolves the configuration for `cli` from the process environment.
pub fn resolve_config(cli: &Cli) -> AppResult<RunConfig> {
    let file = cli.global.config.clone().or_else(|| std::env::var_os(ENV_CONFIG).map(PathBuf::from));
    let table = match &file {
        Some(path) => {
            require(path)?;
            Some(config::read_file(path)?)
        }
        None => None,
    };
    let env = config::env_overrides(std::env::vars());
    config::resolve(table, &env, &flags(cli)?)
}

fn report(outputs: &[PathBuf]) {
    for p in outputs {
        log::debug!("wrote {}", p.display());
    }
}

pub fn run(cli: Cli) -> AppResult<()> {
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::Synth { out, .. } => report(&commands::synth(&cfg, out)?),
        Command::ExtractOd { .. } => report(&commands::extract_od(&cfg)?.1),
        Command::Train { .. } => report(&commands::train_cmd(&cfg)?.1),
        Command::Evaluate { .. } => {
            let (r, outputs) = commands::evaluate(&cfg)?;
            print!("{}", crate::report::render_table(&r));
            report(&outputs);
        }
        Command::Predict { features, .. } => report(&commands::predict(&cfg, features.as_deref().map(Path::new))?.1),
        Command::Deterrence { checkpoint, .. } => report(&commands::deterrence(&cfg, checkpoint)?),
        Command::Potentials { .. } => report(&commands::potentials(&cfg)?),
    }
    Ok(())
}
