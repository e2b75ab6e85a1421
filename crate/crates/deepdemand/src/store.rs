//! Per-target OD-context files and the batch extraction that produces them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use deepdemand_core::graph::{EdgeId, RoadGraph, TargetEdge};
use deepdemand_core::od::{extract_context, OdContext, OdPair, Scratch};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, AppError, AppResult};
use crate::tables::write_atomic;

const MAGIC: &str = "deepdemand-od-context";
const VERSION: u32 = 1;
pub const MANIFEST: &str = "extract_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextHeader {
    pub target: EdgeId,
    pub cutoff_s: f64,
    pub epsilon_s: f64,
    pub graph_checksum: String,
    pub config_hash: String,
}

pub fn context_path(dir: &Path, edge: EdgeId) -> PathBuf {
    dir.join(format!("edge_{edge}.odc"))
}

/// Plain text: a header block, then `O`, `D` and `P` records. Floats use
/// the shortest representation that parses back to the same bits.
pub fn encode_context(header: &ContextHeader, ctx: &OdContext) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "target {}", header.target);
    let _ = writeln!(s, "cutoff_s {}", header.cutoff_s);
    let _ = writeln!(s, "epsilon_s {}", header.epsilon_s);
    let _ = writeln!(s, "graph {}", header.graph_checksum);
    let _ = writeln!(s, "config {}", header.config_hash);
    let _ = writeln!(s, "counts {} {} {}", ctx.origins.len(), ctx.destinations.len(), ctx.pairs.len());
    for (n, t) in &ctx.origins {
        let _ = writeln!(s, "O {n} {t}");
    }
    for (n, t) in &ctx.destinations {
        let _ = writeln!(s, "D {n} {t}");
    }
    for p in &ctx.pairs {
        let _ = writeln!(s, "P {} {} {} {} {}", p.origin, p.destination, p.t_origin, p.t_dest, p.t_od);
    }
    s
}

fn field<'a>(path: &Path, line: Option<&'a str>, key: &str) -> AppResult<&'a str> {
    let line = line.ok_or_else(|| AppError::format(path, format!("truncated before `{key}`")))?;
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| AppError::format(path, format!("expected `{key}`, found {line:?}")))
}

fn num<T: std::str::FromStr>(path: &Path, raw: &str) -> AppResult<T> {
    raw.parse().map_err(|_| AppError::format(path, format!("bad number {raw:?}")))
}

fn parse_header<'a>(path: &Path, lines: &mut impl Iterator<Item = &'a str>) -> AppResult<ContextHeader> {
    let magic = lines.next().unwrap_or("");
    if magic != format!("{MAGIC} {VERSION}") {
        return Err(AppError::format(path, format!("not a version {VERSION} context file")));
    }
    Ok(ContextHeader {
        target: num(path, field(path, lines.next(), "target")?)?,
        cutoff_s: num(path, field(path, lines.next(), "cutoff_s")?)?,
        epsilon_s: num(path, field(path, lines.next(), "epsilon_s")?)?,
        graph_checksum: field(path, lines.next(), "graph")?.to_owned(),
        config_hash: field(path, lines.next(), "config")?.to_owned(),
    })
}

pub fn decode_context(path: &Path, text: &str) -> AppResult<(ContextHeader, OdContext)> {
    let mut lines = text.lines();
    let header = parse_header(path, &mut lines)?;
    let counts: Vec<usize> = field(path, lines.next(), "counts")?
        .split(' ')
        .map(|c| num(path, c))
        .collect::<AppResult<_>>()?;
    if counts.len() != 3 {
        return Err(AppError::format(path, "counts line needs three values"));
    }
    let mut record = |tag: &str, arity: usize| -> AppResult<Vec<&str>> {
        let parts: Vec<&str> = field(path, lines.next(), tag)?.split(' ').collect();
        if parts.len() != arity {
            return Err(AppError::format(path, format!("`{tag}` record needs {arity} values")));
        }
        Ok(parts)
    };
    let mut side = |tag: &str, n: usize| -> AppResult<Vec<(u64, f64)>> {
        (0..n)
            .map(|_| {
                let p = record(tag, 2)?;
                Ok((num(path, p[0])?, num(path, p[1])?))
            })
            .collect()
    };
    let origins = side("O", counts[0])?;
    let destinations = side("D", counts[1])?;
    let pairs = (0..counts[2])
        .map(|_| {
            let p = record("P", 5)?;
            Ok(OdPair {
                origin: num(path, p[0])?,
                destination: num(path, p[1])?,
                t_origin: num(path, p[2])?,
                t_dest: num(path, p[3])?,
                t_od: num(path, p[4])?,
            })
        })
        .collect::<AppResult<Vec<_>>>()?;
    if let Some(extra) = lines.next() {
        return Err(AppError::format(path, format!("unexpected trailing line {extra:?}")));
    }
    let ctx = OdContext {
        target: header.target,
        cutoff_s: header.cutoff_s,
        epsilon_s: header.epsilon_s,
        origins,
        destinations,
        pairs,
    };
    Ok((header, ctx))
}

pub fn write_context(path: &Path, header: &ContextHeader, ctx: &OdContext) -> AppResult<()> {
    write_atomic(path, encode_context(header, ctx).as_bytes())
}

pub fn read_context(path: &Path) -> AppResult<(ContextHeader, OdContext)> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    decode_context(path, &text)
}

pub fn read_header(path: &Path) -> AppResult<ContextHeader> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    parse_header(path, &mut text.lines())
}

pub struct ExtractJob<'a> {
    pub graph: &'a RoadGraph,
    pub targets: &'a [TargetEdge],
    pub has_features: &'a [bool],
    pub cutoff_s: f64,
    pub epsilon_s: f64,
    pub workers: usize,
    pub out_dir: &'a Path,
    pub graph_checksum: &'a str,
    pub config_hash: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTarget {
    pub edge: EdgeId,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractManifest {
    pub config_hash: String,
    pub graph_checksum: String,
    pub cutoff_s: f64,
    pub epsilon_s: f64,
    pub targets: usize,
    pub computed: usize,
    pub skipped_existing: usize,
    pub failed: Vec<FailedTarget>,
    /// Pair count per written context.
    pub pairs: BTreeMap<EdgeId, usize>,
}

enum Outcome {
    Computed(usize),
    Skipped(usize),
    Failed(String),
}

/// Extracts every target on a pool of `workers` threads. Targets whose file
/// already exists with a matching header are skipped; a failing target is
/// recorded in the manifest and the batch continues.
pub fn extract_all(job: &ExtractJob<'_>) -> AppResult<ExtractManifest> {
    std::fs::create_dir_all(job.out_dir).map_err(io_at(job.out_dir))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(job.workers.max(1))
        .build()
        .map_err(|e| AppError::Usage(format!("cannot start {} workers: {e}", job.workers)))?;
    let header_for = |t: &TargetEdge| ContextHeader {
        target: t.edge,
        cutoff_s: job.cutoff_s,
        epsilon_s: job.epsilon_s,
        graph_checksum: job.graph_checksum.to_owned(),
        config_hash: job.config_hash.to_owned(),
    };
    let outcomes: Vec<(EdgeId, Outcome)> = pool.install(|| {
        job.targets
            .par_iter()
            .map_init(
                || Scratch::new(job.graph.node_count()),
                |scratch, t| {
                    let path = context_path(job.out_dir, t.edge);
                    let header = header_for(t);
                    if let Ok((existing, ctx)) = read_context(&path) {
                        if existing == header {
                            return (t.edge, Outcome::Skipped(ctx.pairs.len()));
                        }
                    }
                    let result = extract_context(job.graph, t, job.cutoff_s, job.epsilon_s, job.has_features, scratch)
                        .map_err(AppError::from)
                        .and_then(|ctx| write_context(&path, &header, &ctx).map(|_| ctx.pairs.len()));
                    match result {
                        Ok(n) => (t.edge, Outcome::Computed(n)),
                        Err(e) => {
                            log::warn!("target {}: {e}", t.edge);
                            (t.edge, Outcome::Failed(e.to_string()))
                        }
                    }
                },
            )
            .collect()
    });
    let mut m = ExtractManifest {
        config_hash: job.config_hash.to_owned(),
        graph_checksum: job.graph_checksum.to_owned(),
        cutoff_s: job.cutoff_s,
        epsilon_s: job.epsilon_s,
        targets: job.targets.len(),
        computed: 0,
        skipped_existing: 0,
        failed: Vec::new(),
        pairs: BTreeMap::new(),
    };
    for (edge, o) in outcomes {
        match o {
            Outcome::Computed(n) => {
                m.computed += 1;
                m.pairs.insert(edge, n);
            }
            Outcome::Skipped(n) => {
                m.skipped_existing += 1;
                m.pairs.insert(edge, n);
            }
            Outcome::Failed(error) => m.failed.push(FailedTarget { edge, error }),
        }
    }
    let path = job.out_dir.join(MANIFEST);
    write_atomic(&path, &crate::artifacts::to_json(&m))?;
    Ok(m)
}

/// Contexts for `targets` that have files in `dir`, in target order.
/// Targets without a file are dropped with a warning. All files must share
/// one graph checksum and config hash.
pub fn load_contexts(dir: &Path, targets: &[TargetEdge]) -> AppResult<(Vec<TargetEdge>, Vec<OdContext>, ContextHeader)> {
    crate::error::require(dir)?;
    let mut kept = Vec::new();
    let mut contexts = Vec::new();
    let mut first: Option<ContextHeader> = None;
    for t in targets {
        let path = context_path(dir, t.edge);
        if !path.exists() {
            log::warn!("no context for target {}; left out", t.edge);
            continue;
        }
        let (h, ctx) = read_context(&path)?;
        if h.target != t.edge {
            return Err(AppError::format(&path, format!("holds target {}, expected {}", h.target, t.edge)));
        }
        match &first {
            None => first = Some(h),
            Some(f) if f.graph_checksum != h.graph_checksum || f.config_hash != h.config_hash => {
                return Err(AppError::Mismatch(format!(
                    "{} was extracted with config {} on graph {}, others with config {} on graph {}",
                    path.display(),
                    h.config_hash,
                    &h.graph_checksum[..12.min(h.graph_checksum.len())],
                    f.config_hash,
                    &f.graph_checksum[..12.min(f.graph_checksum.len())],
                )))
            }
            Some(_) => {}
        }
        kept.push(t.clone());
        contexts.push(ctx);
    }
    let header = first.ok_or_else(|| AppError::Usage(format!("no context files for the targets in {}", dir.display())))?;
    Ok((kept, contexts, header))
}
