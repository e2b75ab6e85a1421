//! Delimited-text inputs and outputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use deepdemand_core::features::{Centroid, FeatureTable};
use deepdemand_core::graph::{parse_posted_speed, EdgeId, EdgeRecord, Node, RoadClass, RoadGraph, TargetEdge};

use crate::error::{io_at, AppError, AppResult};

struct Table<'p> {
    path: &'p Path,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl<'p> Table<'p> {
    fn open(path: &'p Path) -> AppResult<Table<'p>> {
        let file = File::open(path).map_err(io_at(path))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| AppError::format(path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        let rows = reader.records().collect::<Result<Vec<_>, _>>().map_err(|e| AppError::format(path, e))?;
        Ok(Table { path, headers, rows })
    }

    fn column(&self, name: &str) -> AppResult<usize> {
        self.optional(name).ok_or_else(|| AppError::format(self.path, format!("missing column `{name}`")))
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn cell<'a>(&self, row: &'a csv::StringRecord, col: usize) -> &'a str {
        row.get(col).unwrap_or("")
    }

    fn parse<T: FromStr>(&self, line: usize, row: &csv::StringRecord, col: usize) -> AppResult<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.cell(row, col);
        raw.parse().map_err(|e| {
            AppError::format(self.path, format!("row {}, column `{}`: {raw:?}: {e}", line + 1, self.headers[col]))
        })
    }
}

fn graph_error(path: &Path, e: deepdemand_core::Error) -> AppError {
    AppError::format(path, e)
}

pub fn read_nodes(path: &Path) -> AppResult<Vec<Node>> {
    let t = Table::open(path)?;
    let (id, x, y) = (t.column("node_id")?, t.column("x_m")?, t.column("y_m")?);
    t.rows
        .iter()
        .enumerate()
        .map(|(i, r)| Ok(Node { id: t.parse(i, r, id)?, x: t.parse(i, r, x)?, y: t.parse(i, r, y)? }))
        .collect()
}

pub struct EdgeList {
    pub records: Vec<EdgeRecord>,
    /// Region labels given on the edge list, used for targets without one.
    pub regions: BTreeMap<EdgeId, String>,
}

pub fn read_edges(path: &Path) -> AppResult<EdgeList> {
    let t = Table::open(path)?;
    let (id, u, v, len, class) =
        (t.column("edge_id")?, t.column("u")?, t.column("v")?, t.column("length_m")?, t.column("highway_class")?);
    let speed = t.optional("maxspeed_mph");
    let region = t.optional("region");
    let mut records = Vec::with_capacity(t.rows.len());
    let mut regions = BTreeMap::new();
    for (i, r) in t.rows.iter().enumerate() {
        let edge: EdgeId = t.parse(i, r, id)?;
        let posted = match speed.map(|c| t.cell(r, c)).filter(|s| !s.is_empty()) {
            None => None,
            Some(raw) => {
                let parsed = parse_posted_speed(raw);
                if parsed.is_none() {
                    log::warn!("edge {edge}: unparsable speed {raw:?}, using the class fallback");
                }
                parsed
            }
        };
        if let Some(label) = region.map(|c| t.cell(r, c)).filter(|s| !s.is_empty()) {
            regions.insert(edge, label.to_owned());
        }
        records.push(EdgeRecord {
            id: edge,
            tail: t.parse(i, r, u)?,
            head: t.parse(i, r, v)?,
            length_m: t.parse(i, r, len)?,
            class: RoadClass::from_tag(t.cell(r, class)),
            posted_mph: posted,
        });
    }
    Ok(EdgeList { records, regions })
}

/// Loads and validates the network; validation failures name the edge file.
pub fn load_graph(nodes: &Path, edges: &Path) -> AppResult<(RoadGraph, BTreeMap<EdgeId, String>)> {
    let n = read_nodes(nodes)?;
    let e = read_edges(edges)?;
    let graph = RoadGraph::new(n, e.records).map_err(|err| graph_error(edges, err))?;
    Ok((graph, e.regions))
}

pub fn read_targets(path: &Path, graph: &RoadGraph, edge_regions: &BTreeMap<EdgeId, String>) -> AppResult<Vec<TargetEdge>> {
    let t = Table::open(path)?;
    let id = t.column("edge_id")?;
    let aadt = t.optional("aadt");
    let region = t.optional("region");
    let mut out = Vec::with_capacity(t.rows.len());
    for (i, r) in t.rows.iter().enumerate() {
        let edge: EdgeId = t.parse(i, r, id)?;
        let volume = match aadt {
            Some(c) if !t.cell(r, c).is_empty() => Some(t.parse::<f64>(i, r, c)?),
            _ => None,
        };
        let label = region
            .map(|c| t.cell(r, c))
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .or_else(|| edge_regions.get(&edge).cloned());
        out.push(TargetEdge::new(graph, edge, volume, label).map_err(|e| graph_error(path, e))?);
    }
    Ok(out)
}

/// `area_id` then one numeric column per feature; empty cells and `NA`
/// become missing values.
pub fn read_features(path: &Path) -> AppResult<FeatureTable> {
    let t = Table::open(path)?;
    let id = t.column("area_id")?;
    let cols: Vec<usize> = (0..t.headers.len()).filter(|&c| c != id).collect();
    let names = cols.iter().map(|&c| t.headers[c].clone()).collect();
    let mut area_ids = Vec::with_capacity(t.rows.len());
    let mut rows = Vec::with_capacity(t.rows.len());
    for (i, r) in t.rows.iter().enumerate() {
        area_ids.push(t.cell(r, id).to_owned());
        let row = cols
            .iter()
            .map(|&c| match t.cell(r, c) {
                "" | "NA" | "na" | "NaN" | "nan" => Ok(f64::NAN),
                _ => t.parse(i, r, c),
            })
            .collect::<AppResult<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(FeatureTable { names, area_ids, rows })
}

pub fn read_centroids(path: &Path) -> AppResult<Vec<Centroid>> {
    let t = Table::open(path)?;
    let (id, x, y, land) = (t.column("area_id")?, t.column("x_m")?, t.column("y_m")?, t.column("land_area_km2")?);
    t.rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(Centroid {
                area_id: t.cell(r, id).to_owned(),
                x: t.parse(i, r, x)?,
                y: t.parse(i, r, y)?,
                land_area_km2: t.parse(i, r, land)?,
            })
        })
        .collect()
}

/// Writes `header` then `rows` as comma-separated text.
pub fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> AppResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    write_tagged_rows(path, None, header, rows)
}

/// Like [`write_rows`], with a leading `# config <hash>` comment line that
/// readers skip.
pub fn write_tagged_rows<I, R>(path: &Path, config_hash: Option<&str>, header: &[&str], rows: I) -> AppResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut buf = Vec::new();
    if let Some(h) = config_hash {
        buf.extend_from_slice(format!("# config {h}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(|e| AppError::format(path, e))?;
        for r in rows {
            w.write_record(r).map_err(|e| AppError::format(path, e))?;
        }
        w.flush().map_err(io_at(path))?;
    }
    write_atomic(path, &buf)
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(io_at(&tmp))?;
    f.write_all(bytes).map_err(io_at(&tmp))?;
    f.sync_all().map_err(io_at(&tmp))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io_at(path))
}

pub fn write_nodes(path: &Path, graph: &RoadGraph) -> AppResult<()> {
    write_rows(
        path,
        &["node_id", "x_m", "y_m"],
        graph.nodes().iter().map(|n| [n.id.to_string(), n.x.to_string(), n.y.to_string()]),
    )
}

pub fn write_edges(path: &Path, graph: &RoadGraph, regions: &BTreeMap<EdgeId, String>) -> AppResult<()> {
    write_rows(
        path,
        &["edge_id", "u", "v", "length_m", "highway_class", "maxspeed_mph", "region"],
        graph.edges().iter().map(|e| {
            [
                e.id.to_string(),
                graph.node(e.tail).id.to_string(),
                graph.node(e.head).id.to_string(),
                e.length_m.to_string(),
                e.class.as_str().to_owned(),
                opt(e.posted_mph),
                regions.get(&e.id).cloned().unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_targets(path: &Path, targets: &[TargetEdge]) -> AppResult<()> {
    write_rows(
        path,
        &["edge_id", "aadt", "region"],
        targets.iter().map(|t| [t.edge.to_string(), opt(t.volume), t.region.clone().unwrap_or_default()]),
    )
}

pub fn write_features(path: &Path, table: &FeatureTable) -> AppResult<()> {
    let mut header = vec!["area_id"];
    header.extend(table.names.iter().map(String::as_str));
    write_rows(
        path,
        &header,
        table.area_ids.iter().zip(&table.rows).map(|(id, row)| {
            std::iter::once(id.clone()).chain(row.iter().map(|v| v.to_string())).collect::<Vec<_>>()
        }),
    )
}

pub fn write_centroids(path: &Path, centroids: &[Centroid]) -> AppResult<()> {
    write_rows(
        path,
        &["area_id", "x_m", "y_m", "land_area_km2"],
        centroids
            .iter()
            .map(|c| [c.area_id.clone(), c.x.to_string(), c.y.to_string(), c.land_area_km2.to_string()]),
    )
}
