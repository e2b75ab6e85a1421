//! Evaluation reports and interpretability exports.

use std::fmt::Write as _;
use std::path::Path;

use deepdemand_core::eval::{EvalReport, Metrics};
use deepdemand_core::interpret::{CurveBand, DeterrenceCurve, PotentialMap};
use serde::{Deserialize, Serialize};

use crate::error::AppResult;
use crate::tables::{opt, write_tagged_rows};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedModel {
    pub model: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub config_hash: String,
    pub context_hash: String,
    pub bank_checksum: String,
    pub protocol: String,
    pub folds: usize,
    pub seed: u64,
    /// How the linear baselines build their inputs.
    pub baseline_design: String,
    pub models: Vec<EvalReport>,
    pub failed_models: Vec<FailedModel>,
}

pub const BASELINE_DESIGN: &str =
    "mean origin features, mean destination features, screened pair count, mean pair travel time";

fn label(model: &str) -> &str {
    match model {
        "constant" => "Constant mean",
        "ols" => "Linear regression",
        "ridge" => "Ridge regression",
        "gravity" => "Gravity",
        "deepdemand" => "DeepDemand",
        other => other,
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (m, (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt())
}

fn cells(metrics: &[&Metrics]) -> [String; 3] {
    let (g, gs) = mean_std(&metrics.iter().map(|m| m.mgeh).collect::<Vec<_>>());
    let (a, as_) = mean_std(&metrics.iter().map(|m| m.mae).collect::<Vec<_>>());
    let r2: Vec<f64> = metrics.iter().filter_map(|m| m.r2).collect();
    let r = if r2.is_empty() {
        "n/a".to_owned()
    } else {
        let (r, rs) = mean_std(&r2);
        format!("{r:.3} ({rs:.3})")
    };
    [format!("{g:.2} ({gs:.2})"), format!("{a:.0} ({as_:.0})"), r]
}

/// Aligned text table: train and test metrics as mean (std) over folds.
pub fn render_table(report: &ReportFile) -> String {
    let header = ["Model", "Train MGEH", "Train MAE", "Train R²", "Test MGEH", "Test MAE", "Test R²"];
    let mut rows: Vec<[String; 7]> = Vec::new();
    let order = ["constant", "ols", "ridge", "random_forest", "gravity", "deepdemand"];
    let mut names: Vec<&str> = order.to_vec();
    for m in &report.models {
        if !names.contains(&m.model.as_str()) {
            names.push(&m.model);
        }
    }
    for name in names {
        if name == "random_forest" {
            let dash = "-".to_owned();
            rows.push([
                "Random forest (not implemented)".into(),
                dash.clone(),
                dash.clone(),
                dash.clone(),
                dash.clone(),
                dash.clone(),
                dash,
            ]);
            continue;
        }
        if let Some(m) = report.models.iter().find(|m| m.model == name) {
            let train: Vec<&Metrics> = m.folds.iter().map(|f| &f.train).collect();
            let test: Vec<&Metrics> = m.folds.iter().map(|f| &f.test).collect();
            let [a, b, c] = cells(&train);
            let [d, e, f] = cells(&test);
            rows.push([label(name).into(), a, b, c, d, e, f]);
        } else if let Some(f) = report.failed_models.iter().find(|f| f.model == name) {
            let mut r: [String; 7] = Default::default();
            r[0] = label(name).into();
            r[1] = format!("failed: {}", f.error);
            rows.push(r);
        }
    }
    let mut width = header.map(|h| h.chars().count());
    for r in &rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} cross-validation, {} folds, seed {} (config {})",
        report.protocol, report.folds, report.seed, report.config_hash
    );
    let line = |out: &mut String, r: &[String]| {
        let padded: Vec<String> = r
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i == 0 { format!("{c}{}", " ".repeat(pad)) } else { format!("{}{c}", " ".repeat(pad)) }
            })
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&mut out, &header.map(String::from));
    let _ = writeln!(out, "{}", "-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1)));
    for r in &rows {
        line(&mut out, r);
    }
    out
}

pub fn write_residuals(path: &Path, config_hash: &str, report: &EvalReport) -> AppResult<()> {
    write_tagged_rows(
        path,
        Some(config_hash),
        &["edge_id", "fold", "y", "yhat", "geh"],
        report
            .records
            .iter()
            .map(|r| [r.edge.to_string(), r.fold.to_string(), r.y.to_string(), r.y_hat.to_string(), r.geh.to_string()]),
    )
}

pub fn write_curve(path: &Path, config_hash: &str, curve: &DeterrenceCurve) -> AppResult<()> {
    write_tagged_rows(
        path,
        Some(config_hash),
        &["t_min", "p_od"],
        curve.t_min.iter().zip(&curve.p_od).map(|(t, p)| [t.to_string(), p.to_string()]),
    )
}

/// Pointwise mean as `p_od`, the band, then one column per fold.
pub fn write_curve_band(path: &Path, config_hash: &str, band: &CurveBand) -> AppResult<()> {
    let mut header = vec!["t_min".to_owned(), "p_od".into(), "p_min".into(), "p_max".into()];
    header.extend((0..band.folds.len()).map(|f| format!("fold_{f}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    write_tagged_rows(
        path,
        Some(config_hash),
        &header_ref,
        (0..band.t_min.len()).map(|i| {
            let mut row = vec![
                band.t_min[i].to_string(),
                band.mean[i].to_string(),
                band.min[i].to_string(),
                band.max[i].to_string(),
            ];
            row.extend(band.folds.iter().map(|c| c.p_od[i].to_string()));
            row
        }),
    )
}

pub fn write_potentials(path: &Path, config_hash: &str, map: &PotentialMap) -> AppResult<()> {
    let q = |v: Option<u8>| v.map(|x| x.to_string()).unwrap_or_default();
    write_tagged_rows(
        path,
        Some(config_hash),
        &[
            "area_id",
            "o_potential",
            "d_potential",
            "o_density",
            "d_density",
            "quintile_o",
            "quintile_d",
            "n_pairs_o",
            "n_pairs_d",
        ],
        map.areas.iter().map(|a| {
            [
                a.area_id.clone(),
                opt(a.o_potential),
                opt(a.d_potential),
                opt(a.o_density),
                opt(a.d_density),
                q(a.quintile_o),
                q(a.quintile_d),
                a.n_pairs_o.to_string(),
                a.n_pairs_d.to_string(),
            ]
        }),
    )
}
