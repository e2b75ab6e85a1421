use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepdemand::artifacts::read_json;
use deepdemand::commands::REPORT_JSON;
use deepdemand::report::ReportFile;
use deepdemand::store::{ExtractManifest, MANIFEST};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deepdemand"));
    c.env("DEEPDEMAND_LOG", "warn");
    for (k, _) in std::env::vars() {
        if k.starts_with("DEEPDEMAND_") && k != "DEEPDEMAND_LOG" {
            c.env_remove(k);
        }
    }
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// A synthetic fixture in a fresh directory; returns (tempdir, fixture dir).
fn fixture(size: &str, extras: &str) -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "fx", "--size", size, "--extra-targets", extras]);
    let fx = tmp.path().join("fx");
    (tmp, fx)
}

#[test]
fn missing_graph_exits_2_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["extract-od", "--graph", "no/such/graph"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no/such/graph"), "{err}");
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["--set", "train.learning_rate=0.1", "extract-od"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn extraction_writes_one_context_per_target_and_resumes() {
    let (_tmp, fx) = fixture("5", "0");
    ok(&fx, &["--config", "config.toml", "extract-od"]);
    let m: ExtractManifest = read_json(&fx.join("contexts").join(MANIFEST)).unwrap();
    assert_eq!(m.targets, 4);
    assert_eq!((m.computed, m.skipped_existing), (4, 0));
    let files = fs::read_dir(fx.join("contexts"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "odc"))
        .count();
    assert_eq!(files, 4);

    ok(&fx, &["--config", "config.toml", "extract-od"]);
    let again: ExtractManifest = read_json(&fx.join("contexts").join(MANIFEST)).unwrap();
    assert_eq!((again.computed, again.skipped_existing), (0, 4));
    assert_eq!(again.pairs, m.pairs);

    // a different cutoff invalidates every file
    ok(&fx, &["--config", "config.toml", "extract-od", "--cutoff-s", "1800"]);
    let changed: ExtractManifest = read_json(&fx.join("contexts").join(MANIFEST)).unwrap();
    assert_eq!((changed.computed, changed.skipped_existing), (4, 0));
}

#[test]
fn worker_count_does_not_change_context_bytes() {
    let (tmp, fx) = fixture("8", "20");
    let read_all = |dir: &Path| {
        let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "odc"))
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
            .collect();
        v.sort();
        v
    };
    let one = tmp.path().join("w1");
    let eight = tmp.path().join("w8");
    ok(&fx, &["--config", "config.toml", "--workers", "1", "extract-od", "--out", one.to_str().unwrap()]);
    ok(&fx, &["--config", "config.toml", "--workers", "8", "extract-od", "--out", eight.to_str().unwrap()]);
    let (a, b) = (read_all(&one), read_all(&eight));
    assert_eq!(a.len(), 7 + 20);
    assert_eq!(a, b);
    assert_eq!(fs::read(one.join("bank.json")).unwrap(), fs::read(eight.join("bank.json")).unwrap());
}

#[test]
fn spatial_evaluation_has_one_fold_per_region() {
    let (_tmp, fx) = fixture("7", "25");
    ok(&fx, &["--config", "config.toml", "extract-od"]);
    ok(
        &fx,
        &[
            "--config",
            "config.toml",
            "--set",
            "train.max_iters=500",
            "--set",
            "train.eval_every=100",
            "--set",
            "evaluate.models=[\"constant\", \"deepdemand\"]",
            "evaluate",
            "--protocol",
            "spatial",
        ],
    );
    let r: ReportFile = read_json(&fx.join("report").join(REPORT_JSON)).unwrap();
    assert_eq!(r.protocol, "spatial");
    let targets = fs::read_to_string(fx.join("targets.csv")).unwrap();
    let mut regions: Vec<&str> = targets.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    regions.sort_unstable();
    regions.dedup();
    assert_eq!(r.folds, regions.len());
    for m in &r.models {
        let mut labels: Vec<&str> = m.folds.iter().map(|f| f.label.as_str()).collect();
        labels.sort_unstable();
        assert_eq!(labels, regions);
    }
    let ckpts = fs::read_dir(fx.join("report").join("checkpoints")).unwrap().count();
    assert_eq!(ckpts, regions.len());
    assert!(fx.join("report").join("residuals_constant.csv").exists());
    let table = fs::read_to_string(fx.join("report").join("report.txt")).unwrap();
    assert!(table.contains("Random forest"));
}

fn predictions(path: &Path) -> Vec<(String, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let mut it = l.split(',');
            (it.next().unwrap().to_owned(), it.next().unwrap().parse().unwrap())
        })
        .collect()
}

#[test]
fn scenario_prediction_changes_only_through_features() {
    let (_tmp, fx) = fixture("7", "15");
    let cfg = ["--config", "config.toml", "--set", "train.max_iters=300", "--set", "train.eval_every=100"];
    ok(&fx, &[&cfg[..], &["extract-od"]].concat());
    ok(&fx, &[&cfg[..], &["train"]].concat());

    ok(&fx, &[&cfg[..], &["predict", "--out", "base"]].concat());
    ok(&fx, &[&cfg[..], &["predict", "--features", "features.csv", "--out", "same"]].concat());
    let base = predictions(&fx.join("base/predictions.csv"));
    assert_eq!(base, predictions(&fx.join("same/predictions.csv")));

    // double every population count
    let text = fs::read_to_string(fx.join("features.csv")).unwrap();
    let mut lines = text.lines();
    let mut out = vec![lines.next().unwrap().to_owned()];
    for l in lines {
        let mut cells: Vec<String> = l.split(',').map(str::to_owned).collect();
        cells[1] = (cells[1].parse::<f64>().unwrap() * 2.0).to_string();
        out.push(cells.join(","));
    }
    fs::write(fx.join("scenario.csv"), out.join("\n") + "\n").unwrap();
    ok(&fx, &[&cfg[..], &["predict", "--features", "scenario.csv", "--out", "scenario"]].concat());
    let alt = predictions(&fx.join("scenario/predictions.csv"));
    assert_eq!(alt.len(), base.len());
    assert!(alt.iter().zip(&base).all(|(a, b)| a.0 == b.0));
    assert!(alt.iter().zip(&base).any(|(a, b)| a.1 != b.1));
}

#[test]
fn checkpoint_from_another_bank_is_refused() {
    let (tmp, fx) = fixture("6", "10");
    let cfg = ["--config", "config.toml", "--set", "train.max_iters=200", "--set", "train.eval_every=100"];
    ok(&fx, &[&cfg[..], &["extract-od"]].concat());
    ok(&fx, &[&cfg[..], &["train"]].concat());

    ok(tmp.path(), &["--seed", "3", "synth", "--out", "other", "--size", "6", "--extra-targets", "10"]);
    let other = tmp.path().join("other");
    ok(&other, &[&cfg[..], &["extract-od"]].concat());
    let ckpt = fx.join("checkpoint.json");
    let out = run(&other, &[&cfg[..], &["predict", "--checkpoint", ckpt.to_str().unwrap()]].concat());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("refusing to mix"), "{err}");
}

#[test]
fn potentials_and_deterrence_exports() {
    let (_tmp, fx) = fixture("7", "15");
    let cfg = ["--config", "config.toml", "--set", "train.max_iters=300", "--set", "train.eval_every=100"];
    ok(&fx, &[&cfg[..], &["extract-od"]].concat());
    ok(&fx, &[&cfg[..], &["train"]].concat());
    ok(&fx, &[&cfg[..], &["potentials", "--universe", "all"]].concat());
    ok(&fx, &[&cfg[..], &["deterrence"]].concat());
    let pot = fs::read_to_string(fx.join("report/potentials.csv")).unwrap();
    let mut lines = pot.lines();
    assert!(lines.next().unwrap().starts_with("# config "));
    assert_eq!(
        lines.next().unwrap(),
        "area_id,o_potential,d_potential,o_density,d_density,quintile_o,quintile_d,n_pairs_o,n_pairs_d"
    );
    let curve = fs::read_to_string(fx.join("report/deterrence.csv")).unwrap();
    let rows: Vec<&str> = curve.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "t_min,p_od");
    assert_eq!(rows.len(), 1 + 241);
    assert!(fx.join("report/run_deterrence.json").exists());
    assert!(fx.join("report/run_deterrence.toml").exists());
}
