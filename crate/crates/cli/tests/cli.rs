use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcc::dc2::SignatureFile;
use dcc_cli::bench::mean_std;
use dcc_cli::record::RunRecord;
use serde_json::Value;

fn dcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dcc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn blobs(dir: &Path, n: usize, k: usize) -> PathBuf {
    let path = dir.join(format!("blobs_{n}_{k}.csv"));
    ok(&[
        "generate", "blobs", "--n", &n.to_string(), "--d", "3", "--k", &k.to_string(), "--seed", "3", "--out", s(&path),
    ]);
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn partition_writes_signature_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(dir.path(), 2000, 3);
    let mut mse = Vec::new();
    for (parts, scheme) in [("4", "projection"), ("4", "sampling"), ("1", "projection")] {
        let out = dir.path().join(format!("s_{parts}_{scheme}.json"));
        let stdout = ok(&[
            "partition", "--input", s(&data), "--label-column", "label", "--parts", parts, "--target-sigs", "100",
            "--scheme", scheme, "--seed", "42", "--out", s(&out),
        ]);
        assert!(stdout.contains("m = "), "{stdout}");
        let line = stdout.lines().find(|l| l.starts_with("mse = ")).unwrap();
        mse.push(line[6..].parse::<f64>().unwrap());
        let file = SignatureFile::load(&out).unwrap();
        assert_eq!(file.n_p, parts.parse::<usize>().unwrap());
        assert_eq!(file.seed, 42);
        let set = file.to_signature_set().unwrap();
        assert_eq!(set.point_to_signature.len(), 2000);
        if parts == "1" {
            assert!(set.owner_partition.iter().all(|&p| p == 0));
        }
    }
    assert!(mse.iter().all(|&m| m > 0.0));
}

#[test]
fn cluster_rpfcluster_plus_with_paper_settings() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(dir.path(), 3000, 3);
    let out = dir.path().join("r.json");
    ok(&[
        "cluster", "--input", s(&data), "--label-column", "label", "--method", "rpfcluster+", "--k", "3", "--trees",
        "800", "--node-size", "30", "--beta", "20", "--parts", "2", "--seed", "7", "--target-sigs", "300", "--out",
        s(&out),
    ]);
    let v = read_json(&out);
    assert_eq!(v["method"], "rpfcluster_plus");
    assert_eq!(v["seed"], 7);
    assert_eq!(v["config"]["trees"], 800);
    assert_eq!(v["config"]["forest_n_s"], 30);
    assert_eq!(v["config"]["n_p"], 2);
    assert_eq!((v["n"].as_u64(), v["d"].as_u64(), v["k"].as_u64()), (Some(3000), Some(3), Some(3)));
    assert!(v["m"].as_u64().unwrap() > 3);
    assert!(v["accuracy"].as_f64().unwrap() > 0.9);
    assert!(v["mse"].as_f64().unwrap() > 0.0);
    let times = v["stage_times_ms"].as_object().unwrap();
    for stage in ["partition", "compress", "kernel", "spectral", "propagate", "total"] {
        assert!(times[stage].as_f64().unwrap() >= 0.0, "{stage}");
    }
    // The echoed config reproduces the run.
    let record: RunRecord = serde_json::from_value(v).unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, toml::to_string(&record.config).unwrap()).unwrap();
    let again = dir.path().join("again.json");
    ok(&["cluster", "--input", s(&data), "--label-column", "label", "--config", s(&cfg_path), "--out", s(&again)]);
    assert_eq!(read_json(&again)["accuracy"], read_json(&out)["accuracy"]);
}

#[test]
fn kmeans_baseline_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(dir.path(), 500, 3);
    let labels = dir.path().join("labels.csv");
    let stdout = ok(&[
        "cluster", "--input", s(&data), "--label-column", "label", "--method", "kmeans", "--k", "3", "--labels-out",
        s(&labels),
    ]);
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["method"], "kmeans");
    assert!(v["stage_times_ms"]["kmeans"].as_f64().is_some());
    let report: Value = serde_json::from_str(&ok(&[
        "eval", "--input", s(&data), "--label-column", "label", "--predicted", s(&labels),
    ]))
    .unwrap();
    assert_eq!(report["accuracy"], v["accuracy"]);
    assert_eq!(report["method"], "exhaustive");
}

#[test]
fn sequential_labels_match_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(dir.path(), 1500, 2);
    let mut files = Vec::new();
    for mode in ["parallel", "sequential"] {
        let labels = dir.path().join(format!("{mode}.csv"));
        ok(&[
            "cluster", "--input", s(&data), "--label-column", "label", "--method", "rpfcluster+", "--k", "2",
            "--trees", "100", "--target-sigs", "200", "--parts", "3", "--execution", mode, "--seed", "5",
            "--labels-out", s(&labels),
        ]);
        files.push(std::fs::read(&labels).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn clusters_precomputed_signatures_with_distortion() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(dir.path(), 800, 2);
    let sigs = dir.path().join("s.json");
    ok(&["partition", "--input", s(&data), "--label-column", "label", "--target-sigs", "100", "--out", s(&sigs)]);
    let v: Value = serde_json::from_str(&ok(&[
        "cluster", "--input", s(&data), "--label-column", "label", "--method", "rasp", "--sigma", "2",
        "--signatures", s(&sigs), "--distortion",
    ]))
    .unwrap();
    assert!(v["laplacian_distortion"].as_f64().unwrap() > 0.0);
    assert!(v["accuracy"].as_f64().unwrap() > 0.9);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(dir.path(), 100, 2);
    let code = |args: &[&str]| dcc(args).status.code();
    assert_eq!(code(&["cluster", "--input", s(&data), "--label-column", "label", "--method", "dbscan"]), Some(1));
    assert_eq!(code(&["cluster", "--input", s(&data), "--method", "kmeans"]), Some(1), "k missing");
    assert_eq!(code(&["cluster", "--input", s(&data), "--k", "0", "--method", "kmeans"]), Some(1));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n3,x\n").unwrap();
    assert_eq!(code(&["cluster", "--input", s(&bad), "--k", "2", "--method", "kmeans"]), Some(1));
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&["cluster", "--input", s(&missing), "--k", "2"]), Some(2));
    assert_eq!(code(&["--help"]), Some(0));
}

fn write_spec(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("bench.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn bench_rejects_empty_methods_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "methods = []\n[[datasets]]\nname = \"a\"\nsource = { kind = \"blobs\", n = 50, d = 2, k = 2 }\n",
    );
    let out_dir = dir.path().join("out");
    let out = dcc(&["bench", s(&spec), "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.exists());
}

#[test]
fn bench_mse_ratio_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        r#"
        seed_count = 3
        [[datasets]]
        name = "blobs"
        source = { kind = "blobs", n = 3000, d = 5, k = 3 }
        [[methods]]
        method = "rpfcluster_plus"
        trees = 50
        target_signatures = 100
        [sweeps]
        n_p = [2, 4, 8]
        scheme = ["projection", "sampling"]
        "#,
    );
    let out_dir = dir.path().join("out");
    ok(&["bench", s(&spec), "--out-dir", s(&out_dir), "--parallel-runs"]);
    let mut summary = csv::Reader::from_path(out_dir.join("summary.csv")).unwrap();
    let headers = summary.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = summary.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    for row in &rows {
        let ratio = &row[col("mse_ratio_mean")];
        if &row[col("scheme")] == "sampling" {
            assert!(ratio.parse::<f64>().unwrap() > 0.0);
        } else {
            assert!(ratio.is_empty());
        }
    }
}

#[test]
fn bench_summary_recomputes_from_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        r#"
        seeds = [1, 2, 3]
        [[datasets]]
        name = "rings"
        source = { kind = "rings", n = 600, radii = [1.0, 4.0] }
        [[methods]]
        method = "rasp"
        target_signatures = 100
        [[methods]]
        method = "kmeans"
        [[methods]]
        method = "rasp"
        target_signatures = 1
        [sweeps]
        execution = ["parallel", "sequential"]
        sigma = [0.3, 1.0]
        "#,
    );
    let out_dir = dir.path().join("out");
    let stdout = ok(&["bench", s(&spec), "--out-dir", s(&out_dir)]);
    assert!(stdout.contains("18 runs (6 failed)"), "{stdout}");

    // Group the per-run files ourselves.
    let mut groups: BTreeMap<(usize, String, usize, String, String), Vec<RunRecord>> = BTreeMap::new();
    let mut files = 0;
    for entry in std::fs::read_dir(out_dir.join("runs")).unwrap() {
        let rec = RunRecord::load(&entry.unwrap().path()).unwrap();
        files += 1;
        let key = (
            rec.method_index.unwrap(),
            rec.method.to_string(),
            rec.config.n_p,
            serde_json::to_value(rec.config.scheme).unwrap().as_str().unwrap().to_string(),
            serde_json::to_value(rec.config.execution).unwrap().as_str().unwrap().to_string(),
        );
        groups.entry(key).or_default().push(rec);
    }
    assert_eq!(files, 18);
    let failed: Vec<&RunRecord> = groups.values().flatten().filter(|r| r.error.is_some()).collect();
    assert_eq!(failed.len(), 6);
    assert!(failed.iter().all(|r| r.error.as_ref().unwrap().contains("exceeds")));
    for rec in groups.values().flatten().filter(|r| r.error.is_none() && r.method.to_string() == "rasp") {
        assert!([0.3, 1.0].contains(&rec.bandwidth.unwrap()), "chosen bandwidth recorded");
    }

    let mut summary = csv::Reader::from_path(out_dir.join("summary.csv")).unwrap();
    let headers = summary.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let mut seen = 0;
    for row in summary.records().map(Result::unwrap) {
        let key = (
            row[col("method_index")].parse().unwrap(),
            row[col("method")].to_string(),
            row[col("n_p")].parse().unwrap(),
            row[col("scheme")].to_string(),
            row[col("execution")].to_string(),
        );
        let members = &groups[&key];
        let good: Vec<&RunRecord> = members.iter().filter(|r| r.error.is_none()).collect();
        assert_eq!(row[col("runs")].parse::<usize>().unwrap(), members.len());
        assert_eq!(row[col("failed")].parse::<usize>().unwrap(), members.len() - good.len());
        let check = |name: &str, values: Vec<f64>| {
            let (mean, std) = mean_std(&values);
            let cell = |c: &str| row[col(c)].parse::<f64>().ok();
            let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * a.abs().max(1.0),
                (a, b) => a == b,
            };
            assert!(close(cell(&format!("{name}_mean")), mean), "{name} mean in {key:?}");
            assert!(close(cell(&format!("{name}_std")), std), "{name} std in {key:?}");
        };
        check("accuracy", good.iter().filter_map(|r| r.accuracy).collect());
        check("total_ms", good.iter().filter_map(|r| r.total_ms()).collect());
        seen += 1;
    }
    assert_eq!(seen, groups.len());
    assert_eq!(seen, 6);
    let runs_csv = std::fs::read_to_string(out_dir.join("runs.csv")).unwrap();
    assert_eq!(runs_csv.lines().count(), 19);
}
