use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn dualnet(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualnet"))
        .args(args)
        .env("DUALNET_OUT_ROOT", out)
        .output()
        .expect("spawn dualnet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dir(o: &Output) -> PathBuf {
    let line = stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix("run_dir=").map(str::to_string))
        .expect("run_dir line");
    PathBuf::from(line)
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Encode the 120-row blob fixture; returns the encoded file.
fn encoded_blobs(out: &Path, task: &str) -> PathBuf {
    let f = fixtures();
    let o = dualnet(
        out,
        &[
            "preprocess",
            "--data",
            path(&f.join("blobs.csv")),
            "--schema",
            path(&f.join("blobs.schema.json")),
            "--task",
            task,
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    run_dir(&o).join("encoded.bin")
}

#[test]
fn preprocess_prints_width_and_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixtures();
    let o = dualnet(
        tmp.path(),
        &["preprocess", "--data", path(&f.join("tiny.csv")), "--schema", path(&f.join("tiny.schema.json"))],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l == "F=7"), "{}", stdout(&o));
    let dir = run_dir(&o);
    assert!(dir.starts_with(tmp.path()));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["command"], "preprocess");
    assert_eq!(manifest["datasets"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(dir.join("encoded.bin").exists());
    assert!(dir.join("encoded.bin.prep.json").exists());
}

#[test]
fn bad_schema_path_fails_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dualnet(
        tmp.path(),
        &["preprocess", "--data", path(&fixtures().join("tiny.csv")), "--schema", "/no/such/schema.json"],
    );
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: io: "), "{err}");
}

#[test]
fn train_is_reproducible_and_checks_width_first() {
    let tmp = tempfile::tempdir().unwrap();
    let enc = encoded_blobs(tmp.path(), "binary");
    let tc = write(tmp.path(), "train.json", r#"{"epochs": 3, "batch_size": 32}"#);
    let train = |seed: &str| {
        let o = dualnet(
            tmp.path(),
            &["train", "--data", path(&enc), "--train-config", path(&tc), "--seed", seed],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("final_accuracy="));
        run_dir(&o)
    };
    let a = train("7");
    let b = train("7");
    assert!(a.join("model.ckpt").exists());
    let history = |d: &Path| std::fs::read(d.join("history.json")).unwrap();
    assert_eq!(history(&a), history(&b));
    assert_eq!(std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());

    let arch = write(
        tmp.path(),
        "arch.json",
        &dualnet::net::ArchitectureConfig::dualnet_tiny(5, 2).to_json().unwrap(),
    );
    let o = dualnet(tmp.path(), &["train", "--data", path(&enc), "--arch-config", path(&arch)]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: config: "), "{}", stderr(&o));
    assert!(!stdout(&o).contains("epoch="));
}

#[test]
fn crossval_ten_folds_and_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixtures();
    let tc = write(tmp.path(), "train.json", r#"{"epochs": 1, "batch_size": 32}"#);
    let o = dualnet(
        tmp.path(),
        &[
            "crossval",
            "--data",
            path(&f.join("blobs.csv")),
            "--schema",
            path(&f.join("blobs.schema.json")),
            "--train-config",
            path(&tc),
            "--task",
            "multiclass",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("fold=")).count(), 10);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir(&o).join("crossval.json")).unwrap()).unwrap();
    let folds = report["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 10);
    let accs: Vec<f64> = folds.iter().map(|f| f["metrics"]["acc"].as_f64().unwrap()).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((report["mean"]["acc"].as_f64().unwrap() - mean).abs() < 1e-12);
}

#[test]
fn crossval_names_sparse_class() {
    let tmp = tempfile::tempdir().unwrap();
    let f = fixtures();
    let o = dualnet(
        tmp.path(),
        &[
            "crossval",
            "--data",
            path(&f.join("tiny.csv")),
            "--schema",
            path(&f.join("tiny.schema.json")),
            "--k",
            "2",
        ],
    );
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.starts_with("error: sparse_class: "), "{err}");
    assert!(err.contains("normal"), "{err}");
}

#[test]
fn explain_ranks_and_rejects_attention_free_models() {
    let tmp = tempfile::tempdir().unwrap();
    let enc = encoded_blobs(tmp.path(), "binary");
    let tc = write(tmp.path(), "train.json", r#"{"epochs": 1, "batch_size": 32}"#);
    let o = dualnet(tmp.path(), &["train", "--data", path(&enc), "--train-config", path(&tc)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = run_dir(&o).join("model.ckpt");

    let o = dualnet(tmp.path(), &["explain", "--data", path(&enc), "--checkpoint", path(&ckpt), "--topk", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = run_dir(&o);
    let csv = std::fs::read_to_string(dir.join("top_encoded.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
    assert_eq!(csv.lines().next().unwrap(), "rank,feature,score");
    let grouped = std::fs::read_to_string(dir.join("top_features.csv")).unwrap();
    assert_eq!(grouped.lines().count(), 1 + 6);

    let arch = write(
        tmp.path(),
        "dense.json",
        &dualnet::net::ArchitectureConfig::dense(9, 4, 1, 1, 2).to_json().unwrap(),
    );
    let o = dualnet(
        tmp.path(),
        &["train", "--data", path(&enc), "--arch-config", path(&arch), "--train-config", path(&tc)],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let plain = run_dir(&o).join("model.ckpt");
    let o = dualnet(tmp.path(), &["explain", "--data", path(&enc), "--checkpoint", path(&plain)]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: attribution: "), "{}", stderr(&o));
    assert!(stderr(&o).contains("no self-attention"));
}

#[test]
fn evaluate_writes_metric_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let enc = encoded_blobs(tmp.path(), "multiclass");
    let tc = write(tmp.path(), "train.json", r#"{"epochs": 1, "batch_size": 32, "task": "multiclass"}"#);
    let o = dualnet(tmp.path(), &["train", "--data", path(&enc), "--train-config", path(&tc)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = run_dir(&o).join("model.ckpt");
    let o = dualnet(tmp.path(), &["evaluate", "--data", path(&enc), "--checkpoint", path(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = run_dir(&o);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["task"], "multiclass");
    assert_eq!(m["per_class"].as_array().unwrap().len(), 3);
    let c = &m["counts"];
    let total: u64 = ["tp", "fn", "tn", "fp"].iter().map(|k| c[k].as_u64().unwrap()).sum();
    assert_eq!(total, 120);
}

fn sweep_rows(tmp: &Path, kind: &str, grid: &str) -> Vec<Vec<String>> {
    let tc = write(tmp, "sweep.json", r#"{"epochs": 1, "batch_size": 32}"#);
    let o = dualnet(
        tmp,
        &[
            "sweep",
            "--kind",
            kind,
            "--grid",
            grid,
            "--train-config",
            path(&tc),
            "--synthetic-rows",
            "80",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(run_dir(&o).join(format!("sweep_{kind}.csv"))).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "config_id,x,acc,dr,far,params,layers,seed,wall_secs");
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn sweeps_emit_expected_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let growth = sweep_rows(tmp.path(), "growth", "1..6");
    assert_eq!(growth.len(), 6);
    let params: Vec<usize> = growth.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(params.windows(2).all(|w| w[0] < w[1]), "{params:?}");

    let conn = sweep_rows(tmp.path(), "connectivity", "3");
    let ids: Vec<&str> = conn.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ids, ["concat-3", "add-3"]);
    assert_eq!(conn[0][6], conn[1][6]);

    let o = dualnet(tmp.path(), &["sweep", "--kind", "growth", "--grid", "0,2"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: config: "));
}
