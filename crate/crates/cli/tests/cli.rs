use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn geounet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geounet")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn helix() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/helix100.pdb")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn chains_writes_table_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let o = geounet(&["chains", "--seed", "7", "--out", "r/"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("r/table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("model,pool,layers,mean,std"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // 2 layer families x 3 pool settings x 5 depths
    assert_eq!(rows.len(), 30);
    for r in &rows {
        assert_eq!(r.len(), 5);
        assert!(["invariant", "equivariant"].contains(&r[0]));
        assert!(["none", "3", "4"].contains(&r[1]));
        let mean: f64 = r[3].parse().unwrap();
        assert!((0.0..=100.0).contains(&mean));
    }
    let config: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r/config.json")).unwrap()).unwrap();
    assert_eq!(config["base_seed"], 7);
    assert_eq!(config["k"], 4);
    assert_eq!(String::from_utf8_lossy(&o.stdout), table);
}

#[test]
fn coarsen_missing_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = geounet(&["coarsen", "missing.pdb"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("file not found: missing.pdb"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = geounet(&["bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(geounet(&[], dir.path()).status.code(), Some(2));
    assert_eq!(geounet(&["expressivity", "--trials", "many"], dir.path()).status.code(), Some(2));
    assert_eq!(geounet(&["expressivity", "--pool", "dense"], dir.path()).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.json"), r#"{"trials": 5, "colour": 1}"#).unwrap();
    let o = geounet(&["expressivity", "--config", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
    assert_eq!(geounet(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn expressivity_reports_no_sparse_violations() {
    let dir = tempfile::tempdir().unwrap();
    let o = geounet(&["expressivity", "--trials", "1000"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let e = &v["empirical"];
    assert_eq!(e["pool_kind"], "sparse");
    assert_eq!(e["violations"].as_array().unwrap().len(), 0);
    let total = e["checked"].as_u64().unwrap() + e["vacuous"].as_u64().unwrap() + e["skipped"].as_u64().unwrap();
    assert_eq!(total, 1000);
    assert!(e["checked"].as_u64().unwrap() > 500, "census mostly vacuous: {e}");
    assert_eq!(v["increase"]["original_iteration"], 3);
    assert_eq!(v["passed"], true);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"trials": 20, "seed": 3}"#).unwrap();
    let o = geounet(&["expressivity", "--config", "c.json", "--seed", "5", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let echo: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/config.json")).unwrap()).unwrap();
    assert_eq!(echo["trials"], 20);
    assert_eq!(echo["seed"], 5);
    assert!(dir.path().join("o/expressivity.json").exists());
}

fn points(v: &Value) -> Vec<Vec<f64>> {
    v.as_array().unwrap().iter().map(|p| p.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()).collect()
}

#[test]
fn coarsen_fixture_exports_hierarchy() {
    let dir = tempfile::tempdir().unwrap();
    let file = helix();
    let o = geounet(&["coarsen", file.to_str().unwrap(), "--out", "h"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let h: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(h["input"]["n"], 100);
    let sizes: Vec<u64> = h["levels"].as_array().unwrap().iter().map(|l| l["n"].as_u64().unwrap()).collect();
    // ceil(0.6 n) per level
    assert_eq!(sizes, vec![60, 36, 22]);
    let mut prev = points(&h["input"]["coords"]);
    let mut prev_n = 100;
    for level in h["levels"].as_array().unwrap() {
        let coords = points(&level["coords"]);
        let centers: Vec<usize> = level["centers"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap() as usize).collect();
        for (j, &c) in centers.iter().enumerate() {
            assert_eq!(coords[j], prev[c]);
        }
        // every previous node sits in exactly one cluster
        let mut seen = vec![0; prev_n];
        for t in level["C"].as_array().unwrap() {
            assert_eq!(t[2], 1.0);
            seen[t[1].as_u64().unwrap() as usize] += 1;
        }
        assert!(seen.iter().all(|&s| s == 1));
        prev_n = coords.len();
        prev = coords;
    }
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("h/hierarchy.json")).unwrap()).unwrap();
    assert_eq!(on_disk, h);
}

#[test]
fn equivariance_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = geounet(&["equivariance", "--motions", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let checks = v["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["passed"] == true && c["max_error"].as_f64().unwrap() <= c["tolerance"].as_f64().unwrap()));
}

#[test]
fn train_synthetic_writes_csv_and_enforces_margin() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("s.json"),
        r#"{"classes": 2, "train_per_class": 6, "test_per_class": 4, "seeds": 1, "epochs": 2}"#,
    )
    .unwrap();
    let o = geounet(&["train-synthetic", "--config", "s.json", "--out", "s"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("s/synthetic.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "seed,model,parameters,train_accuracy,test_accuracy");
    assert_eq!(lines.len(), 3);
    let o = geounet(&["train-synthetic", "--config", "s.json", "--min-margin", "1000"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("margin"));
}
