use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const FAST: &str = r#"
[[models]]
kind = "gat"

[[models]]
kind = "mlp"

[train]
epochs = 30
patience = 10
seeds = [0, 1]

[discovery.train]
epochs = 30
seeds = [0, 1]
"#;

fn pathgat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathgat"))
        .args(args)
        .env_remove("PATHGAT_CONFIG")
        .output()
        .expect("binary runs")
}

fn fast_config(dir: &Path) -> PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, FAST).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn simulate_writes_six_identical_csvs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = pathgat(&["simulate", "--out", s(dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let fa = files(&a);
    let csvs: Vec<&String> = fa.iter().map(|(n, _)| n).filter(|n| n.ends_with(".csv")).collect();
    assert_eq!(csvs.len(), 6);
    assert!(csvs.iter().any(|n| n.as_str() == "Nutlin_rep2.csv"));
    let text = String::from_utf8(fa.iter().find(|(n, _)| n == "WT_rep1.csv").unwrap().1.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), "condition,replicate,time_h,TP53,MDM2,MDM4");
    assert_eq!(text.lines().count(), 10);
    assert_eq!(fa, files(&b));
}

#[test]
fn invalid_config_path_is_named() {
    let out = pathgat(&["simulate", "--config", "/no/such/experiment.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/experiment.toml"));
}

#[test]
fn config_env_var_is_the_default() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pathgat"))
        .args(["simulate", "--out", s(tmp.path())])
        .env("PATHGAT_CONFIG", "/no/such/env.toml")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/env.toml"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(pathgat(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pathgat(&["loco", "--seeds", "many"]).status.code(), Some(1));
    assert_eq!(pathgat(&["loco", "--intervene", "inhibitory:MDM2"]).status.code(), Some(1));
    assert_eq!(pathgat(&["discover", "--threshold", "-1"]).status.code(), Some(1));
}

#[test]
fn loco_tables_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let cfg = fast_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = pathgat(&["loco", "--config", s(&cfg), "--out", s(dir), "--seeds", "1"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(files(&a), files(&b));

    let table = fs::read_to_string(a.join("loco.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].contains("GAT MSE") && lines[0].contains("MLP MSE"));
    assert!(lines[2].starts_with("1 (WT)"));
    assert!(lines[4].starts_with("3 (Nutlin)"));
    assert!(lines[5].starts_with("Overall mean"));
    assert!(table.contains("Unmodified Pathway") && table.contains("Edge Intervention"));

    let csv = fs::read_to_string(a.join("loco.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[4], "0", "{line}");
        assert_eq!(cells[5], "1");
        rows += 1;
    }
    assert_eq!(rows, 3 * 4);

    let resolved = fs::read_to_string(a.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("seeds = [0]"));
    assert!(resolved.contains("inhibitory:MDM2:TP53:remove"));
    assert_eq!(fs::read_to_string(a.join("runs.jsonl")).unwrap().lines().count(), 3 * 3);
}

#[test]
fn intervene_flag_adds_a_comparison() {
    let tmp = TempDir::new().unwrap();
    let pathway = tmp.path().join("pathway.toml");
    fs::write(
        &pathway,
        fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/pathway.toml"))
            .unwrap()
            .split("# Nutlin")
            .next()
            .unwrap(),
    )
    .unwrap();
    let cfg = tmp.path().join("experiment.toml");
    fs::write(&cfg, format!("[paths]\npathway = \"pathway.toml\"\n{FAST}")).unwrap();
    let plain = tmp.path().join("plain");
    let out = pathgat(&["loco", "--config", s(&cfg), "--out", s(&plain), "--seeds", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!fs::read_to_string(plain.join("loco.txt")).unwrap().contains("Edge Intervention"));

    let edited = tmp.path().join("edited");
    let out = pathgat(&[
        "loco",
        "--config",
        s(&cfg),
        "--out",
        s(&edited),
        "--seeds",
        "1",
        "--intervene",
        "Nutlin=inhibitory:MDM2:TP53:remove",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(edited.join("loco.txt")).unwrap().contains("Edge Intervention"));
}

#[test]
fn train_saves_checkpoints_and_curves() {
    let tmp = TempDir::new().unwrap();
    let cfg = fast_config(tmp.path());
    let out_dir = tmp.path().join("t");
    let out = pathgat(&["train", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["gat_seed0.json", "gat_seed1.json", "mlp_seed1.json", "loss_gat.csv", "train_summary.txt"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
    let curve = fs::read_to_string(out_dir.join("loss_mlp.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "seed,epoch,train_loss,val_loss");
}

#[test]
fn discover_matrix_and_threshold() {
    let tmp = TempDir::new().unwrap();
    let cfg = fast_config(tmp.path());
    let d = tmp.path().join("d");
    let out = pathgat(&["discover", "--config", s(&cfg), "--out", s(&d)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let matrix = fs::read_to_string(d.join("interaction_matrix.csv")).unwrap();
    let entries: usize = matrix.lines().skip(1).map(|l| l.split(',').count() - 1).sum();
    assert_eq!(entries, 9);
    assert_eq!(fs::read_to_string(d.join("interaction_edges.csv")).unwrap().lines().count(), 10);
    assert!(fs::read_to_string(d.join("verdict.txt")).unwrap().contains("signs correct:"));

    let sat = tmp.path().join("sat");
    let out = pathgat(&["discover", "--config", s(&cfg), "--out", s(&sat), "--threshold", "1.0"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(sat.join("discovery.json")).unwrap()).unwrap();
    let edges = v["report"]["edges"].as_array().unwrap();
    assert_eq!(edges.len(), 5);
    assert!(edges.iter().all(|e| e["detected"] == false));
    assert!(v["report"]["absent"].as_array().unwrap().iter().all(|a| a["below_threshold"] == true));
}

#[test]
fn missing_data_path_fails() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("experiment.toml");
    fs::write(&cfg, format!("[paths]\ndata = \"absent.csv\"\n{FAST}")).unwrap();
    let out = pathgat(&["discover", "--config", s(&cfg), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn user_supplied_data_directory() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    assert!(pathgat(&["simulate", "--out", s(&sim)]).status.success());
    fs::remove_file(sim.join("config.resolved.toml")).unwrap();
    let cfg = tmp.path().join("experiment.toml");
    fs::write(&cfg, format!("[paths]\ndata = \"sim\"\n{FAST}")).unwrap();
    let a = tmp.path().join("a");
    let out = pathgat(&["loco", "--config", s(&cfg), "--out", s(&a), "--seeds", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let folds = fs::read_to_string(a.join("folds.toml")).unwrap();
    assert!(folds.contains("Nutlin") && folds.contains("TP53sh"));
}

#[test]
fn report_summarises_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = fast_config(tmp.path());
    let run = tmp.path().join("run");
    assert!(pathgat(&["loco", "--config", s(&cfg), "--out", s(&run)]).status.success());
    let first = pathgat(&["report", s(&run)]);
    assert!(first.status.success());
    let summary = fs::read(run.join("summary.md")).unwrap();
    assert_eq!(pathgat(&["report", s(&run)]).stdout, first.stdout);
    assert_eq!(fs::read(run.join("summary.md")).unwrap(), summary);
    let text = String::from_utf8(summary).unwrap();
    assert!(text.contains("Config hash: `"));
    assert!(text.contains("Seeds: [0, 1]"));
    assert!(text.contains("Overall mean"));

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(pathgat(&["report", s(&empty)]).status.code(), Some(2));
}

#[test]
fn divergence_exits_three() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("experiment.toml");
    fs::write(&cfg, "[train]\nepochs = 30\nseeds = [0]\nlearning_rate = 1e300\n").unwrap();
    let out = pathgat(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("t"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
