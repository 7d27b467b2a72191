use std::path::Path;
use std::process::{Command, Output};

use graphtune_core::graph::io::{load_json, save_json, write_content_cites};
use graphtune_core::solver::{read_report, RESULTS_FILE};
use graphtune_core::synthetic::sbm_node_dataset;

fn graphtune(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_graphtune"));
    cmd.args(args).env_remove("GRAPHTUNE_SEED");
    if let Some(s) = seed {
        cmd.env("GRAPHTUNE_SEED", s);
    }
    cmd.output().expect("spawn graphtune")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"{
  "task": "node",
  "models": [
    {"family": "gcn", "space": [
      {"name": "hidden_dim", "kind": "integer", "low": 8, "high": 32, "scale": "log"},
      {"name": "lr", "kind": "numerical", "low": 0.001, "high": 0.05, "scale": "log"}
    ]},
    {"family": "sage", "space": []}
  ],
  "hpo": {"method": "tpe", "n_trials": 2, "n_startup": 1},
  "ensemble": "voting",
  "split": {"per_class": 10, "n_val": 30, "n_test": 60},
  "train": {"max_epochs": 30, "patience": 10},
  "seed": 3
}"#;

fn fixture(dir: &Path) -> (String, String) {
    let ds = sbm_node_dataset(120, 3, 0.15, 0.01, 8, 0.8, 1).unwrap();
    let data = dir.join("sbm.json");
    save_json(&ds, &data).unwrap();
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    (cfg.display().to_string(), data.display().to_string())
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = graphtune(&["run", "--bogus"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(graphtune(&[], None).status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let o = graphtune(&["--help"], None);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("selfcheck"));
}

#[test]
fn missing_data_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = fixture(dir.path());
    let missing = dir.path().join("nope.json").display().to_string();
    let out = dir.path().join("out").display().to_string();
    let o = graphtune(&["run", "--config", &cfg, "--data", &missing, "--out", &out], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_is_a_data_error_and_bad_config_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = fixture(dir.path());
    let out = dir.path().join("out").display().to_string();
    let missing = dir.path().join("none.json").display().to_string();
    assert_eq!(graphtune(&["run", "--config", &missing, "--data", &data, "--out", &out], None).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"task": "node", "models": []}"#).unwrap();
    let bad = bad.display().to_string();
    assert_eq!(graphtune(&["run", "--config", &bad, "--data", &data, "--out", &out], None).status.code(), Some(1));
}

#[test]
fn run_then_report_renders_persisted_leaderboard() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = fixture(dir.path());
    let out_dir = dir.path().join("out");
    let out = out_dir.display().to_string();
    let run = graphtune(&["run", "--config", &cfg, "--data", &data, "--format", "json", "--out", &out], None);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out_dir.join(RESULTS_FILE).exists());
    assert!(out_dir.join("gcn.params.json").exists());
    assert!(out_dir.join("sage.params.json").exists());

    // the dataset is gone; the report must still render
    std::fs::remove_file(&data).unwrap();
    let rep = graphtune(&["report", &out], None);
    assert_eq!(rep.status.code(), Some(0));
    let saved = read_report(&out_dir).unwrap();
    assert_eq!(stdout(&rep), saved.render());
    assert_eq!(saved.leaderboard.len(), 2);
    for name in &saved.leaderboard {
        assert!(stdout(&rep).contains(name.as_str()));
    }
    assert!(stdout(&rep).contains("ensemble voting"));
    assert_eq!(saved.seed, 3);
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = fixture(dir.path());
    let out_dir = dir.path().join("out");
    let out = out_dir.display().to_string();
    let o = graphtune(&["run", "--config", &cfg, "--data", &data, "--out", &out], Some("41"));
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read_report(&out_dir).unwrap().seed, 41);
    let o = graphtune(&["run", "--config", &cfg, "--data", &data, "--out", &out], Some("x"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_on_missing_dir_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = graphtune(&["report", &dir.path().join("absent").display().to_string()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn convert_content_cites_to_json() {
    let dir = tempfile::tempdir().unwrap();
    let ds = sbm_node_dataset(40, 2, 0.3, 0.05, 4, 1.0, 2).unwrap();
    write_content_cites(&ds, &dir.path().join("toy.content"), &dir.path().join("toy.cites")).unwrap();
    let json = dir.path().join("toy.json");
    let o = graphtune(
        &["convert", "--from", "content-cites", "--to", "json", "--input", &dir.path().display().to_string(), "--output", &json.display().to_string()],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let back = load_json(&json).unwrap();
    assert_eq!(back.num_nodes(), 40);
    assert_eq!(back.graph.num_undirected_edges(), ds.graph.num_undirected_edges());
    assert_eq!(back.num_classes, 2);
}

#[test]
fn selfcheck_passes() {
    let o = graphtune(&["selfcheck"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}
