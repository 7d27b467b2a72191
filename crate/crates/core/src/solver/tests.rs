use super::*;
use crate::hpo::{FakeClock, Method, ParamValue, SearchSpace};
use crate::nn::Family;
use crate::synthetic::{cycles_vs_chords, sbm_node_dataset};
use crate::train::{train_node, TrainConfig};

fn node_ds() -> Dataset {
    Dataset::Node(sbm_node_dataset(150, 3, 0.15, 0.01, 10, 0.8, 3).unwrap())
}

fn quick_train() -> TrainConfig {
    TrainConfig { max_epochs: 30, patience: 10, ..TrainConfig::default() }
}

fn node_cfg(models: Vec<ModelEntry>, trials: usize, ensemble: EnsembleMethod) -> SolverConfig {
    SolverConfig {
        hpo: HpoConfig { n_trials: trials, n_startup: 2, ..HpoConfig::default() },
        ensemble,
        split: SplitConfig { per_class: 10, n_val: 30, n_test: 60 },
        train: quick_train(),
        seed: 5,
        ..SolverConfig::new(Task::Node, models)
    }
}

fn small_space() -> SearchSpace {
    use crate::hpo::{HyperParamSpec, Scale};
    SearchSpace::new(vec![
        HyperParamSpec::integer("hidden_dim", 8, 32, Scale::Log),
        HyperParamSpec::numerical("lr", 1e-3, 5e-2, Scale::Log),
        HyperParamSpec::numerical("dropout", 0.2, 0.6, Scale::Linear),
    ])
    .unwrap()
}

fn two_models() -> Vec<ModelEntry> {
    vec![ModelEntry::new(Family::Gcn).with_space(small_space()), ModelEntry::new(Family::Sage).with_space(small_space())]
}

#[test]
fn single_model_collapses_to_direct_training() {
    let ds = node_ds();
    let cfg = node_cfg(vec![ModelEntry::new(Family::Gcn).with_space(SearchSpace::default())], 1, EnsembleMethod::None);
    let out = solve(&ds, &cfg).unwrap();
    let Dataset::Node(d) = &ds else { unreachable!() };
    let masks = planetoid_style_split(&d.labels, 10, 30, 60, 5).unwrap();
    let spec = ModelSpec::default_for(Family::Gcn, d.features.cols, 3);
    let direct = train_node(&spec, d, &masks, &TrainConfig { seed: 5, ..quick_train() }).unwrap();
    let best = out.report.models[0].best.as_ref().unwrap();
    assert!(best.assignment.is_empty());
    assert_eq!(best.val, direct.best_val_metric);
    assert_eq!(best.test, direct.test_metric.unwrap());
    assert_eq!(out.models[0].params[0], direct.best_params);
    assert!(out.report.ensemble.is_none());
}

#[test]
fn repeated_runs_are_identical_modulo_timings() {
    let ds = node_ds();
    let cfg = node_cfg(two_models(), 3, EnsembleMethod::Voting);
    let a = solve(&ds, &cfg).unwrap().report.without_timings().to_json().unwrap();
    let b = solve(&ds, &cfg).unwrap().report.without_timings().to_json().unwrap();
    assert_eq!(a, b);
}

#[test]
fn test_labels_only_change_test_numbers() {
    let ds = node_ds();
    let cfg = node_cfg(two_models(), 3, EnsembleMethod::StackingGlm);
    let Dataset::Node(d) = &ds else { unreachable!() };
    let masks = planetoid_style_split(&d.labels, 10, 30, 60, 5).unwrap();
    let mut flipped = d.clone();
    for v in SplitMasks::indices(&masks.test) {
        flipped.labels[v] = (flipped.labels[v] + 1) % 3;
    }
    // the split is drawn from labels, so pin it explicitly for both runs
    let mut d1 = d.clone();
    d1.masks = Some(masks.clone());
    flipped.masks = Some(masks);
    let a = solve(&Dataset::Node(d1), &cfg).unwrap().report;
    let b = solve(&Dataset::Node(flipped), &cfg).unwrap().report;
    assert_eq!(a.leaderboard, b.leaderboard);
    for (x, y) in a.models.iter().zip(&b.models) {
        let strip = |m: &ModelReport| m.trials.iter().map(|t| (t.assignment.clone(), t.score)).collect::<Vec<_>>();
        assert_eq!(strip(x), strip(y));
        let (bx, by) = (x.best.as_ref().unwrap(), y.best.as_ref().unwrap());
        assert_eq!((&bx.assignment, bx.val), (&by.assignment, by.val));
    }
    assert_eq!(a.ensemble.as_ref().unwrap().val, b.ensemble.as_ref().unwrap().val);
}

#[test]
fn leaderboard_and_voting_sanity() {
    let ds = node_ds();
    let cfg = node_cfg(two_models(), 3, EnsembleMethod::Voting);
    let r = solve(&ds, &cfg).unwrap().report;
    let mut names = r.leaderboard.clone();
    names.sort();
    assert_eq!(names, vec!["gcn".to_string(), "sage".to_string()]);
    let vals: Vec<f64> = r.leaderboard.iter().map(|n| r.model(n).unwrap().best.as_ref().unwrap().val).collect();
    assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    let e = r.ensemble.as_ref().unwrap();
    assert_eq!(e.method, "voting");
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(e.val >= min - 0.02);
    assert!(r.models.iter().all(|m| m.trials.len() == 3));
}

#[test]
fn zero_budget_gives_one_trial_per_model() {
    let ds = node_ds();
    let cfg = SolverConfig { time_budget: Some(0.0), ..node_cfg(two_models(), 5, EnsembleMethod::Voting) };
    let r = solve(&ds, &cfg).unwrap().report;
    assert!(r.budget_exhausted);
    assert!(r.models.iter().all(|m| m.trials.len() == 1));
    assert_eq!(r.leaderboard.len(), 2);
}

#[test]
fn unlimited_budget_never_cuts() {
    let clock = FakeClock::default();
    clock.advance(1e9);
    let ds = node_ds();
    let cfg = node_cfg(two_models(), 2, EnsembleMethod::None);
    let r = solve_with_clock(&ds, &cfg, &clock).unwrap().report;
    assert!(!r.budget_exhausted);
    assert!(r.models.iter().all(|m| m.trials.len() == 2));
}

#[test]
fn report_round_trip_and_models_saved() {
    let ds = node_ds();
    let out = solve(&ds, &node_cfg(two_models(), 2, EnsembleMethod::StackingGbm)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_report(&out.report, dir.path()).unwrap();
    let paths = save_models(&out.models, dir.path()).unwrap();
    assert_eq!(paths.len(), 2);
    let back = read_report(dir.path()).unwrap();
    assert_eq!(back, out.report);
    assert_eq!(back.dataset.digest, ds.digest());
    let p = crate::nn::load_params(&paths[0], Some(&out.models[0].spec)).unwrap();
    assert_eq!(p, out.models[0].params[0]);
    assert!(back.render().contains("ensemble stacking-gbm"));

    let text = std::fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 99");
    assert!(matches!(SolverReport::from_json(&text), Err(SolverError::Schema { expected: 1, got: Some(99) })));
}

#[test]
fn results_json_has_documented_keys() {
    let ds = node_ds();
    let r = solve(&ds, &node_cfg(vec![ModelEntry::new(Family::Gcn).with_space(small_space())], 1, EnsembleMethod::None)).unwrap().report;
    let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    for key in ["schema_version", "dataset", "models", "ensemble", "leaderboard", "timings", "budget_exhausted", "seed", "version"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    for key in ["name", "digest", "n", "task"] {
        assert!(v["dataset"].get(key).is_some(), "{key}");
    }
    let t = &v["models"][0]["trials"][0];
    assert!(t.get("assignment").is_some() && t.get("score").is_some() && t.get("seconds").is_some());
    assert!(v["ensemble"].is_null());
}

#[test]
fn graph_task_under_cross_validation() {
    let ds = Dataset::Graph(cycles_vs_chords(40, 6, 10, 4).unwrap());
    let small = crate::hpo::SearchSpace::new(vec![crate::hpo::HyperParamSpec::integer("hidden_dim", 8, 16, crate::hpo::Scale::Linear)]).unwrap();
    let cfg = SolverConfig {
        hpo: HpoConfig { n_trials: 2, method: Method::Random, ..HpoConfig::default() },
        protocol: EvalProtocol::Kfold { k: 4 },
        train: TrainConfig { max_epochs: 10, patience: 5, batch_size: 8, ..TrainConfig::default() },
        ..SolverConfig::new(
            Task::Graph,
            vec![
                ModelEntry::new(Family::Gin).with_space(small.clone()).with_template("num_layers", ParamValue::Int(2)),
                ModelEntry::new(Family::TopkPool).with_space(small).with_template("num_layers", ParamValue::Int(2)),
            ],
        )
    };
    let out = solve(&ds, &cfg).unwrap();
    assert!(out.report.ensemble.is_none());
    assert_eq!(out.models[0].params.len(), 4);
    assert!(out.report.models.iter().all(|m| m.best.is_some()));

    let voted = solve(&ds, &SolverConfig { ensemble: EnsembleMethod::Voting, ..cfg.clone() }).unwrap();
    assert!(voted.report.ensemble.is_some());
}

#[test]
fn missing_graph_features_get_degree_encoding() {
    let mut g = cycles_vs_chords(30, 6, 10, 8).unwrap();
    g.features = vec![None; g.len()];
    let cfg = SolverConfig {
        hpo: HpoConfig { n_trials: 1, ..HpoConfig::default() },
        train: TrainConfig { max_epochs: 5, patience: 5, ..TrainConfig::default() },
        ..SolverConfig::new(Task::Graph, vec![ModelEntry::new(Family::Gin).with_space(SearchSpace::default())])
    };
    let out = solve(&Dataset::Graph(g), &cfg).unwrap();
    assert!(out.models[0].spec.in_dim >= 3);
}

#[test]
fn feature_pipeline_runs_before_training() {
    let ds = node_ds();
    let cfg = SolverConfig {
        feature_pipeline: Some(vec![FeatureStep::generator("ldp"), FeatureStep::generator("pagerank"), FeatureStep::selector("filter_constant")]),
        ..node_cfg(vec![ModelEntry::new(Family::Gcn).with_space(SearchSpace::default())], 1, EnsembleMethod::None)
    };
    let out = solve(&ds, &cfg).unwrap();
    assert_eq!(out.models[0].spec.in_dim, 10 + 5 + 1);
}

#[test]
fn config_validation_and_json() {
    let bad = |c: SolverConfig| c.validate().is_err();
    assert!(bad(SolverConfig::new(Task::Node, vec![])));
    assert!(bad(SolverConfig { ensemble: EnsembleMethod::StackingGlm, ..SolverConfig::new(Task::Node, vec![ModelEntry::new(Family::Gcn)]) }));
    assert!(bad(SolverConfig::new(Task::Node, vec![ModelEntry::new(Family::Gin)])));
    assert!(bad(SolverConfig::new(Task::Node, vec![ModelEntry::new(Family::Gcn), ModelEntry::new(Family::Gcn)])));
    assert!(bad(SolverConfig::new(Task::Node, vec![ModelEntry::new(Family::Gcn).with_template("depth", ParamValue::Int(2))])));
    assert!(bad(SolverConfig { protocol: EvalProtocol::Kfold { k: 2 }, ..SolverConfig::new(Task::Graph, vec![ModelEntry::new(Family::Gin)]) }));
    assert!(bad(SolverConfig::new(Task::Node, vec![ModelEntry::new(Family::Gcn).with_template("activation", ParamValue::Cat("swish".into()))])));

    let text = r#"{
        "task": "node",
        "feature_pipeline": [{"kind": "generator", "name": "pagerank"}],
        "models": [
            {"family": "gcn"},
            {"family": "gat", "template": {"dropout": 0.6, "lr": 0.005},
             "space": [{"name": "hidden_dim", "kind": "integer", "low": 4, "high": 16}]}
        ],
        "hpo": {"method": "tpe", "n_trials": 10},
        "ensemble": "voting",
        "protocol": {"kind": "fixed_split"},
        "time_budget": 600,
        "seed": 7
    }"#;
    let cfg = SolverConfig::from_json(text).unwrap();
    assert_eq!(cfg.models[1].template["lr"], ParamValue::Num(0.005));
    assert_eq!(cfg.budget(), Some(600.0));
    assert_eq!(cfg.models[0].resolved_space(Task::Node), default_space(Task::Node, Family::Gcn));
    let back = SolverConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);

    // misspelled keys are errors, not silent defaults
    for typo in [
        r#"{"task": "node", "models": [{"family": "gcn"}], "sed": 1}"#,
        r#"{"task": "node", "models": [{"family": "gcn", "templte": {}}]}"#,
        r#"{"task": "node", "models": [{"family": "gcn"}], "hpo": {"n_trial": 3}}"#,
        r#"{"task": "node", "models": [{"family": "gcn"}], "train": {"learning_rate": 0.1}}"#,
        r#"{"task": "node", "models": [{"family": "gcn"}], "split": {"per_clas": 5}}"#,
    ] {
        assert!(matches!(SolverConfig::from_json(typo), Err(SolverError::Config(_))), "{typo}");
    }
}

#[test]
fn dataset_task_mismatch_is_data_error() {
    let cfg = node_cfg(vec![ModelEntry::new(Family::Gcn)], 1, EnsembleMethod::None);
    let g = Dataset::Graph(cycles_vs_chords(10, 5, 6, 1).unwrap());
    assert!(matches!(solve(&g, &cfg), Err(SolverError::Data(_))));
}
