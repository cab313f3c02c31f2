use std::fs;
use std::process::Command;

use factgap::graph::extract_relation_graph;
use factgap::harness::experiments::prepare_base;
use factgap::harness::output::{run_command, Command as Run};
use factgap::harness::{make_ood_testset, prepare, run_gap_experiment, ExperimentConfig};
use factgap::trainer::train;
use factgap::{Error, GapReport};

fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(
        r#"
[space]
vocab_size = 128
dim = 64
num_clusters = 12

[dataset]
n_known = 12
n_unknown = 12
n_test = 15

[train]
max_epochs = 100

[run]
seeds = [0]
"#,
    )
    .unwrap()
}

#[test]
fn identical_arms_have_no_gap() {
    let cfg = small_config();
    let (_, ds, base) = prepare_base(&cfg, 3).unwrap();
    let tc = cfg.train.to_train_config(&ds.known, 3);
    let (model, _) = train(&base, &ds.known, &tc).unwrap();
    let g = extract_relation_graph(&model, ds.relation, &ds.entities).unwrap();
    let rep = GapReport::from_graphs(&g, &g, &ds.test).unwrap();
    assert_eq!(rep.delta, 0.0);
    assert_eq!(rep.e_kn, rep.e_unk);
    assert_eq!(rep.edge_gap, 0.0);
}

#[test]
fn gap_report_is_deterministic() {
    let cfg = small_config();
    let a = run_gap_experiment(&cfg, 1).unwrap();
    let b = run_gap_experiment(&cfg, 1).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert!(a.delta > 0.0, "delta {}", a.delta);
}

#[test]
fn unshifted_tier_reproduces_the_in_distribution_gap() {
    let p = prepare(&small_config(), 2).unwrap();
    let id = p.gap_report().unwrap();
    let same = p.ood_report(1.0).unwrap();
    assert_eq!(same.indicators_kn, id.indicators_kn);
    assert_eq!(same.indicators_unk, id.indicators_unk);
    assert_eq!(same.delta, id.delta);
    assert!((same.gamma.unwrap() - 1.0).abs() < 0.05);
}

#[test]
fn ood_rejects_gamma_outside_unit_interval() {
    let cfg = small_config();
    let (space, ds, _) = prepare_base(&cfg, 0).unwrap();
    for g in [-0.1, 1.5, f64::NAN] {
        let err = make_ood_testset(&space, &ds.known, &ds.test, g, 0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{g}: {err}");
    }
}

#[test]
fn full_fraction_leaves_accuracy_unchanged() {
    let p = prepare(&small_config(), 4).unwrap();
    let rep = p.small_data(1.0).unwrap();
    assert_eq!(rep.n_subset, rep.n_full);
    assert_eq!(rep.prompted_difference, 0.0);
    assert_eq!(rep.bare_difference, 0.0);
    assert!(matches!(p.small_data(0.0), Err(Error::Config(_))));
}

#[test]
fn zero_demos_is_a_contract_error() {
    let mut p = prepare(&small_config(), 5).unwrap();
    p.config.icl.demos = 0;
    let err = p.fewshot_prompt(&p.dataset.known).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn invalid_configs_are_config_errors() {
    for text in [
        "[dataset]\nn_known = 10\nn_unknown = 11\n",
        "[ood]\ngammas = [1.2]\n",
        "[space]\nbogus = 1\n",
        "[train]\nlearning_rate = -1.0\n",
        "[space]\nnum_clusters = 200\n",
    ] {
        let err = ExperimentConfig::from_toml_str(text)
            .and_then(|c| c.validate())
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{text}: {err}");
    }
}

#[test]
fn config_roundtrips_through_toml() {
    let cfg = small_config();
    assert_eq!(
        ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(),
        cfg
    );
}

#[test]
fn gen_writes_per_seed_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let files = run_command(Run::Gen, &small_config(), &[0, 1], dir.path()).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    let names: Vec<String> = files
        .iter()
        .map(|f| f.strip_prefix(dir.path()).unwrap().display().to_string())
        .collect();
    assert!(names.contains(&"config.toml".to_string()));
    assert!(names.iter().any(|n| n.ends_with("dataset.csv")));
    let header =
        fs::read_to_string(files.iter().find(|f| f.ends_with("dataset.csv")).unwrap()).unwrap();
    assert!(header.starts_with("s,r,a,split,provenance,label"));
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_factgap"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[dataset]\nn_known = 3\nn_unknown = 4\n").unwrap();
    let r = cli(&[
        "gen",
        "--config",
        bad.to_str().unwrap(),
        "--seed",
        "0",
        "--out",
        out,
    ]);
    assert_eq!(r.status.code(), Some(2));

    let diverge = dir.path().join("diverge.toml");
    fs::write(
        &diverge,
        format!("{}\n", small_config().to_toml_string())
            .replace("learning_rate = 0.1", "learning_rate = 1e200"),
    )
    .unwrap();
    let r = cli(&[
        "gap",
        "--config",
        diverge.to_str().unwrap(),
        "--seed",
        "0",
        "--out",
        out,
    ]);
    assert_eq!(
        r.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );

    let good = dir.path().join("good.toml");
    fs::write(&good, small_config().to_toml_string()).unwrap();
    let r = cli(&[
        "gen",
        "--config",
        good.to_str().unwrap(),
        "--seed",
        "0",
        "--out",
        out,
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
}
