use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use polopt::demo::bundled_mdp;
use polopt_core::mdp::Setup;
use polopt_core::oracle::enumerate_deterministic_optimum;
use serde_json::Value;

fn polopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polopt"))
        .args(args)
        .env_remove("POLOPT_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = polopt(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn vector_field_has_one_row_per_method_and_point() {
    let csv = ok(&["vector-field", "--grid=-1,2,-1,2,5"]);
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "method,index,k0,k1,dk0,dk1,magnitude,stable");
    assert_eq!(lines.len() - 1, 5 * 5 * 8);
    // Unstable gains exist on the grid and are spelled lowercase.
    assert!(csv.contains(",nan,nan,nan,false"));
    assert!(!csv.contains("NaN"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let p = dir.path().join(name);
        let p = p.to_str().unwrap();
        ok(&["vector-field", "--grid=-1,2,-1,2,7", "--out", &format!("{p}/field.csv")]);
        ok(&["gap", "--max-iters", "300", "--out", &format!("{p}/gap.csv")]);
        ok(&["mdp-demo", "--out", &format!("{p}/demo.json")]);
    }
    for file in ["field.csv", "gap.csv", "demo.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn single_cell_sweep_matches_vector_field() {
    let dir = tempfile::tempdir().unwrap();
    let field_out = dir.path().join("cells.csv");
    let summary = ok(&[
        "sweep",
        "--alphas",
        "0.6",
        "--gammas",
        "0.9",
        "--grid=-1,2,-1,2,6",
        "--field-out",
        field_out.to_str().unwrap(),
    ]);
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.starts_with("alpha,gamma,mean_cosine,n_points\n0.6,0.9,"));

    let field = ok(&["vector-field", "--alpha", "0.6", "--gamma", "0.9", "--grid=-1,2,-1,2,6"]);
    let stripped: Vec<String> = read(&field_out)
        .lines()
        .map(|l| l.splitn(3, ',').nth(2).unwrap().to_string())
        .collect();
    assert_eq!(stripped, field.lines().collect::<Vec<_>>());
}

#[test]
fn gap_with_zero_iterations_logs_only_the_start() {
    let csv = ok(&["gap", "--max-iters", "0"]);
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 6);
    assert!(rows.iter().all(|r| r[4] == "0" && r[5].parse::<f64>().unwrap() > 0.0 && r[6] == "max_iters"));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(&config, "[vector_field]\ngamma = 0.9\ngrid = \"-1,2,-1,2,3\"\nmethods = [\"grad_J_mu\", \"npg_gamma\"]\n").unwrap();
    let c = config.to_str().unwrap();
    let from_file = ok(&["vector-field", "--config", c]);
    assert_eq!(from_file.lines().count(), 1 + 9 * 2);
    let overridden = ok(&["vector-field", "--config", c, "--grid=-1,2,-1,2,4"]);
    assert_eq!(overridden.lines().count(), 1 + 16 * 2);
    // npg_gamma depends on gamma; the file's value must reach it.
    let with_flag = ok(&["vector-field", "--config", c, "--gamma", "0.9"]);
    assert_eq!(from_file, with_flag);

    fs::write(&config, "[vector_field]\ngama = 0.9\n").unwrap();
    assert!(!polopt(&["vector-field", "--config", c]).status.success());
}

fn demo_report(extra: &[&str]) -> Value {
    let mut args = vec!["mdp-demo"];
    args.extend_from_slice(extra);
    serde_json::from_str(&ok(&args)).unwrap()
}

#[test]
fn bundled_demo_improves_monotonically_and_policy_iteration_is_optimal() {
    let report = demo_report(&[]);
    let mdp = bundled_mdp();
    let setups = report["setups"].as_array().unwrap();
    assert_eq!(setups.len(), 2);
    for (trace, setup) in setups.iter().zip([Setup::Discounted { gamma: 0.9 }, Setup::Average]) {
        let (_, best) = enumerate_deterministic_optimum(&mdp, setup).unwrap();
        assert_eq!(trace["optimum"].as_f64().unwrap(), best);
        let methods = trace["methods"].as_array().unwrap();
        assert_eq!(methods.len(), 5);
        for m in methods {
            let name = m["method"].as_str().unwrap();
            let values: Vec<f64> = m["objective"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
            let slack = if name == "ppo" { 1e-9 } else { 1e-12 };
            assert!(values.windows(2).all(|w| w[1] >= w[0] - slack), "{name} {setup:?}: {values:?}");
            assert!(values.last().unwrap() > &values[0], "{name} {setup:?} made no progress");
            if name == "policy_iteration" {
                assert!((values.last().unwrap() - best).abs() <= 1e-12 * best.abs().max(1.0), "{setup:?}");
            }
        }
    }
}

#[test]
fn empty_method_list_gives_an_empty_report() {
    let report = demo_report(&["--methods", ""]);
    for setup in report["setups"].as_array().unwrap() {
        assert!(setup["methods"].as_array().unwrap().is_empty());
    }
}

#[test]
fn demo_seed_comes_from_the_environment() {
    let start = |seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_polopt"));
        cmd.args(["mdp-demo", "--methods", "policy_gradient", "--iterations", "0"]);
        match seed {
            Some(s) => cmd.env("POLOPT_SEED", s),
            None => cmd.env_remove("POLOPT_SEED"),
        };
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        v["setups"][0]["methods"][0]["objective"][0].as_f64().unwrap()
    };
    assert_eq!(start(None), start(Some("0")));
    assert_ne!(start(None), start(Some("5")));
    let bad = Command::new(env!("CARGO_BIN_EXE_polopt")).args(["mdp-demo"]).env("POLOPT_SEED", "x").output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn verify_filter_contract() {
    let out = polopt(&["verify", "--filter", "lqr-identity"]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("PASS  c7  lqr-identity"));
    assert!(table.ends_with("all 1 suites passed\n"));

    let lqr = String::from_utf8(polopt(&["verify", "--filter", "pi-lqr"]).stdout).unwrap();
    assert_eq!(lqr.lines().count(), 2);
    let tabular = String::from_utf8(polopt(&["verify", "--filter", "tabular"]).stdout).unwrap();
    let names: Vec<&str> = tabular.lines().filter_map(|l| l.split_whitespace().nth(2)).collect();
    assert!(names.contains(&"bias") && !names.contains(&"pi-lqr"));

    let unknown = polopt(&["verify", "--filter", "no-such-suite"]);
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("known suites"));

    let mutated = polopt(&["verify", "--filter", "lqr-identity", "--disable-gamma-correction"]);
    assert!(!mutated.status.success());
    assert!(String::from_utf8(mutated.stdout).unwrap().contains("first failure: lqr-identity"));
}

#[test]
fn svg_is_written_only_when_requested() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("f.csv");
    let svg = dir.path().join("f.svg");
    ok(&["vector-field", "--grid=-1,2,-1,2,3", "--out", csv.to_str().unwrap()]);
    assert!(!svg.exists());
    ok(&["vector-field", "--grid=-1,2,-1,2,3", "--out", csv.to_str().unwrap(), "--svg", svg.to_str().unwrap()]);
    assert!(read(&svg).starts_with("<svg"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    for args in [
        &["vector-field", "--grid", "1,2,3"][..],
        &["vector-field", "--gamma", "1.5"],
        &["sweep", "--alphas", "0.3,x"],
        &["mdp-demo", "--mdp", "/nonexistent.json"],
        &["mdp-demo", "--methods", "sgd"],
    ] {
        let out = polopt(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
}

#[test]
fn shipped_config_reproduces_the_defaults() {
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/experiment.toml");
    assert_eq!(ok(&["vector-field", "--config", config]), ok(&["vector-field"]));
    assert_eq!(ok(&["gap", "--config", config, "--max-iters", "50"]), ok(&["gap", "--max-iters", "50"]));
    assert_eq!(ok(&["mdp-demo", "--config", config]), ok(&["mdp-demo"]));
}
