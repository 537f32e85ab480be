use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn plreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plreg"))
        .args(args)
        .env_remove("PLREG_SEED")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr line");
    serde_json::from_str(line).expect("machine-parsable error")
}

#[test]
fn fit_em_writes_sparse_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("em.json");
    let out = plreg(&["fit-em", "--data", s(&data("iris.csv")), "--a", "0.5", "--b", "1", "--seed", "1", "-o", s(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    let params = &json["params"];
    assert_eq!(params["method"], "em");
    assert!(!params["zero_pattern"].as_array().unwrap().is_empty());
    assert!(params["objective"].as_array().unwrap().len() > 1);
    assert_eq!(json["label_names"][0], "setosa");
}

#[test]
fn every_fit_round_trips_through_predict() {
    let dir = tempfile::tempdir().unwrap();
    let iris = data("iris.csv");
    let fits: [&[&str]; 4] = [
        &["fit-em"],
        &["fit-gibbs", "--burn-in", "50", "--samples", "100"],
        &["fit-vb"],
        &["fit-logit", "--burn-in", "50", "--samples", "100"],
    ];
    for fit in fits {
        let model = dir.path().join(format!("{}.json", fit[0]));
        let mut args = fit.to_vec();
        args.extend(["--data", s(&iris), "--seed", "7", "-o", s(&model)]);
        let out = plreg(&args);
        assert!(out.status.success(), "{}: {}", fit[0], String::from_utf8_lossy(&out.stderr));

        let first = plreg(&["predict", "--model", s(&model), "--data", s(&iris)]);
        let second = plreg(&["predict", "--model", s(&model), "--data", s(&iris)]);
        assert!(first.status.success());
        assert_eq!(first.stdout, second.stdout);
        let text = String::from_utf8(first.stdout).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "row,p_setosa,p_versicolor,p_virginica,predicted");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 150);
        let fields: Vec<&str> = rows[0].split(',').collect();
        let total: f64 = fields[1..4].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let out = plreg(&[
            "fit-gibbs",
            "--data",
            s(&data("wine.csv")),
            "--burn-in",
            "20",
            "--samples",
            "30",
            "--seed",
            "11",
            "-o",
            s(&path),
        ]);
        assert!(out.status.success());
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let out = Command::new(env!("CARGO_BIN_EXE_plreg"))
        .args(["fit-em", "--data", s(&data("iris.csv")), "-o", s(&path)])
        .env("PLREG_SEED", "42")
        .output()
        .unwrap();
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(json["seed"], 42);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!("seed = 3\n[prior]\na = 0.7\nb = 2.0\n[data]\npath = {:?}\n", s(&data("iris.csv"))),
    )
    .unwrap();
    let path = dir.path().join("m.json");
    let out = plreg(&["fit-em", "--config", s(&config), "--a", "0.9", "-o", s(&path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(json["params"]["hyper_a"], 0.9);
    assert_eq!(json["params"]["hyper_b"], 2.0);
    assert_eq!(json["seed"], 3);
}

#[test]
fn failures_have_distinct_codes_and_json() {
    let iris = data("iris.csv");
    let dir = tempfile::tempdir().unwrap();
    let bad_config = dir.path().join("bad.toml");
    std::fs::write(&bad_config, "[prior]\nalpha = 1\n").unwrap();
    let missing_cell = dir.path().join("missing.csv");
    std::fs::write(&missing_cell, "x,class\n1,a\n,b\n").unwrap();
    let single = dir.path().join("single.csv");
    std::fs::write(&single, "x,class\n1,a\n2,a\n").unwrap();

    let lone = dir.path().join("lone.csv");
    std::fs::write(&lone, "x,class\n0,a\n1,b\n2,b\n-1,b\n").unwrap();

    let cases: [(&[&str], &str, i32); 6] = [
        (&["fit-em", "--nonsense"], "usage", 2),
        (&["fit-em", "--config", s(&bad_config)], "config", 3),
        (&["fit-em", "--data", s(&iris), "--a", "-1"], "config", 3),
        (&["fit-em", "--data", s(&missing_cell)], "data", 4),
        (&["fit-em", "--data", s(&single)], "data", 4),
        (&["fit-em", "--data", s(&lone), "--a", "0.05"], "fit", 5),
    ];
    for (args, kind, code) in cases {
        let out = plreg(args);
        assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let err = error_json(&out);
        assert_eq!(err["error"]["kind"], kind, "{args:?}");
        assert_eq!(err["error"]["code"], code);
    }
    let out = plreg(&["fit-em", "--data", s(&missing_cell)]);
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("row 2"));
}

#[test]
fn regpath_and_ess_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("path.csv");
    let out = plreg(&["regpath", "--data", s(&data("iris.csv")), "--grid", "1,0.5,0.1", "--csv", s(&csv), "--seed", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["zero_counts"].as_array().unwrap().len(), 3);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "a,k,j,value,estimator");
    assert_eq!(text.lines().count(), 1 + 3 * 27);

    let chain = dir.path().join("chain.csv");
    let out = plreg(&[
        "fit-gibbs", "--data", s(&data("lenses.csv")), "--burn-in", "100", "--samples", "200", "--chain", s(&chain), "--seed", "2",
        "-o", s(&dir.path().join("g.json")),
    ]);
    assert!(out.status.success());
    let header = std::fs::read_to_string(&chain).unwrap();
    assert!(header.starts_with("draw,lambda_1_1,lambda_1_2,"));
    let out = plreg(&["diagnose-ess", "--chain", s(&chain), "--wall-time", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["draws"], 200);
    assert!(report["report"]["min_ess"].as_f64().unwrap() >= 1.0);
}

#[test]
fn benchmark_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let errors = dir.path().join("errors.csv");
    let efficiency = dir.path().join("efficiency.csv");
    let out = plreg(&[
        "benchmark",
        "--dataset",
        &format!("Lenses={}", s(&data("lenses.csv"))),
        "--dataset",
        &format!("Pima={}:type", s(&data("pima.csv"))),
        "--replications",
        "2",
        "--burn-in",
        "50",
        "--samples",
        "100",
        "--seed",
        "5",
        "--errors-csv",
        s(&errors),
        "--efficiency-csv",
        s(&efficiency),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 4);
    assert_eq!(std::fs::read_to_string(&errors).unwrap().lines().count(), 5);
    assert_eq!(std::fs::read_to_string(&efficiency).unwrap().lines().count(), 5);
    let tables = String::from_utf8_lossy(&out.stderr);
    assert!(tables.contains("Sp. Logit") && tables.contains("Relat. Speed"));
}

#[test]
fn help_lists_every_subcommand() {
    let out = plreg(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["fit-em", "fit-gibbs", "fit-vb", "fit-logit", "predict", "regpath", "benchmark", "diagnose-ess"] {
        assert!(text.contains(sub), "{sub}");
    }
}
