use std::path::Path;
use std::process::Command;

use treepce::models::{diagonal_2d, gated_quadratic_2d, oscillatory_default, sample, step_1d};
use treepce::{io, SampleSet};
use treepce_cli::main_with_args;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut all = vec!["treepce"];
    all.extend_from_slice(args);
    main_with_args(all)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Scattered points of the unit square with outputs from `f`.
fn scattered(n: usize, f: impl Fn(&[f64]) -> f64) -> SampleSet {
    let base = sample(&diagonal_2d(), n, 99).unwrap();
    SampleSet::from_function(2, base.inputs().to_vec(), f).unwrap()
}

fn write_data(dir: &Path, name: &str, data: &SampleSet) -> String {
    let p = dir.join(name);
    io::write_samples(&p, data).unwrap();
    p.to_str().unwrap().to_string()
}

fn inputs_csv(dir: &Path, name: &str, rows: &[Vec<f64>]) -> String {
    let p = dir.join(name);
    let d = rows[0].len();
    let mut text = (1..=d)
        .map(|i| format!("x{i}"))
        .collect::<Vec<_>>()
        .join(",");
    text.push('\n');
    for r in rows {
        text.push_str(
            &r.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        text.push('\n');
    }
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn step_tree_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), "step.csv", &sample(&step_1d(), 500, 1).unwrap());
    let model = dir.path().join("step.json");
    let (code, _, err) = run(&[
        "fit",
        "--data",
        &data,
        "--method",
        "tree-pce",
        "--p-loc",
        "0",
        "--mesh-points",
        "1",
        "--out",
        s(&model),
    ]);
    assert_eq!(code, 0, "{err}");
    let diag = json(&dir.path().join("step.diagnostics.json"));
    assert_eq!(diag["leaf_count"], 2);
    assert_eq!(diag["train_tse"].as_f64().unwrap(), 0.0);
    assert!(diag["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(diag["split_history"].as_array().unwrap().len(), 1);
}

#[test]
fn constant_data_gives_one_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let d = scattered(200, |_| 2.5);
    let data = write_data(dir.path(), "c.csv", &d);
    let model = dir.path().join("c.json");
    let (code, _, err) = run(&[
        "fit",
        "--data",
        &data,
        "--method",
        "pce",
        "--degree",
        "3",
        "--out",
        s(&model),
    ]);
    assert_eq!(code, 0, "{err}");
    let v = json(&model);
    let nonzero = v["model"]["coefficients"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c.as_f64().unwrap().abs() > 1e-10)
        .count();
    assert_eq!(nonzero, 1);
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["fit", "--data", s(&dir.path().join("missing.csv"))]);
    assert_eq!(code, 2, "{err}");
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x1,y\n0.1,1\n0.2,1\n0.3,abc\n").unwrap();
    let (code, _, err) = run(&["fit", "--data", s(&bad)]);
    assert_eq!(code, 2);
    assert!(err.contains("line 4"), "{err}");
    let (code, _, _) = run(&["fit", "--data", s(&bad), "--set", "colour=red"]);
    assert_eq!(code, 2);
    let (code, _, _) = run(&["benchmark", "nosuch"]);
    assert_eq!(code, 2);
}

#[test]
fn infeasible_fit_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = SampleSet::from_function(2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], |x| x[0]).unwrap();
    let data = write_data(dir.path(), "tiny.csv", &d);
    let (code, _, err) = run(&[
        "fit",
        "--data",
        &data,
        "--method",
        "pce",
        "--degree",
        "3",
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn fit_then_predict_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let full = sample(&diagonal_2d(), 1200, 2).unwrap();
    let (train, test) = full.shuffled_split(0.5, 2);
    let data = write_data(dir.path(), "train.csv", &train);
    let model = dir.path().join("m.json");
    let (code, _, err) = run(&[
        "fit",
        "--data",
        &data,
        "--method",
        "tree-pce",
        "--p-loc",
        "1",
        "--max-classes",
        "6",
        "--out",
        s(&model),
    ]);
    assert_eq!(code, 0, "{err}");
    let rows: Vec<Vec<f64>> = test.rows().map(<[f64]>::to_vec).collect();
    let inp = inputs_csv(dir.path(), "x.csv", &rows);
    let out = dir.path().join("pred.csv");
    let (code, _, err) = run(&[
        "predict",
        "--model",
        s(&model),
        "--data",
        &inp,
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0, "{err}");

    let space = treepce::InputSpace::unit_cube(2).unwrap();
    let mesh = treepce::ThresholdMesh::uniform(&space, 8).unwrap();
    let cfg = treepce::tree::TreePceConfig::new(mesh, 1).with_max_classes(6);
    let tree = treepce::tree::fit_tree(&train, &space, &cfg).unwrap();
    let got = io::read_samples(&out).unwrap();
    assert_eq!(got.len(), rows.len());
    for (k, x) in rows.iter().enumerate() {
        assert_eq!(got.row(k), x.as_slice());
        assert!((got.output(k) - tree.predict(x).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn exact_model_reproduces_training_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = scattered(120, |x| 1.0 + x[0] - 2.0 * x[0] * x[1]);
    let data = write_data(dir.path(), "q.csv", &d);
    let model = dir.path().join("q.json");
    assert_eq!(
        run(&[
            "fit",
            "--data",
            &data,
            "--method",
            "pce",
            "--degree",
            "2",
            "--out",
            s(&model)
        ])
        .0,
        0
    );
    let rows: Vec<Vec<f64>> = d.rows().map(<[f64]>::to_vec).collect();
    let inp = inputs_csv(dir.path(), "x.csv", &rows);
    let (code, text, _) = run(&["predict", "--model", s(&model), "--data", &inp]);
    assert_eq!(code, 0);
    let got = io::read_samples_from(text.as_bytes()).unwrap();
    for k in 0..d.len() {
        assert!((got.output(k) - d.output(k)).abs() < 1e-9);
    }
}

#[test]
fn tree_prediction_follows_the_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), "step.csv", &sample(&step_1d(), 300, 5).unwrap());
    let model = dir.path().join("m.json");
    run(&[
        "fit",
        "--data",
        &data,
        "--p-loc",
        "0",
        "--mesh-points",
        "1",
        "--out",
        s(&model),
    ]);
    let inp = inputs_csv(
        dir.path(),
        "x.csv",
        &[vec![0.49], vec![0.51], vec![0.0], vec![1.0]],
    );
    let (code, text, _) = run(&["predict", "--model", s(&model), "--data", &inp]);
    assert_eq!(code, 0);
    let got = io::read_samples_from(text.as_bytes()).unwrap();
    assert_eq!(got.outputs(), &[0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn predict_domain_and_width_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), "step.csv", &sample(&step_1d(), 300, 5).unwrap());
    let model = dir.path().join("m.json");
    run(&["fit", "--data", &data, "--p-loc", "0", "--out", s(&model)]);
    let inp = inputs_csv(
        dir.path(),
        "x.csv",
        &[vec![0.2], vec![1.5], vec![0.3], vec![-0.1]],
    );
    let (code, _, err) = run(&["predict", "--model", s(&model), "--data", &inp]);
    assert_eq!(code, 5);
    assert!(err.contains("2, 4"), "{err}");
    let (code, _, _) = run(&["predict", "--model", s(&model), "--data", &data]);
    assert_eq!(code, 2);
}

#[test]
fn sensitivity_of_single_term_pce() {
    let dir = tempfile::tempdir().unwrap();
    let d = scattered(200, |x| 3.0 * x[0]);
    let data = write_data(dir.path(), "l.csv", &d);
    let model = dir.path().join("l.json");
    run(&[
        "fit",
        "--data",
        &data,
        "--method",
        "pce",
        "--degree",
        "1",
        "--out",
        s(&model),
    ]);
    let (code, text, err) = run(&["sensitivity", "--model", s(&model), "--format", "csv"]);
    assert_eq!(code, 0, "{err}");
    let s1: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("S_1,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!((s1 - 1.0).abs() < 1e-12);
}

#[test]
fn tree_indices_of_gated_quadratic() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(
        dir.path(),
        "g.csv",
        &sample(&gated_quadratic_2d(), 1000, 6).unwrap(),
    );
    let model = dir.path().join("g.json");
    let (code, _, err) = run(&[
        "fit",
        "--data",
        &data,
        "--p-loc",
        "2",
        "--mesh-points",
        "1",
        "--out",
        s(&model),
    ]);
    assert_eq!(code, 0, "{err}");
    let out = dir.path().join("g-sens.json");
    let (code, _, err) = run(&["sensitivity", "--model", s(&model), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let v = json(&out);
    let idx: Vec<f64> = v["tree"]["indices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert_eq!(idx, vec![1.0, 0.0]);
}

#[test]
fn budget_and_pick_freeze_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(
        dir.path(),
        "d.csv",
        &sample(&diagonal_2d(), 800, 7).unwrap(),
    );
    let model = dir.path().join("d.json");
    run(&[
        "fit",
        "--data",
        &data,
        "--p-loc",
        "1",
        "--max-classes",
        "5",
        "--out",
        s(&model),
    ]);
    let (code, _, err) = run(&["sensitivity", "--model", s(&model), "--set", "budget=10"]);
    assert_eq!(code, 4);
    assert!(err.contains("pick-freeze"), "{err}");
    let (code, _, _) = run(&[
        "sensitivity",
        "--model",
        s(&model),
        "--method",
        "pick-freeze",
        "--seed",
        "1",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn analytic_and_pick_freeze_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(
        dir.path(),
        "m.csv",
        &sample(&oscillatory_default(4, 4.0, 1.0), 2000, 8).unwrap(),
    );
    let model = dir.path().join("m.json");
    let (code, _, err) = run(&[
        "fit",
        "--data",
        &data,
        "--p-loc",
        "2",
        "--max-classes",
        "10",
        "--out",
        s(&model),
    ]);
    assert_eq!(code, 0, "{err}");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert_eq!(
        run(&["sensitivity", "--model", s(&model), "--out", s(&a)]).0,
        0
    );
    let (code, _, err) = run(&[
        "sensitivity",
        "--model",
        s(&model),
        "--method",
        "pick-freeze",
        "--n-mc",
        "40000",
        "--seed",
        "3",
        "--out",
        s(&b),
    ]);
    assert_eq!(code, 0, "{err}");
    let (a, b) = (json(&a), json(&b));
    for i in 0..4 {
        let sa = a["sobol"]["entries"][i]["first_order"].as_f64().unwrap();
        let sb = b["sobol"]["entries"][i]["first_order"].as_f64().unwrap();
        assert!((sa - sb).abs() < 0.05, "input {i}: {sa} vs {sb}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), "step.csv", &sample(&step_1d(), 300, 9).unwrap());
    let cfg = dir.path().join("run.cfg");
    let model = dir.path().join("m.json");
    std::fs::write(
        &cfg,
        format!("# fit a step\ndata = {data}\nmethod = tree-pce\np_loc = 3\nmesh-points = 1\nout = {}\n", s(&model)),
    )
    .unwrap();
    let (code, _, err) = run(&["fit", "--config", s(&cfg), "--p-loc", "0"]);
    assert_eq!(code, 0, "{err}");
    let v = json(&model);
    assert_eq!(v["config"]["p_loc"], 0);
}

#[test]
fn export_tree_formats() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(
        dir.path(),
        "d.csv",
        &sample(&diagonal_2d(), 600, 10).unwrap(),
    );
    let model = dir.path().join("d.json");
    run(&[
        "fit",
        "--data",
        &data,
        "--p-loc",
        "0",
        "--max-classes",
        "4",
        "--out",
        s(&model),
    ]);
    let (code, dot, _) = run(&["export-tree", "--model", s(&model)]);
    assert_eq!(code, 0);
    assert!(dot.starts_with("digraph"));
    let (code, text, _) = run(&["export-tree", "--model", s(&model), "--format", "json"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["root"]["split_dim"].is_u64());
    assert!(v["root"]["children"].is_array());
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(
        dir.path(),
        "d.csv",
        &sample(&diagonal_2d(), 800, 11).unwrap(),
    );
    let (m1, m2) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for m in [&m1, &m2] {
        assert_eq!(
            run(&[
                "fit",
                "--data",
                &data,
                "--p-loc",
                "1",
                "--sparse",
                "--max-classes",
                "6",
                "--out",
                s(m)
            ])
            .0,
            0
        );
    }
    assert_eq!(std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    let sens = |m: &Path| {
        run(&[
            "sensitivity",
            "--model",
            s(m),
            "--method",
            "pick-freeze",
            "--n-mc",
            "500",
            "--seed",
            "4",
        ])
        .1
    };
    assert_eq!(sens(&m1), sens(&m2));
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn step_benchmark_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let (code, _, err) = run(&[
        "benchmark",
        "step",
        "--seed",
        "1",
        "--mesh-points",
        "1",
        "--out",
        s(&out),
        "--set",
        "samples=1000",
        "--set",
        "methods=pce,tree-pce",
        "--set",
        "degrees=19",
        "--set",
        "p-locs=0",
        "--set",
        "classes=2",
        "--set",
        "epsilons=0.1,0.01",
        "--p-loc",
        "0",
    ]);
    assert_eq!(code, 0, "{err}");
    let rows = read_csv(&out.join("results.csv"));
    let pce = rows.iter().find(|r| r[0] == "pce").unwrap();
    let tree = rows.iter().find(|r| r[0] == "tree-pce").unwrap();
    assert_eq!(pce[2], "20");
    assert!(pce[3].parse::<f64>().unwrap() > 1.0);
    assert_eq!(tree[3].parse::<f64>().unwrap(), 0.0);
    assert!(tree[1].contains("classes=2"));
    let first = std::fs::read(out.join("results.csv")).unwrap();
    run(&[
        "benchmark",
        "step",
        "--seed",
        "1",
        "--mesh-points",
        "1",
        "--out",
        s(&out),
        "--set",
        "samples=1000",
        "--set",
        "methods=pce,tree-pce",
        "--set",
        "degrees=19",
        "--set",
        "p-locs=0",
        "--set",
        "classes=2",
        "--set",
        "epsilons=0.1,0.01",
        "--p-loc",
        "0",
    ]);
    assert_eq!(std::fs::read(out.join("results.csv")).unwrap(), first);
}

#[test]
fn multid_trajectory_and_epsilon_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let (code, _, err) = run(&[
        "benchmark",
        "multid",
        "--seed",
        "1",
        "--out",
        s(&out),
        "--set",
        "methods=sse",
        "--set",
        "p-locs=1",
        "--set",
        "classes=4",
        "--set",
        "epsilons=1e-1,1e-2,1e-3,1e-4,1e-5,1e-6",
        "--set",
        "trajectory-classes=32",
    ]);
    assert_eq!(code, 0, "{err}");
    let traj = read_csv(&out.join("trajectory.csv"));
    let tse: Vec<f64> = traj.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(tse.len(), 32);
    assert!(tse.windows(2).all(|w| w[1] < w[0]));
    // per-class gains drop after the sixteenth class
    let early = (tse[0] - tse[15]) / 15.0;
    let late = (tse[15] - tse[31]) / 16.0;
    assert!(early > 5.0 * late, "{early} vs {late}");
    let eps = read_csv(&out.join("epsilon.csv"));
    let counts: Vec<usize> = eps.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(counts.len(), 6);
    assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_treepce");
    let status = Command::new(exe)
        .args(["fit", "--data", "/nonexistent/data.csv"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let out = Command::new(exe).arg("--help").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("export-tree"));
}
