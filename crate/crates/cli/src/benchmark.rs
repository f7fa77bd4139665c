//! Method sweeps on the analytical test functions, written as long-format
//! CSV tables.

use std::fmt::Write as _;
use std::path::PathBuf;

use treepce::models::{by_name, sample};
use treepce::tree::fit_tree;
use treepce::SampleSet;

use crate::commands::{
    fit_surrogate, total_squared_error, tree_config, DEFAULT_MESH_POINTS, DEFAULT_P_LOC,
};
use crate::surrogate::Surrogate;
use crate::{CliError, RunConfig};

const ALL_METHODS: [&str; 5] = ["pce", "sparse-pce", "sse", "tree-pce", "sparse-tree-pce"];

struct Row {
    method: String,
    hyper: String,
    coefficients: usize,
    train_tse: f64,
    test_tse: f64,
}

fn default_degrees(d: usize) -> Vec<usize> {
    // largest degree with at most a few hundred terms
    let top = match d {
        1 => 19,
        2 => 10,
        3 => 7,
        _ => 5,
    };
    (1..=top).collect()
}

pub fn run(name: &str, cfg: &RunConfig) -> Result<String, CliError> {
    let dim = cfg.get_or("dim", 4usize)?;
    let model = by_name(name, dim, cfg.get_or("k", 1.0)?, cfg.get_or("c", 1.0)?).map_err(|e| {
        CliError::input(format!(
            "{e}; expected step, diagonal2d, multid or gated-quadratic"
        ))
    })?;
    let d = model.dim();
    let seed = cfg.get_or("seed", 0u64)?;
    let samples = cfg.get_or("samples", 4000usize)?;
    let frac = cfg.get_or("train-frac", 0.5)?;
    if !(frac > 0.0 && frac < 1.0) {
        return Err(CliError::input(
            "train-frac must lie strictly between 0 and 1",
        ));
    }
    let full = sample(&model, samples, seed)?;
    let (train, test) = full.shuffled_split(frac, seed);
    let space = model.input_space();

    let methods: Vec<String> = cfg
        .list::<String>("methods")?
        .unwrap_or_else(|| ALL_METHODS.iter().map(|s| s.to_string()).collect());
    if let Some(bad) = methods.iter().find(|m| !ALL_METHODS.contains(&m.as_str())) {
        return Err(CliError::input(format!("unknown benchmark method {bad:?}")));
    }
    let degrees = cfg
        .list::<usize>("degrees")?
        .unwrap_or_else(|| default_degrees(d));
    let p_locs = cfg
        .list::<usize>("p-locs")?
        .unwrap_or_else(|| vec![0, 1, 2]);
    let classes = cfg
        .list::<usize>("classes")?
        .unwrap_or_else(|| vec![2, 4, 8, 16, 32]);
    let mesh_points = cfg.get_or("mesh-points", DEFAULT_MESH_POINTS)?;

    let mut rows = Vec::new();
    let score =
        |m: &str, hyper: String, rc: &RunConfig, rows: &mut Vec<Row>| -> Result<(), CliError> {
            match fit_surrogate(m, rc, &train, &space) {
                Ok(s) => {
                    rows.push(Row {
                        method: m.to_string(),
                        hyper,
                        coefficients: s.coefficient_count(),
                        train_tse: total_squared_error(&s, &train),
                        test_tse: total_squared_error(&s, &test),
                    });
                    Ok(())
                }
                // configurations too large for the sample are skipped
                Err(e) if e.kind == crate::ExitKind::Fit => Ok(()),
                Err(e) => Err(e),
            }
        };
    for m in &methods {
        match m.as_str() {
            "pce" | "sparse-pce" => {
                for &p in &degrees {
                    let mut rc = RunConfig::default();
                    rc.set("degree", &p.to_string())?;
                    score(m, format!("degree={p}"), &rc, &mut rows)?;
                }
            }
            "sse" => {
                for &p in &p_locs {
                    for &c in &classes {
                        let mut rc = RunConfig::default();
                        rc.set("p-loc", &p.to_string())?;
                        rc.set("max-classes", &c.to_string())?;
                        score("sse", format!("p_loc={p};classes={c}"), &rc, &mut rows)?;
                    }
                }
            }
            "tree-pce" | "sparse-tree-pce" => {
                // one long run per p_loc, cut back to each class count
                let sparse = m == "sparse-tree-pce";
                let top = classes.iter().copied().max().unwrap_or(1);
                for &p in &p_locs {
                    let mut rc = RunConfig::default();
                    rc.set("mesh-points", &mesh_points.to_string())?;
                    rc.set("max-classes", &top.to_string())?;
                    rc.set("sparse", if sparse { "true" } else { "false" })?;
                    let tree = match fit_tree(&train, &space, &tree_config(&rc, &space, p)?)
                        .map_err(CliError::from)
                    {
                        Ok(t) => t,
                        Err(e) if e.kind == crate::ExitKind::Fit => continue,
                        Err(e) => return Err(e),
                    };
                    for &c in &classes {
                        let s = Surrogate::Tree(tree.truncated(&train, &space, c)?);
                        rows.push(Row {
                            method: m.clone(),
                            hyper: format!("p_loc={p};classes={c};mesh={mesh_points}"),
                            coefficients: s.coefficient_count(),
                            train_tse: total_squared_error(&s, &train),
                            test_tse: total_squared_error(&s, &test),
                        });
                    }
                }
            }
            _ => unreachable!("methods were validated"),
        }
    }

    let mut results = String::from("method,hyperparameters,coefficients,train_tse,test_tse,seed\n");
    for r in &rows {
        let _ = writeln!(
            results,
            "{},{},{},{},{},{seed}",
            r.method, r.hyper, r.coefficients, r.train_tse, r.test_tse
        );
    }

    let trajectory = trajectory_table(cfg, &train, &space)?;
    let eps = epsilon_table(cfg, &train, &space)?;

    let dir = cfg
        .path("out")
        .unwrap_or_else(|| PathBuf::from(format!("bench-{name}")));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
    for (file, text) in [
        ("results.csv", &results),
        ("trajectory.csv", &trajectory),
        ("epsilon.csv", &eps),
    ] {
        let p = dir.join(file);
        std::fs::write(&p, text)
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(format!(
        "{} configurations on {name} (d = {d}, {} train / {} test), tables in {}\n",
        rows.len(),
        train.len(),
        test.len(),
        dir.display()
    ))
}

/// Train TSE after every committed split of one long run.
fn trajectory_table(
    cfg: &RunConfig,
    train: &SampleSet,
    space: &treepce::InputSpace,
) -> Result<String, CliError> {
    let p = cfg.get_or("p-loc", DEFAULT_P_LOC)?;
    let classes = cfg.get_or("trajectory-classes", 32usize)?;
    let mut rc = cfg.clone();
    rc.set("max-classes", &classes.to_string())?;
    let tc = tree_config(&rc, space, p)?;
    let mut out = String::from("p_loc,classes,train_tse,delta_tse,split_dim,threshold\n");
    let tree = match fit_tree(train, space, &tc) {
        Ok(t) => t,
        Err(_) => return Ok(out),
    };
    let _ = writeln!(out, "{p},1,{},,,", tree.tse0());
    for (k, h) in tree.history().iter().enumerate() {
        let _ = writeln!(
            out,
            "{p},{},{},{},{},{}",
            k + 2,
            h.tse_glob,
            h.delta_tse,
            h.dim + 1,
            h.threshold
        );
    }
    Ok(out)
}

/// Number of classes reached for each epsilon.
fn epsilon_table(
    cfg: &RunConfig,
    train: &SampleSet,
    space: &treepce::InputSpace,
) -> Result<String, CliError> {
    let p = cfg.get_or("p-loc", DEFAULT_P_LOC)?;
    let eps = cfg
        .list::<f64>("epsilons")?
        .unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]);
    let mut out = String::from("p_loc,epsilon,classes,train_tse\n");
    for e in eps {
        let mut rc = cfg.clone();
        rc.set("epsilon", &e.to_string())?;
        let tc = tree_config(&rc, space, p)?;
        if let Ok(t) = fit_tree(train, space, &tc) {
            let _ = writeln!(out, "{p},{e},{},{}", t.leaf_count(), t.tse_glob());
        }
    }
    Ok(out)
}
