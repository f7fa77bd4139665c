use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use treepce::io;
use treepce::orthobasis::enumerate_linear;
use treepce::pce::{fit_least_squares, fit_sparse, SparseConfig};
use treepce::sensitivity::{
    default_subsets, pick_freeze, sobol_from_pce, sobol_from_tree_with, tree_indices,
    SensitivityReport, DEFAULT_TERM_BUDGET,
};
use treepce::sse::{fit_sse_with, SseConfig};
use treepce::tree::{export_tree as export, fit_tree, ExportFormat, SplitRecord, TreePceConfig};
use treepce::{InputSpace, SampleSet, ThresholdMesh};

use crate::surrogate::Surrogate;
use crate::{CliError, ExitKind, RunConfig};

pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_P_LOC: usize = 2;
pub const DEFAULT_MESH_POINTS: usize = 8;
pub const DEFAULT_SSE_CLASSES: usize = 10;

/// Input box from `bounds`, the unit cube otherwise.
pub fn input_space(cfg: &RunConfig, dim: usize) -> Result<InputSpace, CliError> {
    match cfg.bounds()? {
        Some(b) if b.len() != dim => Err(CliError::input(format!(
            "bounds list {} inputs but the data has {dim}",
            b.len()
        ))),
        Some(b) => Ok(InputSpace::uniform_box(&b)?),
        None => Ok(InputSpace::unit_cube(dim)?),
    }
}

/// Tree settings from a configuration, with `p_loc` and class cap given.
pub fn tree_config(
    cfg: &RunConfig,
    space: &InputSpace,
    p_loc: usize,
) -> Result<TreePceConfig, CliError> {
    let mesh = ThresholdMesh::uniform(space, cfg.get_or("mesh-points", DEFAULT_MESH_POINTS)?)?;
    let mut tc = TreePceConfig::new(mesh, p_loc)
        .with_epsilon(cfg.get_or("epsilon", 0.0)?)
        .with_sparse(cfg.flag("sparse")?);
    if let Some(m) = cfg.get::<usize>("max-classes")? {
        tc = tc.with_max_classes(m);
    }
    if let Some(h) = cfg.get::<usize>("max-height")? {
        tc = tc.with_max_height(h);
    }
    if let Some(n) = cfg.get::<usize>("n-min")? {
        tc = tc.with_n_min(n);
    }
    Ok(tc)
}

/// Fits `method` to `data`.
pub fn fit_surrogate(
    method: &str,
    cfg: &RunConfig,
    data: &SampleSet,
    space: &InputSpace,
) -> Result<Surrogate, CliError> {
    let d = space.dim();
    let region = space.support();
    match method {
        "pce" | "sparse-pce" => {
            let indices = enumerate_linear(d, cfg.get_or("degree", DEFAULT_DEGREE)?);
            let model = if method == "sparse-pce" || cfg.flag("sparse")? {
                fit_sparse(data, space, &region, &indices, SparseConfig::default())?
            } else {
                fit_least_squares(data, space, &region, &indices)?
            };
            Ok(Surrogate::Pce {
                model,
                marginals: space.records(),
            })
        }
        "tree-pce" => {
            let tc = tree_config(cfg, space, cfg.get_or("p-loc", DEFAULT_P_LOC)?)?;
            Ok(Surrogate::Tree(fit_tree(data, space, &tc)?))
        }
        "sse" => {
            let mut sc = SseConfig::new(
                cfg.get_or("p-loc", DEFAULT_P_LOC)?,
                cfg.get_or("max-classes", DEFAULT_SSE_CLASSES)?,
            )
            .with_sparse(cfg.flag("sparse")?);
            if let Some(n) = cfg.get::<usize>("n-min")? {
                sc = sc.with_n_min(n);
            }
            Ok(Surrogate::Sse(fit_sse_with(data, space, &sc)?))
        }
        other => Err(CliError::input(format!(
            "unknown method {other:?}; expected pce, sparse-pce, tree-pce or sse"
        ))),
    }
}

/// Sum of squared errors of a surrogate on a dataset.
pub fn total_squared_error(model: &Surrogate, data: &SampleSet) -> f64 {
    data.rows()
        .enumerate()
        .map(|(k, x)| (data.output(k) - model.predict(x)).powi(2))
        .sum()
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    method: &'a str,
    samples: usize,
    dim: usize,
    train_tse: f64,
    coefficient_count: usize,
    leaf_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop_reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split_history: Option<&'a [SplitRecord]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sse_splits: Option<Vec<SseSplitRow>>,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct SseSplitRow {
    node: usize,
    level: usize,
    dim: usize,
    value: f64,
    gain: f64,
}

fn diagnostics_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or("model".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.diagnostics.json"))
}

fn read_data(cfg: &RunConfig) -> Result<SampleSet, CliError> {
    let path = cfg
        .path("data")
        .ok_or_else(|| CliError::input("missing --data"))?;
    io::read_samples(&path).map_err(|e| {
        let mut err = CliError::from(e);
        err.kind = ExitKind::Input;
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

pub fn fit(cfg: &RunConfig) -> Result<String, CliError> {
    let data = read_data(cfg)?;
    let space = input_space(cfg, data.dim())?;
    data.check_in_space(&space)
        .map_err(|e| CliError::input(format!("{e}; widen the input box with --bounds")))?;
    let method = cfg.raw("method").unwrap_or("tree-pce").to_string();
    let start = Instant::now();
    let model = fit_surrogate(&method, cfg, &data, &space)?;
    let wall = start.elapsed().as_secs_f64();
    let out = cfg
        .path("out")
        .unwrap_or_else(|| PathBuf::from("model.json"));
    write(&out, &model.to_json()?)?;

    let train_tse = total_squared_error(&model, &data);
    let diag = Diagnostics {
        method: model.kind(),
        samples: data.len(),
        dim: data.dim(),
        train_tse,
        coefficient_count: model.coefficient_count(),
        leaf_count: match &model {
            Surrogate::Pce { .. } => 1,
            Surrogate::Tree(t) => t.leaf_count(),
            Surrogate::Sse(s) => s.leaf_count(),
        },
        stop_reason: match &model {
            Surrogate::Tree(t) => Some(format!("{:?}", t.stop_reason())),
            _ => None,
        },
        split_history: match &model {
            Surrogate::Tree(t) => Some(t.history()),
            _ => None,
        },
        sse_splits: match &model {
            Surrogate::Sse(s) => Some(
                s.nodes()
                    .iter()
                    .enumerate()
                    .filter_map(|(k, n)| {
                        n.split.as_ref().map(|sp| SseSplitRow {
                            node: k,
                            level: n.level,
                            dim: sp.dim,
                            value: sp.value,
                            gain: sp.gain,
                        })
                    })
                    .collect(),
            ),
            _ => None,
        },
        wall_time_s: wall,
    };
    let diag_path = diagnostics_path(&out);
    let text = serde_json::to_string_pretty(&diag).map_err(|e| CliError::input(e.to_string()))?;
    write(&diag_path, &text)?;
    Ok(format!(
        "{} model with {} coefficients, train TSE {:e}, written to {}\n",
        model.kind(),
        diag.coefficient_count,
        train_tse,
        out.display()
    ))
}

fn load_model(cfg: &RunConfig) -> Result<Surrogate, CliError> {
    let path = cfg
        .path("model")
        .ok_or_else(|| CliError::input("missing --model"))?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    Surrogate::from_json(&text)
}

pub fn predict(cfg: &RunConfig) -> Result<String, CliError> {
    let model = load_model(cfg)?;
    let path = cfg
        .path("data")
        .ok_or_else(|| CliError::input("missing --data"))?;
    let inputs = io::read_inputs(&path, model.dim()).map_err(|e| {
        let mut err = CliError::from(e);
        err.kind = ExitKind::Input;
        err
    })?;
    let domain = model.domain();
    let outside: Vec<String> = inputs
        .iter()
        .enumerate()
        .filter(|(_, x)| !domain.contains(x))
        .map(|(k, _)| (k + 1).to_string())
        .collect();
    if !outside.is_empty() {
        return Err(CliError {
            kind: ExitKind::Domain,
            message: format!("rows outside the model domain: {}", outside.join(", ")),
        });
    }
    let preds: Vec<f64> = inputs.iter().map(|x| model.predict(x)).collect();
    let mut buf = Vec::new();
    io::write_predictions_to(&mut buf, &inputs, &preds)?;
    let text = String::from_utf8(buf).expect("csv output is utf-8");
    match cfg.path("out") {
        Some(out) => {
            write(&out, &text)?;
            Ok(format!(
                "{} predictions written to {}\n",
                preds.len(),
                out.display()
            ))
        }
        None => Ok(text),
    }
}

pub fn sensitivity(cfg: &RunConfig) -> Result<String, CliError> {
    let model = load_model(cfg)?;
    let d = model.dim();
    let method = cfg.raw("method").unwrap_or("analytic");
    let report =
        match method {
            "analytic" => match &model {
                Surrogate::Pce { model, .. } => SensitivityReport {
                    sobol: sobol_from_pce(model, &default_subsets(d))?,
                    tree: None,
                },
                Surrogate::Tree(t) => {
                    let space = model.input_space()?;
                    let budget = cfg.get_or("budget", DEFAULT_TERM_BUDGET)?;
                    SensitivityReport {
                        sobol: sobol_from_tree_with(t, &space, &default_subsets(d), budget, None)?,
                        tree: Some(tree_indices(t)),
                    }
                }
                Surrogate::Sse(_) => return Err(CliError::input(
                    "analytic indices are not available for sse models; use --method pick-freeze",
                )),
            },
            "pick-freeze" => {
                let n_mc: usize = cfg.require("n-mc")?;
                let seed: u64 = cfg.require("seed")?;
                let space = model.input_space()?;
                let inputs: Vec<usize> = (0..d).collect();
                let sobol = pick_freeze(|x| model.predict(x), &space, &inputs, n_mc, seed)?;
                let tree = match &model {
                    Surrogate::Tree(t) => Some(tree_indices(t)),
                    _ => None,
                };
                SensitivityReport { sobol, tree }
            }
            other => {
                return Err(CliError::input(format!(
                    "unknown sensitivity method {other:?}; expected analytic or pick-freeze"
                )))
            }
        };
    let text = match cfg.raw("format").unwrap_or("json") {
        "json" => report.to_json()?,
        "csv" => report.to_csv(),
        other => {
            return Err(CliError::input(format!(
                "unknown format {other:?}; expected csv or json"
            )))
        }
    };
    match cfg.path("out") {
        Some(out) => {
            write(&out, &text)?;
            Ok(format!("sensitivity report written to {}\n", out.display()))
        }
        None => Ok(text),
    }
}

pub fn export_tree(cfg: &RunConfig) -> Result<String, CliError> {
    let Surrogate::Tree(tree) = load_model(cfg)? else {
        return Err(CliError::input("export-tree needs a tree-pce model"));
    };
    let format = match cfg.raw("format").unwrap_or("dot") {
        "dot" => ExportFormat::Dot,
        "json" => ExportFormat::Json,
        other => {
            return Err(CliError::input(format!(
                "unknown format {other:?}; expected json or dot"
            )))
        }
    };
    let text = export(&tree, format)?;
    match cfg.path("out") {
        Some(out) => {
            write(&out, &text)?;
            Ok(format!("tree written to {}\n", out.display()))
        }
        None => Ok(text),
    }
}
