//! Run configuration: a flat `key = value` file overlaid by command-line
//! flags.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::CliError;

/// Every key the configuration understands, with a one-line meaning.
pub const KEYS: &[(&str, &str)] = &[
    ("data", "dataset CSV (fit) or input CSV (predict)"),
    ("model", "fitted model file"),
    ("out", "output file, or output directory for benchmark"),
    (
        "method",
        "fit: pce | sparse-pce | tree-pce | sse; sensitivity: analytic | pick-freeze",
    ),
    (
        "format",
        "csv | json (sensitivity), json | dot (export-tree)",
    ),
    (
        "bounds",
        "input box as lo:hi per input, comma separated; default unit cube",
    ),
    ("degree", "total degree of a global expansion"),
    ("p-loc", "local degree of tree leaves and SSE nodes"),
    ("epsilon", "relative TSE improvement required for a split"),
    ("max-classes", "maximum number of leaves"),
    ("max-height", "maximum depth of a splittable node"),
    ("mesh-points", "interior thresholds per input, at k/(m+1)"),
    ("n-min", "minimum samples per rectangle"),
    ("sparse", "use sparse local expansions"),
    ("seed", "random seed"),
    ("n-mc", "Monte Carlo sample size for pick-freeze"),
    (
        "budget",
        "maximum number of coefficient products in analytic tree indices",
    ),
    ("train-frac", "training share of the benchmark sample"),
    (
        "samples",
        "benchmark sample size, training and test together",
    ),
    ("dim", "benchmark dimension"),
    ("k", "benchmark oscillation frequency"),
    ("c", "benchmark jump height"),
    ("degrees", "benchmark: global degrees, comma separated"),
    ("p-locs", "benchmark: local degrees, comma separated"),
    ("classes", "benchmark: class counts, comma separated"),
    ("epsilons", "benchmark: epsilon sweep, comma separated"),
    (
        "trajectory-classes",
        "benchmark: class count of the trajectory run",
    ),
    (
        "methods",
        "benchmark: subset of pce,sparse-pce,sse,tree-pce,sparse-tree-pce",
    ),
];

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_file(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::input(format!(
                    "config line {}: expected key = value, found {raw:?}",
                    n + 1
                ))
            })?;
            cfg.set(k, v.trim())
                .map_err(|e| CliError::input(format!("config line {}: {}", n + 1, e.message)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = normalize(key);
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(CliError::input(format!(
                "unknown configuration key {key:?}"
            )));
        }
        self.values.insert(key, value.to_string());
        Ok(())
    }

    /// Values of `other` win.
    pub fn overlay(mut self, other: &RunConfig) -> Self {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
        self
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(s) => s
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::input(format!("cannot parse {key} = {s:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)?
            .ok_or_else(|| CliError::input(format!("missing required setting {key}")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key) {
            None => Ok(false),
            Some(s) => match s.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" => Ok(false),
                _ => Err(CliError::input(format!(
                    "cannot parse {key} = {s:?} as a boolean"
                ))),
            },
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(s) => s
                .split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(|p| {
                    p.parse::<T>().map_err(|_| {
                        CliError::input(format!("cannot parse element {p:?} of {key}"))
                    })
                })
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }

    /// `lo:hi` pairs, one per input.
    pub fn bounds(&self) -> Result<Option<Vec<(f64, f64)>>, CliError> {
        let Some(s) = self.raw("bounds") else {
            return Ok(None);
        };
        s.split(',')
            .map(|p| {
                let (a, b) = p
                    .split_once(':')
                    .ok_or_else(|| CliError::input(format!("bounds entry {p:?} is not lo:hi")))?;
                let lo = a.trim().parse::<f64>();
                let hi = b.trim().parse::<f64>();
                match (lo, hi) {
                    (Ok(lo), Ok(hi)) => Ok((lo, hi)),
                    _ => Err(CliError::input(format!(
                        "bounds entry {p:?} is not numeric"
                    ))),
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}
