//! Command-line front end for fitting, evaluating and analysing surrogates.
//!
//! Exit codes: 0 success, 2 input error, 3 infeasible fit, 4 analytic
//! budget exceeded, 5 point outside the model domain.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod benchmark;
pub mod commands;
pub mod config;
pub mod surrogate;

pub use config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Input = 2,
    Fit = 3,
    Budget = 4,
    Domain = 5,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Input,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl From<treepce::Error> for CliError {
    fn from(e: treepce::Error) -> Self {
        use treepce::Error as E;
        let kind = match &e {
            E::InvalidInput(_)
            | E::DimensionMismatch { .. }
            | E::Csv { .. }
            | E::Serialization(_)
            | E::Io(_) => ExitKind::Input,
            E::BudgetExceeded { .. } => ExitKind::Budget,
            E::OutOfDomain { .. } => ExitKind::Domain,
            _ => ExitKind::Fit,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "treepce",
    version,
    about = "Tree-structured polynomial chaos surrogates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a surrogate to a CSV dataset.
    Fit(Opts),
    /// Evaluate a fitted model on a CSV of inputs.
    Predict(Opts),
    /// Sobol' and tree indices of a fitted model.
    Sensitivity(Opts),
    /// Run a method sweep on an analytical test function.
    Benchmark {
        /// step | diagonal2d | multid | gated-quadratic
        name: String,
        #[command(flatten)]
        opts: Opts,
    },
    /// Write a fitted tree as JSON or Graphviz DOT.
    ExportTree(Opts),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// Flat key = value file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub format: Option<String>,
    /// lo:hi per input, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub p_loc: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_classes: Option<usize>,
    #[arg(long)]
    pub mesh_points: Option<usize>,
    #[arg(long)]
    pub n_min: Option<usize>,
    #[arg(long)]
    pub sparse: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_mc: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Any other configuration key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Opts {
    /// Config file entries overlaid by explicit flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let base = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::input(format!("cannot read config {}: {e}", p.display()))
                })?;
                RunConfig::parse_file(&text)?
            }
            None => RunConfig::default(),
        };
        let mut flags = RunConfig::default();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let pairs: [(&str, Option<String>); 15] = [
            ("data", path(&self.data)),
            ("model", path(&self.model)),
            ("out", path(&self.out)),
            ("method", self.method.clone()),
            ("format", self.format.clone()),
            ("bounds", self.bounds.clone()),
            ("degree", self.degree.map(|v| v.to_string())),
            ("p-loc", self.p_loc.map(|v| v.to_string())),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            ("max-classes", self.max_classes.map(|v| v.to_string())),
            ("mesh-points", self.mesh_points.map(|v| v.to_string())),
            ("n-min", self.n_min.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("n-mc", self.n_mc.map(|v| v.to_string())),
            ("train-frac", self.train_frac.map(|v| v.to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                flags.set(k, &v)?;
            }
        }
        if self.sparse {
            flags.set("sparse", "true")?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::input(format!("--set expects key=value, got {kv:?}")))?;
            flags.set(k, v.trim())?;
        }
        Ok(base.overlay(&flags))
    }
}

/// Runs one command; the returned string is the message for stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Fit(o) => commands::fit(&o.resolve()?),
        Command::Predict(o) => commands::predict(&o.resolve()?),
        Command::Sensitivity(o) => commands::sensitivity(&o.resolve()?),
        Command::Benchmark { name, opts } => benchmark::run(name, &opts.resolve()?),
        Command::ExportTree(o) => commands::export_tree(&o.resolve()?),
    }
}

/// Entry point shared by the binary and the tests.
pub fn main_with_args<I, T>(args: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return if e.use_stderr() {
                (2, String::new(), e.to_string())
            } else {
                (0, e.to_string(), String::new())
            };
        }
    };
    match run(&cli) {
        Ok(out) => (0, out, String::new()),
        Err(e) => (e.code(), String::new(), format!("error: {}\n", e.message)),
    }
}
