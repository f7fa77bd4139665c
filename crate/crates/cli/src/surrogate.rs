//! Fitted models as stored on disk.

use serde::{Deserialize, Serialize};
use treepce::pce::PceModel;
use treepce::sse::SseModel;
use treepce::tree::TreePceModel;
use treepce::{InputSpace, MarginalRecord, Region};

use crate::CliError;

#[derive(Serialize, Deserialize)]
struct PceDocument {
    kind: String,
    marginals: Vec<MarginalRecord>,
    model: PceModel,
}

#[derive(Deserialize)]
struct Kind {
    kind: String,
}

#[derive(Debug, Clone)]
pub enum Surrogate {
    Pce {
        model: PceModel,
        marginals: Vec<MarginalRecord>,
    },
    Tree(TreePceModel),
    Sse(SseModel),
}

impl Surrogate {
    pub fn kind(&self) -> &'static str {
        match self {
            Surrogate::Pce { model, .. } if model.is_sparse() => "sparse-pce",
            Surrogate::Pce { .. } => "pce",
            Surrogate::Tree(_) => "tree-pce",
            Surrogate::Sse(_) => "sse",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Surrogate::Pce { model, .. } => model.dim(),
            Surrogate::Tree(t) => t.dim(),
            Surrogate::Sse(s) => s.dim(),
        }
    }

    pub fn domain(&self) -> &Region {
        match self {
            Surrogate::Pce { model, .. } => model.region(),
            Surrogate::Tree(t) => t.domain(),
            Surrogate::Sse(s) => s.domain(),
        }
    }

    pub fn input_space(&self) -> Result<InputSpace, CliError> {
        let records = match self {
            Surrogate::Pce { marginals, .. } => marginals.as_slice(),
            Surrogate::Tree(t) => t.marginals(),
            Surrogate::Sse(s) => s.marginals(),
        };
        Ok(InputSpace::from_records(records)?)
    }

    /// No domain check; callers validate first.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Surrogate::Pce { model, .. } => model.predict(x),
            Surrogate::Tree(t) => t.predict_unchecked(x),
            Surrogate::Sse(s) => s.predict_unchecked(x),
        }
    }

    pub fn coefficient_count(&self) -> usize {
        match self {
            Surrogate::Pce { model, .. } => model.coefficient_count(),
            Surrogate::Tree(t) => t.coefficient_count(),
            Surrogate::Sse(s) => s.coefficient_count(),
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(match self {
            Surrogate::Pce { model, marginals } => serde_json::to_string_pretty(&PceDocument {
                kind: self.kind().into(),
                marginals: marginals.clone(),
                model: model.clone(),
            })
            .map_err(|e| CliError::input(e.to_string()))?,
            Surrogate::Tree(t) => t.to_json()?,
            Surrogate::Sse(s) => s.to_json()?,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let kind: Kind = serde_json::from_str(text)
            .map_err(|e| CliError::input(format!("model file is not a model document: {e}")))?;
        match kind.kind.as_str() {
            "pce" | "sparse-pce" => {
                let doc: PceDocument =
                    serde_json::from_str(text).map_err(|e| CliError::input(e.to_string()))?;
                Ok(Surrogate::Pce {
                    model: doc.model,
                    marginals: doc.marginals,
                })
            }
            "tree-pce" => Ok(Surrogate::Tree(TreePceModel::from_json(text)?)),
            "sse" => Ok(Surrogate::Sse(SseModel::from_json(text)?)),
            other => Err(CliError::input(format!("unknown model kind {other:?}"))),
        }
    }
}
