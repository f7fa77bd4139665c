//! Multilevel residual expansions on median-split rectangles.
//!
//! The root carries an expansion of the data; every refined rectangle is cut
//! at the sample median of one input and each half gets an expansion of the
//! residual left by all coarser levels. Predictions sum the contributions of
//! every rectangle on the path from the root to the terminal cell.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{InputSpace, MarginalRecord, Region, SampleSet};
use crate::error::{Error, Result};
use crate::orthobasis::{binomial, enumerate_linear, MultiIndexSet};
use crate::pce::{fit_rows, FitMethod, PceModel, SparseConfig};
use crate::tree::{JsonLeaf, JsonNode};

const GAIN_FLOOR: f64 = 1e-12;
const EXACT_FIT: f64 = 1e-24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseConfig {
    pub p_loc: usize,
    pub max_classes: usize,
    #[serde(default)]
    pub n_min: Option<usize>,
    #[serde(default)]
    pub sparse: bool,
    #[serde(default)]
    pub sparse_config: SparseConfig,
}

impl SseConfig {
    pub fn new(p_loc: usize, max_classes: usize) -> Self {
        Self {
            p_loc,
            max_classes,
            n_min: None,
            sparse: false,
            sparse_config: SparseConfig::default(),
        }
    }

    pub fn with_sparse(mut self, sparse: bool) -> Self {
        self.sparse = sparse;
        self
    }

    pub fn with_n_min(mut self, n_min: usize) -> Self {
        self.n_min = Some(n_min);
        self
    }

    pub fn n_min_for(&self, d: usize) -> usize {
        self.n_min
            .unwrap_or_else(|| (3 * binomial(self.p_loc + d, self.p_loc)) as usize)
    }

    fn fit_method(&self) -> FitMethod {
        if self.sparse {
            FitMethod::Sparse(self.sparse_config)
        } else {
            FitMethod::LeastSquares
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseSplit {
    pub dim: usize,
    pub value: f64,
    pub left: usize,
    pub right: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SseNode {
    pub region: Region,
    pub level: usize,
    pub parent: Option<usize>,
    /// Expansion of the residual of all coarser levels on `region`.
    pub model: PceModel,
    pub split: Option<SseSplit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SseModel {
    domain: Region,
    marginals: Vec<MarginalRecord>,
    config: SseConfig,
    nodes: Vec<SseNode>,
    tse0: f64,
}

struct Candidate {
    node: usize,
    dim: usize,
    value: f64,
    rows: (Vec<usize>, Vec<usize>),
    models: (PceModel, PceModel),
    gain: f64,
}

/// Fits the multilevel model; `max_classes` bounds the number of terminal
/// rectangles.
pub fn fit_sse(
    data: &SampleSet,
    space: &InputSpace,
    p_loc: usize,
    max_classes: usize,
    sparse: bool,
) -> Result<SseModel> {
    fit_sse_with(
        data,
        space,
        &SseConfig::new(p_loc, max_classes).with_sparse(sparse),
    )
}

pub fn fit_sse_with(data: &SampleSet, space: &InputSpace, config: &SseConfig) -> Result<SseModel> {
    let d = space.dim();
    if data.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: data.dim(),
        });
    }
    if config.max_classes == 0 {
        return Err(Error::InvalidInput("max_classes must be at least 1".into()));
    }
    data.check_in_space(space)?;
    let n_min = config.n_min_for(d);
    if data.len() < n_min {
        return Err(Error::InsufficientSamples {
            available: data.len(),
            required: n_min,
        });
    }
    let indices = enumerate_linear(d, config.p_loc);
    let method = config.fit_method();
    let domain = space.support();
    let all: Vec<usize> = (0..data.len()).collect();
    let root = fit_rows(data, &all, space, &domain, &indices, method)?;
    let tse0 = root.training_tse();
    let mut residual: Vec<f64> = all
        .iter()
        .map(|&k| data.output(k) - root.predict(data.row(k)))
        .collect();
    let energy: f64 = data.outputs().iter().map(|y| y * y).sum();
    let floor = GAIN_FLOOR * tse0 + EXACT_FIT * energy;
    let child_min = n_min.max(match method {
        FitMethod::LeastSquares => indices.len(),
        FitMethod::Sparse(_) => 2,
    });

    let mut nodes = vec![SseNode {
        region: domain.clone(),
        level: 0,
        parent: None,
        model: root,
        split: None,
    }];
    let ctx = Ctx {
        data,
        space,
        indices: &indices,
        method,
        child_min,
    };
    let mut open: Vec<Candidate> = Vec::new();
    open.extend(ctx.candidate(0, &nodes[0].region, &all, &residual));
    let mut leaves = 1;
    while leaves < config.max_classes {
        let Some(best) = pick(&open) else { break };
        if !(open[best].gain > floor) {
            break;
        }
        let c = open.swap_remove(best);
        let level = nodes[c.node].level + 1;
        let parent_region = nodes[c.node].region.clone();
        let (lo, hi) = parent_region.interval(c.dim);
        let left_region = parent_region.with_interval(c.dim, lo, c.value);
        let right_region = parent_region.with_interval(c.dim, c.value, hi);
        let (left_id, right_id) = (nodes.len(), nodes.len() + 1);
        for (rows, model) in [(&c.rows.0, &c.models.0), (&c.rows.1, &c.models.1)] {
            for &k in rows {
                residual[k] -= model.predict(data.row(k));
            }
        }
        nodes.push(SseNode {
            region: left_region.clone(),
            level,
            parent: Some(c.node),
            model: c.models.0,
            split: None,
        });
        nodes.push(SseNode {
            region: right_region.clone(),
            level,
            parent: Some(c.node),
            model: c.models.1,
            split: None,
        });
        nodes[c.node].split = Some(SseSplit {
            dim: c.dim,
            value: c.value,
            left: left_id,
            right: right_id,
            gain: c.gain,
        });
        leaves += 1;
        open.extend(ctx.candidate(left_id, &left_region, &c.rows.0, &residual));
        open.extend(ctx.candidate(right_id, &right_region, &c.rows.1, &residual));
    }
    Ok(SseModel {
        domain,
        marginals: space.records(),
        config: config.clone(),
        nodes,
        tse0,
    })
}

fn pick(open: &[Candidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, c) in open.iter().enumerate() {
        match best {
            None => best = Some(k),
            Some(b) => {
                let o = &open[b];
                if c.gain > o.gain || (c.gain == o.gain && c.node < o.node) {
                    best = Some(k);
                }
            }
        }
    }
    best
}

struct Ctx<'a> {
    data: &'a SampleSet,
    space: &'a InputSpace,
    indices: &'a MultiIndexSet,
    method: FitMethod,
    child_min: usize,
}

impl Ctx<'_> {
    /// Best median split of a node, fitted on the node's current residuals.
    fn candidate(
        &self,
        node: usize,
        region: &Region,
        rows: &[usize],
        residual: &[f64],
    ) -> Option<Candidate> {
        if rows.len() < 2 * self.child_min {
            return None;
        }
        let d = region.dim();
        let local = SampleSet::new(
            d,
            rows.iter()
                .flat_map(|&k| self.data.row(k).iter().copied())
                .collect(),
            rows.iter().map(|&k| residual[k]).collect(),
        )
        .ok()?;
        let base: f64 = local.outputs().iter().map(|r| r * r).sum();
        let per_dim: Vec<Option<Candidate>> = (0..d)
            .into_par_iter()
            .map(|i| {
                let value = median(rows.iter().map(|&k| self.data.row(k)[i]).collect());
                let (lo, hi) = region.interval(i);
                if !(value > lo && value < hi) {
                    return None;
                }
                let (mut l, mut r) = (Vec::new(), Vec::new());
                for (pos, &k) in rows.iter().enumerate() {
                    if self.data.row(k)[i] < value {
                        l.push(pos);
                    } else {
                        r.push(pos);
                    }
                }
                if l.len() < self.child_min || r.len() < self.child_min {
                    return None;
                }
                let lm = fit_rows(
                    &local,
                    &l,
                    self.space,
                    &region.with_interval(i, lo, value),
                    self.indices,
                    self.method,
                )
                .ok()?;
                let rm = fit_rows(
                    &local,
                    &r,
                    self.space,
                    &region.with_interval(i, value, hi),
                    self.indices,
                    self.method,
                )
                .ok()?;
                let gain = base - lm.training_tse() - rm.training_tse();
                let back = |v: Vec<usize>| v.into_iter().map(|p| rows[p]).collect::<Vec<_>>();
                Some(Candidate {
                    node,
                    dim: i,
                    value,
                    rows: (back(l), back(r)),
                    models: (lm, rm),
                    gain,
                })
            })
            .collect();
        let mut best: Option<Candidate> = None;
        for c in per_dim.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        best
    }
}

/// Middle order statistic, or the midpoint of the two middle ones.
pub fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl SseModel {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &Region {
        &self.domain
    }

    pub fn marginals(&self) -> &[MarginalRecord] {
        &self.marginals
    }

    pub fn config(&self) -> &SseConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[SseNode] {
        &self.nodes
    }

    pub fn tse0(&self) -> f64 {
        self.tse0
    }

    pub fn levels(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0) + 1
    }

    /// Terminal rectangles.
    pub fn leaves(&self) -> impl Iterator<Item = &SseNode> {
        self.nodes.iter().filter(|n| n.split.is_none())
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    /// Residual TSE of the finest level, summed over terminal rectangles.
    pub fn training_tse(&self) -> f64 {
        self.leaves().map(|n| n.model.training_tse()).sum()
    }

    pub fn coefficient_count(&self) -> usize {
        self.nodes.iter().map(|n| n.model.coefficient_count()).sum()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.domain.contains(x) {
            return Err(Error::OutOfDomain { point: x.to_vec() });
        }
        Ok(self.predict_unchecked(x))
    }

    /// Sum along the root-to-cell path.
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        let mut sum = 0.0;
        loop {
            let node = &self.nodes[k];
            sum += node.model.predict(x);
            match &node.split {
                Some(s) => k = if x[s.dim] < s.value { s.left } else { s.right },
                None => return sum,
            }
        }
    }

    /// Sum over every node whose rectangle holds `x`, levels in order.
    pub fn predict_flattened(&self, x: &[f64]) -> f64 {
        let mut terms: Vec<(usize, f64)> = self
            .nodes
            .iter()
            .filter(|n| self.holds(&n.region, x))
            .map(|n| (n.level, n.model.predict(x)))
            .collect();
        terms.sort_by_key(|t| t.0);
        terms.iter().map(|t| t.1).sum()
    }

    fn holds(&self, region: &Region, x: &[f64]) -> bool {
        (0..self.dim()).all(|i| {
            let (lo, hi) = region.interval(i);
            x[i] >= lo && (x[i] < hi || (x[i] == hi && hi == self.domain.upper[i]))
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = SseDocument {
            kind: "sse".into(),
            dim: self.dim(),
            marginals: self.marginals.clone(),
            domain: self.domain.clone(),
            config: self.config.clone(),
            tse0: self.tse0,
            root: self.json_node(0),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Serialization(e.to_string()))
    }

    fn json_node(&self, k: usize) -> JsonNode {
        let n = &self.nodes[k];
        JsonNode {
            split_dim: n.split.as_ref().map(|s| s.dim),
            split_index: None,
            split_value: n.split.as_ref().map(|s| s.value),
            children: n
                .split
                .as_ref()
                .map(|s| vec![self.json_node(s.left), self.json_node(s.right)]),
            leaf: Some(JsonLeaf::from_pce(&n.model)),
            level: Some(n.level),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SseDocument =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if doc.kind != "sse" {
            return Err(Error::Serialization(format!(
                "expected an sse document, found {:?}",
                doc.kind
            )));
        }
        let mut nodes = Vec::new();
        push_json(&doc.root, None, 0, &mut nodes)?;
        Ok(Self {
            domain: doc.domain,
            marginals: doc.marginals,
            config: doc.config,
            nodes,
            tse0: doc.tse0,
        })
    }
}

fn push_json(
    j: &JsonNode,
    parent: Option<usize>,
    level: usize,
    nodes: &mut Vec<SseNode>,
) -> Result<usize> {
    let leaf = j
        .leaf
        .as_ref()
        .ok_or_else(|| Error::Serialization("sse node without an expansion".into()))?;
    let model = leaf.to_pce()?;
    let id = nodes.len();
    nodes.push(SseNode {
        region: model.region().clone(),
        level: j.level.unwrap_or(level),
        parent,
        model,
        split: None,
    });
    match (&j.children, j.split_dim, j.split_value) {
        (Some(ch), Some(dim), Some(value)) if ch.len() == 2 => {
            let left = push_json(&ch[0], Some(id), level + 1, nodes)?;
            let right = push_json(&ch[1], Some(id), level + 1, nodes)?;
            nodes[id].split = Some(SseSplit {
                dim,
                value,
                left,
                right,
                gain: f64::NAN,
            });
        }
        (None, _, _) => {}
        _ => return Err(Error::Serialization("malformed sse split".into())),
    }
    Ok(id)
}

#[derive(Serialize, Deserialize)]
struct SseDocument {
    kind: String,
    dim: usize,
    marginals: Vec<MarginalRecord>,
    domain: Region,
    config: SseConfig,
    tse0: f64,
    root: JsonNode,
}

pub fn coefficient_count_sse(model: &SseModel) -> usize {
    model.coefficient_count()
}
