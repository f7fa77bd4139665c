//! Recursive TSE-driven partitioning with local expansions on every leaf.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{InputSpace, MarginalRecord, Rectangle, Region, SampleSet, ThresholdMesh};
use crate::error::{Error, Result};
use crate::orthobasis::{binomial, enumerate_linear, MultiIndex, MultiIndexSet, UnivariateBasis};
use crate::pce::{fit_rows, FitMethod, PceModel, SparseConfig};

/// Relative tolerance under which two summed child TSEs count as tied.
const TIE_TOL: f64 = 1e-12;

/// Gains below this fraction of the root TSE are round-off, not signal.
const GAIN_FLOOR: f64 = 1e-12;
const EXACT_FIT: f64 = 1e-24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreePceConfig {
    pub mesh: ThresholdMesh,
    pub p_loc: usize,
    /// Defaults to `3 * C(p_loc + d, p_loc)` when unset.
    pub n_min: Option<usize>,
    pub epsilon: f64,
    pub max_classes: Option<usize>,
    pub max_height: Option<usize>,
    pub sparse: bool,
    #[serde(default)]
    pub sparse_config: SparseConfig,
}

impl TreePceConfig {
    pub fn new(mesh: ThresholdMesh, p_loc: usize) -> Self {
        Self {
            mesh,
            p_loc,
            n_min: None,
            epsilon: 0.0,
            max_classes: None,
            max_height: None,
            sparse: false,
            sparse_config: SparseConfig::default(),
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_classes(mut self, classes: usize) -> Self {
        self.max_classes = Some(classes);
        self
    }

    pub fn with_max_height(mut self, height: usize) -> Self {
        self.max_height = Some(height);
        self
    }

    pub fn with_n_min(mut self, n_min: usize) -> Self {
        self.n_min = Some(n_min);
        self
    }

    pub fn with_sparse(mut self, sparse: bool) -> Self {
        self.sparse = sparse;
        self
    }

    pub fn with_sparse_config(mut self, config: SparseConfig) -> Self {
        self.sparse_config = config;
        self
    }

    pub fn n_min_for(&self, d: usize) -> usize {
        self.n_min
            .unwrap_or_else(|| (3 * binomial(self.p_loc + d, self.p_loc)) as usize)
    }

    pub fn fit_method(&self) -> FitMethod {
        if self.sparse {
            FitMethod::Sparse(self.sparse_config)
        } else {
            FitMethod::LeastSquares
        }
    }

    fn validate(&self, space: &InputSpace) -> Result<()> {
        if self.mesh.dim() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: self.mesh.dim(),
            });
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidInput("epsilon must be nonnegative".into()));
        }
        if self.n_min == Some(0) {
            return Err(Error::InvalidInput("n_min must be at least 1".into()));
        }
        if self.max_classes == Some(0) {
            return Err(Error::InvalidInput("max_classes must be at least 1".into()));
        }
        for i in 0..space.dim() {
            let axis = self.mesh.axis(i);
            let m = space.marginal(i);
            if axis[0] != m.lower() || axis[axis.len() - 1] != m.upper() {
                return Err(Error::InvalidInput(format!(
                    "mesh bounds in dimension {} differ from the input support",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Why a rectangle cannot be split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IneligibleReason {
    InsufficientSamples { available: usize, required: usize },
    NoSplittableDirection,
    AllCandidatesSkipped,
    MaxHeight,
}

impl std::fmt::Display for IneligibleReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IneligibleReason::InsufficientSamples {
                available,
                required,
            } => {
                write!(f, "insufficient samples ({available} < {required})")
            }
            IneligibleReason::NoSplittableDirection => f.write_str("no splittable direction"),
            IneligibleReason::AllCandidatesSkipped => {
                f.write_str("all candidate thresholds skipped")
            }
            IneligibleReason::MaxHeight => f.write_str("maximum height reached"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitCandidate {
    pub parent: Rectangle,
    pub dim: usize,
    pub mesh_index: usize,
    pub threshold: f64,
    pub left: Rectangle,
    pub right: Rectangle,
    pub left_model: PceModel,
    pub right_model: PceModel,
    pub parent_tse: f64,
    pub children_tse: (f64, f64),
    pub delta_tse: f64,
}

#[derive(Debug, Clone)]
pub enum SplitOutcome {
    Candidate(Box<SplitCandidate>),
    Ineligible(IneligibleReason),
}

impl SplitOutcome {
    pub fn candidate(&self) -> Option<&SplitCandidate> {
        match self {
            SplitOutcome::Candidate(c) => Some(c),
            SplitOutcome::Ineligible(_) => None,
        }
    }

    pub fn delta_tse(&self) -> f64 {
        self.candidate().map_or(0.0, |c| c.delta_tse)
    }
}

/// Best split of `rect` over every direction and interior threshold.
pub fn try_split(
    data: &SampleSet,
    space: &InputSpace,
    rect: &Rectangle,
    parent_model: &PceModel,
    config: &TreePceConfig,
) -> SplitOutcome {
    let region = config.mesh.region(rect);
    let rows = data.indices_in(&region);
    try_split_rows(data, &rows, space, rect, parent_model, config)
}

type Evaluated = (usize, usize, f64, PceModel, PceModel);

fn try_split_rows(
    data: &SampleSet,
    rows: &[usize],
    space: &InputSpace,
    rect: &Rectangle,
    parent_model: &PceModel,
    config: &TreePceConfig,
) -> SplitOutcome {
    let d = space.dim();
    let n_min = config.n_min_for(d);
    if rows.len() < n_min {
        return SplitOutcome::Ineligible(IneligibleReason::InsufficientSamples {
            available: rows.len(),
            required: n_min,
        });
    }
    let pairs: Vec<(usize, usize)> = (0..d)
        .filter(|&i| rect.is_splittable_along(i))
        .flat_map(|i| rect.split_indices(i).map(move |j| (i, j)))
        .collect();
    if pairs.is_empty() {
        return SplitOutcome::Ineligible(IneligibleReason::NoSplittableDirection);
    }
    let indices = enumerate_linear(d, config.p_loc);
    let method = config.fit_method();
    let evaluated: Vec<Evaluated> = pairs
        .par_iter()
        .filter_map(|&(i, j)| {
            let t = config.mesh.value(i, j);
            let (lr, rr) = rect.split(i, j);
            let left_rows: Vec<usize> = rows
                .iter()
                .copied()
                .filter(|&k| data.row(k)[i] <= t)
                .collect();
            let right_rows: Vec<usize> = rows
                .iter()
                .copied()
                .filter(|&k| data.row(k)[i] >= t)
                .collect();
            let needed = if method.is_sparse() {
                n_min.max(2)
            } else {
                n_min.max(indices.len())
            };
            if left_rows.len() < needed || right_rows.len() < needed {
                return None;
            }
            let lreg = config.mesh.region(&lr);
            let rreg = config.mesh.region(&rr);
            let lm = fit_rows(data, &left_rows, space, &lreg, &indices, method).ok()?;
            let rm = fit_rows(data, &right_rows, space, &rreg, &indices, method).ok()?;
            let sum = lm.training_tse() + rm.training_tse();
            Some((i, j, sum, lm.with_cell(lr), rm.with_cell(rr)))
        })
        .collect();
    match select_best(&evaluated) {
        None => SplitOutcome::Ineligible(IneligibleReason::AllCandidatesSkipped),
        Some(best) => {
            let (i, j, _, lm, rm) = evaluated[best].clone();
            let (left, right) = rect.split(i, j);
            let parent_tse = parent_model.training_tse();
            let children_tse = (lm.training_tse(), rm.training_tse());
            SplitOutcome::Candidate(Box::new(SplitCandidate {
                parent: rect.clone(),
                dim: i,
                mesh_index: j,
                threshold: config.mesh.value(i, j),
                left,
                right,
                left_model: lm,
                right_model: rm,
                parent_tse,
                children_tse,
                delta_tse: parent_tse - (children_tse.0 + children_tse.1),
            }))
        }
    }
}

/// Smallest summed TSE; near-ties resolved towards the lower (dim, index).
fn select_best(evaluated: &[Evaluated]) -> Option<usize> {
    let min = evaluated.iter().map(|e| e.2).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    evaluated
        .iter()
        .enumerate()
        .filter(|(_, e)| e.2 <= min + TIE_TOL * min.abs())
        .min_by_key(|(_, e)| (e.0, e.1))
        .map(|(k, _)| k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub step: usize,
    pub dim: usize,
    pub mesh_index: usize,
    pub threshold: f64,
    pub delta_tse: f64,
    pub tse_glob: f64,
    /// Largest gain left in the priority list when this split was committed.
    pub runner_up_delta: f64,
}

/// Why the refinement loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoGain,
    Epsilon,
    MaxClasses,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Leaf {
        model: PceModel,
    },
    Internal {
        dim: usize,
        mesh_index: usize,
        threshold: f64,
        /// Child holding `x_dim < threshold`.
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub rect: Rectangle,
    pub region: Region,
    pub depth: usize,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreePceModel {
    domain: Region,
    marginals: Vec<MarginalRecord>,
    config: TreePceConfig,
    nodes: Vec<TreeNode>,
    tse0: f64,
    history: Vec<SplitRecord>,
    stop: StopReason,
}

struct Entry {
    node: usize,
    outcome: SplitOutcome,
    seq: usize,
}

impl Entry {
    fn key(&self) -> (f64, usize, usize) {
        match &self.outcome {
            SplitOutcome::Candidate(c) => (c.delta_tse, c.dim, c.mesh_index),
            SplitOutcome::Ineligible(_) => (0.0, usize::MAX, usize::MAX),
        }
    }

    fn precedes(&self, other: &Entry) -> Ordering {
        let (da, ia, ja) = self.key();
        let (db, ib, jb) = other.key();
        db.total_cmp(&da)
            .then(ia.cmp(&ib))
            .then(ja.cmp(&jb))
            .then(self.seq.cmp(&other.seq))
    }
}

/// Fits a tree: root expansion first, then repeated commits of the split
/// with the largest TSE gain.
pub fn fit_tree(
    data: &SampleSet,
    space: &InputSpace,
    config: &TreePceConfig,
) -> Result<TreePceModel> {
    config.validate(space)?;
    if data.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: data.dim(),
        });
    }
    data.check_in_space(space)?;
    let d = space.dim();
    let n_min = config.n_min_for(d);
    if data.len() < n_min {
        return Err(Error::InsufficientSamples {
            available: data.len(),
            required: n_min,
        });
    }
    let root_rect = config.mesh.full_rectangle();
    let root_region = config.mesh.region(&root_rect);
    let rows: Vec<usize> = (0..data.len()).collect();
    let indices = enumerate_linear(d, config.p_loc);
    let root_model = fit_rows(
        data,
        &rows,
        space,
        &root_region,
        &indices,
        config.fit_method(),
    )?
    .with_cell(root_rect.clone());
    let tse0 = root_model.training_tse();
    // gains below round-off of the output scale never count as progress
    let energy: f64 = data.outputs().iter().map(|y| y * y).sum();
    let gain_floor = GAIN_FLOOR * tse0 + EXACT_FIT * energy;

    let mut nodes = vec![TreeNode {
        rect: root_rect.clone(),
        region: root_region,
        depth: 0,
        kind: NodeKind::Leaf {
            model: root_model.clone(),
        },
    }];
    let mut node_rows: Vec<Vec<usize>> = vec![Vec::new()];
    let mut seq = 0usize;
    let mut queue: Vec<Entry> = Vec::new();
    let first = prepare(data, &rows, space, &root_rect, &root_model, 0, config);
    node_rows[0] = rows;
    insert(
        &mut queue,
        Entry {
            node: 0,
            outcome: first,
            seq,
        },
    );
    seq += 1;

    let mut tse_glob = tse0;
    let mut history = Vec::new();
    let stop;
    loop {
        let leaves = history.len() + 1;
        if queue.is_empty() {
            stop = StopReason::Exhausted;
            break;
        }
        let delta = queue[0].outcome.delta_tse();
        if !(delta > gain_floor) {
            stop = StopReason::NoGain;
            break;
        }
        if !((1.0 + config.epsilon) * (tse_glob - delta) < tse_glob) {
            stop = StopReason::Epsilon;
            break;
        }
        if config.max_classes.is_some_and(|m| leaves >= m) {
            stop = StopReason::MaxClasses;
            break;
        }
        let head = queue.remove(0);
        let runner_up = queue.first().map_or(0.0, |e| e.outcome.delta_tse());
        let SplitOutcome::Candidate(cand) = head.outcome else {
            unreachable!("ineligible entries carry no gain")
        };
        let parent = head.node;
        let depth = nodes[parent].depth + 1;
        let parent_rows = std::mem::take(&mut node_rows[parent]);
        let i = cand.dim;
        let t = cand.threshold;
        let left_rows: Vec<usize> = parent_rows
            .iter()
            .copied()
            .filter(|&k| data.row(k)[i] <= t)
            .collect();
        let right_rows: Vec<usize> = parent_rows
            .iter()
            .copied()
            .filter(|&k| data.row(k)[i] >= t)
            .collect();

        let left_id = nodes.len();
        let right_id = left_id + 1;
        for (rect, model, child_rows) in [
            (cand.left.clone(), cand.left_model.clone(), left_rows),
            (cand.right.clone(), cand.right_model.clone(), right_rows),
        ] {
            let id = nodes.len();
            let outcome = prepare(data, &child_rows, space, &rect, &model, depth, config);
            nodes.push(TreeNode {
                region: config.mesh.region(&rect),
                rect,
                depth,
                kind: NodeKind::Leaf { model },
            });
            node_rows.push(child_rows);
            insert(
                &mut queue,
                Entry {
                    node: id,
                    outcome,
                    seq,
                },
            );
            seq += 1;
        }
        nodes[parent].kind = NodeKind::Internal {
            dim: i,
            mesh_index: cand.mesh_index,
            threshold: t,
            left: left_id,
            right: right_id,
        };
        tse_glob -= cand.delta_tse;
        history.push(SplitRecord {
            step: history.len() + 1,
            dim: i,
            mesh_index: cand.mesh_index,
            threshold: t,
            delta_tse: cand.delta_tse,
            tse_glob,
            runner_up_delta: runner_up,
        });
    }

    Ok(TreePceModel {
        domain: space.support(),
        marginals: space.records(),
        config: config.clone(),
        nodes,
        tse0,
        history,
        stop,
    })
}

fn prepare(
    data: &SampleSet,
    rows: &[usize],
    space: &InputSpace,
    rect: &Rectangle,
    model: &PceModel,
    depth: usize,
    config: &TreePceConfig,
) -> SplitOutcome {
    if config.max_height.is_some_and(|h| depth >= h) {
        return SplitOutcome::Ineligible(IneligibleReason::MaxHeight);
    }
    try_split_rows(data, rows, space, rect, model, config)
}

fn insert(queue: &mut Vec<Entry>, entry: Entry) {
    let pos = queue.partition_point(|e| e.precedes(&entry) == Ordering::Less);
    queue.insert(pos, entry);
}

impl TreePceModel {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &Region {
        &self.domain
    }

    pub fn marginals(&self) -> &[MarginalRecord] {
        &self.marginals
    }

    pub fn config(&self) -> &TreePceConfig {
        &self.config
    }

    pub fn mesh(&self) -> &ThresholdMesh {
        &self.config.mesh
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn tse0(&self) -> f64 {
        self.tse0
    }

    pub fn history(&self) -> &[SplitRecord] {
        &self.history
    }

    pub fn stop_reason(&self) -> StopReason {
        self.stop
    }

    /// Global TSE after the last committed step (subtractive bookkeeping).
    pub fn tse_glob(&self) -> f64 {
        self.history.last().map_or(self.tse0, |h| h.tse_glob)
    }

    /// `(node id, node, model)` for every leaf, in node order.
    pub fn leaves(&self) -> impl Iterator<Item = (usize, &TreeNode, &PceModel)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(k, n)| match &n.kind {
                NodeKind::Leaf { model } => Some((k, n, model)),
                NodeKind::Internal { .. } => None,
            })
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    pub fn height(&self) -> usize {
        self.leaves().map(|(_, n, _)| n.depth).max().unwrap_or(0)
    }

    /// Sum of the stored leaf TSEs.
    pub fn leaf_tse_sum(&self) -> f64 {
        self.leaves().map(|(_, _, m)| m.training_tse()).sum()
    }

    /// Leaf reached by descending from the root, with the number of
    /// comparisons made.
    pub fn descend(&self, x: &[f64]) -> (usize, usize) {
        let mut node = 0;
        let mut comparisons = 0;
        while let NodeKind::Internal {
            dim,
            threshold,
            left,
            right,
            ..
        } = &self.nodes[node].kind
        {
            comparisons += 1;
            node = if x[*dim] < *threshold { *left } else { *right };
        }
        (node, comparisons)
    }

    /// Leaf whose box contains `x` under half-open intervals `[lo, hi)`,
    /// closed at the upper domain bound, found by scanning all leaves.
    pub fn scan_leaf(&self, x: &[f64]) -> Option<usize> {
        self.leaves()
            .find(|(_, n, _)| {
                (0..self.dim()).all(|i| {
                    let (lo, hi) = n.region.interval(i);
                    x[i] >= lo && (x[i] < hi || (hi == self.domain.upper[i] && x[i] <= hi))
                })
            })
            .map(|(k, _, _)| k)
    }

    pub fn leaf_model(&self, node: usize) -> &PceModel {
        match &self.nodes[node].kind {
            NodeKind::Leaf { model } => model,
            NodeKind::Internal { .. } => panic!("node {node} is not a leaf"),
        }
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

    /// The tree as it stood after `classes - 1` commits. Nodes that become
    /// leaves again get their expansion refitted from `data`, which must be
    /// the training set.
    pub fn truncated(
        &self,
        data: &SampleSet,
        space: &InputSpace,
        classes: usize,
    ) -> Result<TreePceModel> {
        if classes == 0 {
            return Err(Error::InvalidInput("a tree has at least one class".into()));
        }
        let commits = classes - 1;
        if commits >= self.history.len() {
            return Ok(self.clone());
        }
        let kept = 1 + 2 * commits;
        let indices = enumerate_linear(self.dim(), self.config.p_loc);
        let mut nodes = Vec::with_capacity(kept);
        for node in &self.nodes[..kept] {
            let kind = match &node.kind {
                NodeKind::Internal { left, .. } if *left >= kept => {
                    let rows = data.indices_in(&node.region);
                    let model = fit_rows(
                        data,
                        &rows,
                        space,
                        &node.region,
                        &indices,
                        self.config.fit_method(),
                    )?
                    .with_cell(node.rect.clone());
                    NodeKind::Leaf { model }
                }
                NodeKind::Leaf { model } => {
                    if data.indices_in(&node.region).len() != model.training_count() {
                        return Err(Error::InvalidInput(
                            "data differ from the training set of the tree".into(),
                        ));
                    }
                    node.kind.clone()
                }
                other => other.clone(),
            };
            nodes.push(TreeNode {
                kind,
                ..node.clone()
            });
        }
        let mut config = self.config.clone();
        config.max_classes = Some(classes);
        Ok(TreePceModel {
            domain: self.domain.clone(),
            marginals: self.marginals.clone(),
            config,
            nodes,
            tse0: self.tse0,
            history: self.history[..commits].to_vec(),
            stop: StopReason::MaxClasses,
        })
    }

    /// Prediction without the domain check.
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let (leaf, _) = self.descend(x);
        self.leaf_model(leaf).predict(x)
    }

    pub fn coefficient_count(&self) -> usize {
        self.leaves().map(|(_, _, m)| m.coefficient_count()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = TreeDocument {
            kind: "tree-pce".into(),
            dim: self.dim(),
            marginals: self.marginals.clone(),
            domain: self.domain.clone(),
            config: self.config.clone(),
            tse0: self.tse0,
            stop: self.stop,
            history: self.history.clone(),
            root: self.json_node(0),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Serialization(e.to_string()))
    }

    fn json_node(&self, id: usize) -> JsonNode {
        let node = &self.nodes[id];
        match &node.kind {
            NodeKind::Internal {
                dim,
                mesh_index,
                threshold,
                left,
                right,
            } => JsonNode {
                split_dim: Some(*dim),
                split_index: Some(*mesh_index),
                split_value: Some(*threshold),
                children: Some(vec![self.json_node(*left), self.json_node(*right)]),
                leaf: None,
                level: None,
            },
            NodeKind::Leaf { model } => JsonNode {
                split_dim: None,
                split_index: None,
                split_value: None,
                children: None,
                leaf: Some(JsonLeaf::from_model(&node.rect, &node.region, model)),
                level: None,
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TreeDocument =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if doc.kind != "tree-pce" {
            return Err(Error::Serialization(format!(
                "unexpected document kind {:?}",
                doc.kind
            )));
        }
        let mut nodes = Vec::new();
        push_json_node(&doc.root, 0, &mut nodes)?;
        let model = TreePceModel {
            domain: doc.domain,
            marginals: doc.marginals,
            config: doc.config,
            nodes,
            tse0: doc.tse0,
            history: doc.history,
            stop: doc.stop,
        };
        if model.nodes.iter().any(|n| n.rect.dim() != doc.dim) {
            return Err(Error::Serialization(
                "node dimension differs from tree dimension".into(),
            ));
        }
        Ok(model)
    }

    /// Graphviz description: internal nodes ask "X_i ≥ t", leaves show their
    /// box and TSE.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph tree_pce {\n  node [fontname=\"Helvetica\"];\n");
        for (id, node) in self.nodes.iter().enumerate() {
            match &node.kind {
                NodeKind::Internal {
                    dim,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    let _ = writeln!(
                        out,
                        "  n{id} [shape=box, label=\"X_{} ≥ {}\"];",
                        dim + 1,
                        fmt_num(*threshold)
                    );
                    let _ = writeln!(out, "  n{id} -> n{right} [label=\"Yes\"];");
                    let _ = writeln!(out, "  n{id} -> n{left} [label=\"No\"];");
                }
                NodeKind::Leaf { model } => {
                    let bounds: Vec<String> = (0..self.dim())
                        .map(|i| {
                            let (lo, hi) = node.region.interval(i);
                            format!("[{}, {}]", fmt_num(lo), fmt_num(hi))
                        })
                        .collect();
                    let _ = writeln!(
                        out,
                        "  n{id} [shape=ellipse, label=\"{}\\nTSE = {}\"];",
                        bounds.join(" × "),
                        fmt_num(model.training_tse())
                    );
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn push_json_node(json: &JsonNode, depth: usize, nodes: &mut Vec<TreeNode>) -> Result<usize> {
    let id = nodes.len();
    match (&json.leaf, &json.children) {
        (Some(leaf), None) => {
            let (rect, region, model) = leaf.to_model()?;
            nodes.push(TreeNode {
                rect,
                region,
                depth,
                kind: NodeKind::Leaf { model },
            });
            Ok(id)
        }
        (None, Some(children)) if children.len() == 2 => {
            let (dim, mesh_index, threshold) =
                match (json.split_dim, json.split_index, json.split_value) {
                    (Some(a), Some(b), Some(c)) => (a, b, c),
                    _ => {
                        return Err(Error::Serialization(
                            "internal node without split label".into(),
                        ))
                    }
                };
            // children are pushed after the parent; links are patched below
            nodes.push(TreeNode {
                rect: Rectangle {
                    lo: vec![],
                    hi: vec![],
                },
                region: Region {
                    lower: vec![],
                    upper: vec![],
                },
                depth,
                kind: NodeKind::Internal {
                    dim,
                    mesh_index,
                    threshold,
                    left: 0,
                    right: 0,
                },
            });
            let left = push_json_node(&children[0], depth + 1, nodes)?;
            let right = push_json_node(&children[1], depth + 1, nodes)?;
            let (l, r) = (&nodes[left], &nodes[right]);
            let mut rect = l.rect.clone();
            rect.hi[dim] = r.rect.hi[dim];
            let mut region = l.region.clone();
            region.upper[dim] = r.region.upper[dim];
            nodes[id] = TreeNode {
                rect,
                region,
                depth,
                kind: NodeKind::Internal {
                    dim,
                    mesh_index,
                    threshold,
                    left,
                    right,
                },
            };
            Ok(id)
        }
        _ => Err(Error::Serialization(
            "node must be either a leaf or have two children".into(),
        )),
    }
}

#[derive(Serialize, Deserialize)]
struct TreeDocument {
    kind: String,
    dim: usize,
    marginals: Vec<MarginalRecord>,
    domain: Region,
    config: TreePceConfig,
    tse0: f64,
    stop: StopReason,
    history: Vec<SplitRecord>,
    root: JsonNode,
}

/// Node of the nested JSON layout shared by tree and multilevel models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct JsonNode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub children: Option<Vec<JsonNode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf: Option<JsonLeaf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct JsonLeaf {
    pub rect_lo: Vec<f64>,
    pub rect_hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_lo: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_hi: Option<Vec<usize>>,
    pub indices: Vec<MultiIndex>,
    pub coefficients: Vec<f64>,
    pub tse: f64,
    pub training_count: usize,
    pub scheme: String,
    pub sparse: bool,
    pub rank_deficient: bool,
    pub bases: Vec<UnivariateBasis>,
}

impl JsonLeaf {
    pub(crate) fn from_model(rect: &Rectangle, region: &Region, model: &PceModel) -> Self {
        Self {
            rect_lo: region.lower.clone(),
            rect_hi: region.upper.clone(),
            mesh_lo: Some(rect.lo.clone()),
            mesh_hi: Some(rect.hi.clone()),
            ..Self::from_pce(model)
        }
    }

    pub(crate) fn from_pce(model: &PceModel) -> Self {
        Self {
            rect_lo: model.region().lower.clone(),
            rect_hi: model.region().upper.clone(),
            mesh_lo: None,
            mesh_hi: None,
            indices: model.indices().indices().to_vec(),
            coefficients: model.coefficients().to_vec(),
            tse: model.training_tse(),
            training_count: model.training_count(),
            scheme: model.indices().scheme().to_string(),
            sparse: model.is_sparse(),
            rank_deficient: model.is_rank_deficient(),
            bases: model.bases().to_vec(),
        }
    }

    pub(crate) fn to_pce(&self) -> Result<PceModel> {
        let region = Region::new(self.rect_lo.clone(), self.rect_hi.clone())?;
        let dim = region.dim();
        let set = MultiIndexSet::from_indices(dim, &self.scheme, self.indices.clone())?;
        Ok(
            PceModel::from_parts(region, self.bases.clone(), set, self.coefficients.clone())?
                .with_diagnostics(
                    self.tse,
                    self.training_count,
                    self.rank_deficient,
                    self.sparse,
                ),
        )
    }

    fn to_model(&self) -> Result<(Rectangle, Region, PceModel)> {
        let model = self.to_pce()?;
        let rect = match (&self.mesh_lo, &self.mesh_hi) {
            (Some(lo), Some(hi)) => Rectangle {
                lo: lo.clone(),
                hi: hi.clone(),
            },
            _ => {
                return Err(Error::Serialization(
                    "tree leaf without mesh indices".into(),
                ))
            }
        };
        let region = model.region().clone();
        Ok((rect.clone(), region, model.with_cell(rect)))
    }
}

pub fn coefficient_count_tree(model: &TreePceModel) -> usize {
    model.coefficient_count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

pub fn export_tree(model: &TreePceModel, format: ExportFormat) -> Result<String> {
    match format {
        ExportFormat::Json => model.to_json(),
        ExportFormat::Dot => Ok(model.to_dot()),
    }
}
