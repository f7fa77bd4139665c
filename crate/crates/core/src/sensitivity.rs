//! Variance-based sensitivity measures of fitted surrogates.
//!
//! Analytic Sobol' indices come from the coefficients of a single expansion
//! or, for trees, from a double sum over pairs of leaves whose
//! one-dimensional factors are integrals of products of basis polynomials
//! over interval intersections. Those integrals are assembled segment by
//! segment: every leaf interval is a union of consecutive segments between
//! global breakpoints, and on each segment the polynomials are expanded in
//! a segment-local variable `v` in `[-1, 1]`, which keeps the monomial
//! arithmetic well conditioned even on very short intervals.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{InputSpace, MarginalDistribution, SampleSet};
use crate::error::{Error, Result};
use crate::orthobasis::UnivariateBasis;
use crate::pce::PceModel;
use crate::quadrature::adaptive;
use crate::tree::TreePceModel;

/// Default cap on the number of coefficient products in the tree formulas.
pub const DEFAULT_TERM_BUDGET: u128 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SobolMethod {
    PceAnalytic,
    TreeAnalytic,
    PickFreeze,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolEntry {
    /// Zero-based input indices.
    pub subset: Vec<usize>,
    pub first_order: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_order_se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_se: Option<f64>,
    /// Set when an estimate leaves `0 <= S <= S^T <= 1`.
    #[serde(default)]
    pub out_of_bounds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolResult {
    pub method: SobolMethod,
    pub dim: usize,
    pub mean: f64,
    pub variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_se: Option<f64>,
    /// Unnormalized `Var(E[G | X_A])` per entry, same order as `entries`.
    pub partial_variances: Vec<f64>,
    pub entries: Vec<SobolEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SobolResult {
    pub fn entry(&self, subset: &[usize]) -> Option<&SobolEntry> {
        let key = normalize_subset(subset);
        self.entries.iter().find(|e| e.subset == key)
    }

    /// First-order index of input `i`.
    pub fn first_order(&self, i: usize) -> Option<f64> {
        self.entry(&[i]).map(|e| e.first_order)
    }

    pub fn total(&self, i: usize) -> Option<f64> {
        self.entry(&[i]).map(|e| e.total)
    }
}

fn normalize_subset(subset: &[usize]) -> Vec<usize> {
    let mut s = subset.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

fn complement(subset: &[usize], d: usize) -> Vec<usize> {
    (0..d).filter(|i| !subset.contains(i)).collect()
}

/// Every singleton followed by the complements of the singletons.
pub fn default_subsets(d: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (0..d).map(|i| vec![i]).collect();
    for i in 0..d {
        let c = complement(&[i], d);
        if !c.is_empty() && !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Sobol' indices read off the coefficients of a global expansion.
pub fn sobol_from_pce(model: &PceModel, subsets: &[Vec<usize>]) -> Result<SobolResult> {
    let d = model.dim();
    check_subsets(subsets, d)?;
    let terms: Vec<(&[u32], f64)> = model
        .indices()
        .indices()
        .iter()
        .map(|a| a.as_slice())
        .zip(model.coefficients().iter().copied())
        .collect();
    let variance: f64 = terms
        .iter()
        .filter(|(a, _)| a.iter().any(|&v| v > 0))
        .map(|(_, y)| y * y)
        .sum();
    if !(variance > 0.0) {
        return Err(Error::DegenerateOutput(
            "all non-constant coefficients vanish; the output variance is zero".into(),
        ));
    }
    let closed = |subset: &[usize]| -> f64 {
        terms
            .iter()
            .filter(|(a, _)| {
                a.iter().any(|&v| v > 0)
                    && a.iter()
                        .enumerate()
                        .all(|(i, &v)| v == 0 || subset.contains(&i))
            })
            .map(|(_, y)| y * y)
            .sum()
    };
    let mut entries = Vec::with_capacity(subsets.len());
    let mut partial = Vec::with_capacity(subsets.len());
    for s in subsets {
        let s = normalize_subset(s);
        let v = closed(&s);
        let vc = closed(&complement(&s, d));
        partial.push(v);
        entries.push(bounded_entry(
            s,
            v / variance,
            1.0 - vc / variance,
            None,
            None,
        ));
    }
    Ok(SobolResult {
        method: SobolMethod::PceAnalytic,
        dim: d,
        mean: model.constant(),
        variance,
        variance_se: None,
        partial_variances: partial,
        entries,
        sample_size: None,
        seed: None,
    })
}

fn bounded_entry(
    subset: Vec<usize>,
    first_order: f64,
    total: f64,
    first_order_se: Option<f64>,
    total_se: Option<f64>,
) -> SobolEntry {
    let slack = 1e-12;
    let out_of_bounds = first_order < -slack || total > 1.0 + slack || first_order > total + slack;
    SobolEntry {
        subset,
        first_order,
        total,
        first_order_se,
        total_se,
        out_of_bounds,
    }
}

fn check_subsets(subsets: &[Vec<usize>], d: usize) -> Result<()> {
    for s in subsets {
        if let Some(&bad) = s.iter().find(|&&i| i >= d) {
            return Err(Error::InvalidInput(format!(
                "subset refers to input {} but the model has {d}",
                bad + 1
            )));
        }
    }
    Ok(())
}

/// How segment moments were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    Exact,
    Empirical,
}

/// Moments of every input over the segments between global breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMoments {
    source: MomentSource,
    breakpoints: Vec<Vec<f64>>,
    /// `raw[i][l][rho] = E[X_i^rho 1{X_i in segment l}]`.
    raw: Vec<Vec<Vec<f64>>>,
    /// Same with `X_i` replaced by the segment-local variable in `[-1, 1]`.
    local: Vec<Vec<Vec<f64>>>,
}

impl SegmentMoments {
    /// Exact moments: closed form for uniform marginals, adaptive quadrature
    /// for density-defined ones.
    pub fn exact(space: &InputSpace, breakpoints: Vec<Vec<f64>>, max_order: usize) -> Result<Self> {
        check_breakpoints(space, &breakpoints)?;
        let mut raw = Vec::with_capacity(space.dim());
        let mut local = Vec::with_capacity(space.dim());
        for (i, bps) in breakpoints.iter().enumerate() {
            let m = space.marginal(i);
            let mut raw_i = Vec::with_capacity(bps.len() - 1);
            let mut local_i = Vec::with_capacity(bps.len() - 1);
            for w in bps.windows(2) {
                let (a, b) = (w[0], w[1]);
                raw_i.push(raw_moments(m, a, b, max_order));
                local_i.push(local_moments(m, a, b, max_order));
            }
            raw.push(raw_i);
            local.push(local_i);
        }
        Ok(Self {
            source: MomentSource::Exact,
            breakpoints,
            raw,
            local,
        })
    }

    /// Sample averages over half-open segments (the last one closed).
    pub fn empirical(
        data: &SampleSet,
        breakpoints: Vec<Vec<f64>>,
        max_order: usize,
    ) -> Result<Self> {
        if breakpoints.len() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                got: breakpoints.len(),
            });
        }
        if data.is_empty() {
            return Err(Error::InsufficientSamples {
                available: 0,
                required: 1,
            });
        }
        let n = data.len() as f64;
        let mut raw = Vec::new();
        let mut local = Vec::new();
        for (i, bps) in breakpoints.iter().enumerate() {
            if bps.len() < 2 || bps.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidInput(
                    "breakpoints must be strictly increasing".into(),
                ));
            }
            let segs = bps.len() - 1;
            let mut raw_i = vec![vec![0.0; max_order + 1]; segs];
            let mut local_i = vec![vec![0.0; max_order + 1]; segs];
            for x in data.rows().map(|r| r[i]) {
                let Some(l) = locate(bps, x) else { continue };
                let (a, b) = (bps[l], bps[l + 1]);
                let v = (2.0 * x - a - b) / (b - a);
                let (mut px, mut pv) = (1.0, 1.0);
                for rho in 0..=max_order {
                    raw_i[l][rho] += px / n;
                    local_i[l][rho] += pv / n;
                    px *= x;
                    pv *= v;
                }
            }
            raw.push(raw_i);
            local.push(local_i);
        }
        Ok(Self {
            source: MomentSource::Empirical,
            breakpoints,
            raw,
            local,
        })
    }

    pub fn source(&self) -> MomentSource {
        self.source
    }

    pub fn dim(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn breakpoints(&self, i: usize) -> &[f64] {
        &self.breakpoints[i]
    }

    pub fn segment_count(&self, i: usize) -> usize {
        self.breakpoints[i].len() - 1
    }

    pub fn max_order(&self, i: usize) -> usize {
        self.raw[i].first().map_or(0, |r| r.len() - 1)
    }

    /// `E[X_i^rho 1{X_i in segment l}]`.
    pub fn moment(&self, i: usize, rho: usize, l: usize) -> f64 {
        self.raw[i][l][rho]
    }

    /// Moment of the segment-local variable.
    pub fn local_moment(&self, i: usize, rho: usize, l: usize) -> f64 {
        self.local[i][l][rho]
    }

    /// Position of `x` in the breakpoint list of dimension `i`, if present.
    pub fn breakpoint_index(&self, i: usize, x: f64) -> Option<usize> {
        let bps = &self.breakpoints[i];
        bps.binary_search_by(|b| b.total_cmp(&x)).ok()
    }
}

fn check_breakpoints(space: &InputSpace, breakpoints: &[Vec<f64>]) -> Result<()> {
    if breakpoints.len() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: breakpoints.len(),
        });
    }
    for (i, bps) in breakpoints.iter().enumerate() {
        let m = space.marginal(i);
        if bps.len() < 2 || bps.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if bps[0] < m.lower() || bps[bps.len() - 1] > m.upper() {
            return Err(Error::InvalidInput(format!(
                "breakpoints of input {} leave the support",
                i + 1
            )));
        }
    }
    Ok(())
}

fn locate(bps: &[f64], x: f64) -> Option<usize> {
    let last = bps.len() - 1;
    if x < bps[0] || x > bps[last] {
        return None;
    }
    if x == bps[last] {
        return Some(last - 1);
    }
    Some(bps.partition_point(|&b| b <= x) - 1)
}

fn raw_moments(m: &MarginalDistribution, a: f64, b: f64, order: usize) -> Vec<f64> {
    match m {
        MarginalDistribution::Uniform { lower, upper } => (0..=order)
            .map(|rho| {
                let k = rho as i32 + 1;
                (b.powi(k) - a.powi(k)) / (k as f64 * (upper - lower))
            })
            .collect(),
        MarginalDistribution::Density(dm) => (0..=order)
            .map(|rho| adaptive(|x| x.powi(rho as i32) * dm.pdf(x), a, b, 1e-12))
            .collect(),
    }
}

fn local_moments(m: &MarginalDistribution, a: f64, b: f64, order: usize) -> Vec<f64> {
    match m {
        MarginalDistribution::Uniform { .. } => {
            let mass = m.mass(a, b);
            (0..=order)
                .map(|rho| {
                    if rho % 2 == 0 {
                        mass / (rho as f64 + 1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        MarginalDistribution::Density(dm) => {
            let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
            (0..=order)
                .map(|rho| adaptive(|x| ((x - c) / h).powi(rho as i32) * dm.pdf(x), a, b, 1e-12))
                .collect()
        }
    }
}

/// Union of all leaf-interval endpoints, per input.
pub fn tree_breakpoints(model: &TreePceModel) -> Vec<Vec<f64>> {
    (0..model.dim())
        .map(|i| {
            let mut pts: Vec<f64> = model
                .leaves()
                .flat_map(|(_, n, _)| {
                    let (lo, hi) = n.region.interval(i);
                    [lo, hi]
                })
                .collect();
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            pts
        })
        .collect()
}

fn tree_max_order(model: &TreePceModel) -> usize {
    2 * model
        .leaves()
        .flat_map(|(_, _, m)| m.bases().iter().map(|b| b.degree()))
        .max()
        .unwrap_or(0)
}

/// Exact segment moments for the breakpoints of a fitted tree.
pub fn segment_moments(space: &InputSpace, model: &TreePceModel) -> Result<SegmentMoments> {
    SegmentMoments::exact(space, tree_breakpoints(model), tree_max_order(model))
}

/// Per-segment monomial coefficients of a basis, in the segment variable.
fn segment_tables(
    moments: &SegmentMoments,
    i: usize,
    basis: &UnivariateBasis,
    segs: std::ops::Range<usize>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let bps = moments.breakpoints(i);
    let (lo, hi) = basis.interval();
    segs.map(|l| {
        let (a, b) = (bps[l], bps[l + 1]);
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        let w = hi - lo;
        basis.coefficients_in(2.0 * h / w, (2.0 * c - lo - hi) / w)
    })
    .collect()
}

fn segment_range(
    moments: &SegmentMoments,
    i: usize,
    lo: f64,
    hi: f64,
) -> Result<std::ops::Range<usize>> {
    let a = moments.breakpoint_index(i, lo);
    let b = moments.breakpoint_index(i, hi);
    match (a, b) {
        (Some(a), Some(b)) => Ok(a..b),
        _ => Err(Error::InvalidInput(format!(
            "interval [{lo}, {hi}] of input {} is not aligned with the moment breakpoints",
            i + 1
        ))),
    }
}

/// Matrix `J[a][b] = E[1{X_i in I ∩ I'} phi_a(X_i) phi'_b(X_i)]` for all
/// degrees of the two bases.
pub fn j_matrix(
    moments: &SegmentMoments,
    i: usize,
    left: &UnivariateBasis,
    right: &UnivariateBasis,
) -> Result<Vec<Vec<f64>>> {
    let (p, q) = (left.degree(), right.degree());
    let mut out = vec![vec![0.0; q + 1]; p + 1];
    let lo = left.lower().max(right.lower());
    let hi = left.upper().min(right.upper());
    if !(hi > lo) {
        return Ok(out);
    }
    if p + q > moments.max_order(i) {
        return Err(Error::InvalidInput(format!(
            "moments of input {} only go up to order {}",
            i + 1,
            moments.max_order(i)
        )));
    }
    let segs = segment_range(moments, i, lo, hi)?;
    let lt = segment_tables(moments, i, left, segs.clone())?;
    let rt = segment_tables(moments, i, right, segs.clone())?;
    for (k, l) in segs.enumerate() {
        // orders above p + q only ever meet a zero coefficient
        let e: Vec<f64> = (0..=2 * p.max(q))
            .map(|rho| {
                if rho <= p + q {
                    moments.local_moment(i, rho, l)
                } else {
                    0.0
                }
            })
            .collect();
        for (a, ca) in lt[k].iter().enumerate() {
            for (b, cb) in rt[k].iter().enumerate() {
                out[a][b] += symmetric_pair(ca, cb, &e);
            }
        }
    }
    Ok(out)
}

/// `sum_{rho,sigma} x_rho y_sigma e_{rho+sigma}`, summed so that swapping
/// `x` and `y` gives the identical float.
fn symmetric_pair(x: &[f64], y: &[f64], e: &[f64]) -> f64 {
    let n = x.len().max(y.len());
    let at = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
    let mut s = 0.0;
    for rho in 0..n {
        let (xr, yr) = (at(x, rho), at(y, rho));
        s += (xr * yr) * e[2 * rho];
        for sigma in rho + 1..n {
            let cross = xr * at(y, sigma) + at(x, sigma) * yr;
            if cross != 0.0 {
                s += cross * e[rho + sigma];
            }
        }
    }
    s
}

/// Single J entry for degrees `alphas` of the two bases along input `i`.
pub fn j_integral(
    moments: &SegmentMoments,
    i: usize,
    bases: (&UnivariateBasis, &UnivariateBasis),
    alphas: (usize, usize),
) -> Result<f64> {
    let lo = bases.0.lower().max(bases.1.lower());
    let hi = bases.0.upper().min(bases.1.upper());
    if !(hi > lo) {
        return Ok(0.0);
    }
    let m = j_matrix(moments, i, bases.0, bases.1)?;
    Ok(m[alphas.0][alphas.1])
}

struct Leaf<'a> {
    model: &'a PceModel,
    mass: Vec<f64>,
}

/// Sobol' indices of a tree surrogate from its leaf expansions.
pub fn sobol_from_tree(
    model: &TreePceModel,
    space: &InputSpace,
    subsets: &[Vec<usize>],
) -> Result<SobolResult> {
    sobol_from_tree_with(model, space, subsets, DEFAULT_TERM_BUDGET, None)
}

/// As [`sobol_from_tree`], with an explicit term budget and optionally
/// pre-computed segment moments (e.g. empirical ones).
pub fn sobol_from_tree_with(
    model: &TreePceModel,
    space: &InputSpace,
    subsets: &[Vec<usize>],
    budget: u128,
    moments: Option<&SegmentMoments>,
) -> Result<SobolResult> {
    let d = model.dim();
    if space.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: space.dim(),
        });
    }
    check_subsets(subsets, d)?;
    let leaves: Vec<Leaf> = model
        .leaves()
        .map(|(_, n, m)| Leaf {
            model: m,
            mass: (0..d)
                .map(|i| {
                    let (lo, hi) = n.region.interval(i);
                    space.marginal(i).mass(lo, hi)
                })
                .collect(),
        })
        .collect();

    let total_terms: u128 = leaves
        .iter()
        .map(|l| l.model.coefficient_count() as u128)
        .sum();
    let subset_list: Vec<Vec<usize>> = subsets.iter().map(|s| normalize_subset(s)).collect();
    let widest = subset_list
        .iter()
        .flat_map(|s| [s.len(), d - s.len()])
        .max()
        .unwrap_or(1)
        .max(1) as u128;
    let estimated = total_terms * total_terms * widest;
    if estimated > budget {
        return Err(Error::BudgetExceeded {
            estimated_terms: estimated,
            budget,
        });
    }

    let mass_all: Vec<f64> = leaves.iter().map(|l| l.mass.iter().product()).collect();
    let mean = pairwise_sum(
        &leaves
            .iter()
            .zip(&mass_all)
            .map(|(l, p)| l.model.constant() * p)
            .collect::<Vec<_>>(),
    );
    let second = pairwise_sum(
        &leaves
            .iter()
            .zip(&mass_all)
            .map(|(l, p)| l.model.coefficients().iter().map(|y| y * y).sum::<f64>() * p)
            .collect::<Vec<_>>(),
    );
    let variance = second - mean * mean;
    if !(variance > 1e-14 * second.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateOutput(format!(
            "surrogate variance {variance:e} is not positive"
        )));
    }

    let owned;
    let moments = match moments {
        Some(m) => m,
        None => {
            owned = segment_moments(space, model)?;
            &owned
        }
    };
    let mut cache = JCache::default();
    let mut closed = |subset: &[usize]| -> Result<f64> {
        let v = conditional_second_moment(&leaves, subset, moments, &mut cache)?;
        Ok(v - mean * mean)
    };
    let mut entries = Vec::with_capacity(subset_list.len());
    let mut partial = Vec::with_capacity(subset_list.len());
    for s in subset_list {
        let v = if s.is_empty() { 0.0 } else { closed(&s)? };
        let c = complement(&s, d);
        let vc = if c.is_empty() { 0.0 } else { closed(&c)? };
        partial.push(v);
        entries.push(bounded_entry(
            s,
            v / variance,
            1.0 - vc / variance,
            None,
            None,
        ));
    }
    Ok(SobolResult {
        method: SobolMethod::TreeAnalytic,
        dim: d,
        mean,
        variance,
        variance_se: None,
        partial_variances: partial,
        entries,
        sample_size: None,
        seed: None,
    })
}

/// `Var(E[G | X_A])` for one subset, from the analytic double sum.
pub fn tree_partial_variance(
    model: &TreePceModel,
    space: &InputSpace,
    subset: &[usize],
) -> Result<f64> {
    let r = sobol_from_tree(model, space, &[subset.to_vec()])?;
    Ok(r.partial_variances[0])
}

#[derive(Default)]
struct JCache {
    map: HashMap<(usize, u64, u64, u64, u64), Vec<Vec<f64>>>,
}

impl JCache {
    fn get(
        &mut self,
        moments: &SegmentMoments,
        i: usize,
        a: &UnivariateBasis,
        b: &UnivariateBasis,
    ) -> Result<&Vec<Vec<f64>>> {
        // bases on the same interval and marginal coincide, so the interval
        // identifies the basis up to its degree; cache at the larger degree
        let key = (
            i,
            a.lower().to_bits(),
            a.upper().to_bits(),
            b.lower().to_bits(),
            b.upper().to_bits(),
        );
        let fresh = match self.map.get(&key) {
            Some(m) => m.len() <= a.degree() || m[0].len() <= b.degree(),
            None => true,
        };
        if fresh {
            let m = j_matrix(moments, i, a, b)?;
            self.map.insert(key, m);
        }
        Ok(&self.map[&key])
    }
}

fn conditional_second_moment(
    leaves: &[Leaf],
    subset: &[usize],
    moments: &SegmentMoments,
    cache: &mut JCache,
) -> Result<f64> {
    let d = leaves.first().map_or(0, |l| l.mass.len());
    let others = complement(subset, d);
    // terms of each leaf whose support lies inside the subset
    let terms: Vec<Vec<(Vec<usize>, f64)>> = leaves
        .iter()
        .map(|l| {
            l.model
                .indices()
                .indices()
                .iter()
                .zip(l.model.coefficients())
                .filter(|(a, _)| others.iter().all(|&i| a[i] == 0))
                .map(|(a, &y)| (subset.iter().map(|&i| a[i] as usize).collect(), y))
                .collect()
        })
        .collect();
    let weight: Vec<f64> = leaves
        .iter()
        .map(|l| others.iter().map(|&i| l.mass[i]).product())
        .collect();

    // J matrices for every overlapping pair, per subset dimension
    let r = leaves.len();
    let mut pair_j: Vec<Option<Vec<&Vec<Vec<f64>>>>> = Vec::with_capacity(r * r);
    let mut needed: Vec<(usize, usize, usize)> = Vec::new();
    for a in 0..r {
        for b in 0..r {
            let overlap = subset.iter().all(|&i| {
                let (la, ha) = leaves[a].model.region().interval(i);
                let (lb, hb) = leaves[b].model.region().interval(i);
                ha.min(hb) > la.max(lb)
            });
            if overlap {
                for &i in subset {
                    needed.push((a, b, i));
                }
            }
        }
    }
    for &(a, b, i) in &needed {
        cache.get(
            moments,
            i,
            &leaves[a].model.bases()[i],
            &leaves[b].model.bases()[i],
        )?;
    }
    let lookup = |a: usize, b: usize, i: usize| -> &Vec<Vec<f64>> {
        let ba = &leaves[a].model.bases()[i];
        let bb = &leaves[b].model.bases()[i];
        &cache.map[&(
            i,
            ba.lower().to_bits(),
            ba.upper().to_bits(),
            bb.lower().to_bits(),
            bb.upper().to_bits(),
        )]
    };
    for a in 0..r {
        for b in 0..r {
            let overlap = subset.iter().all(|&i| {
                let (la, ha) = leaves[a].model.region().interval(i);
                let (lb, hb) = leaves[b].model.region().interval(i);
                ha.min(hb) > la.max(lb)
            });
            pair_j.push(overlap.then(|| subset.iter().map(|&i| lookup(a, b, i)).collect()));
        }
    }

    let rows: Vec<f64> = (0..r)
        .into_par_iter()
        .map(|a| {
            let mut acc = Vec::with_capacity(r);
            for b in 0..r {
                let Some(js) = &pair_j[a * r + b] else {
                    continue;
                };
                let mut s = 0.0;
                for (ia, ya) in &terms[a] {
                    for (ib, yb) in &terms[b] {
                        let mut prod = ya * yb;
                        for (k, j) in js.iter().enumerate() {
                            prod *= j[ia[k]][ib[k]];
                        }
                        s += prod;
                    }
                }
                acc.push(s * weight[a] * weight[b]);
            }
            pairwise_sum(&acc)
        })
        .collect();
    Ok(pairwise_sum(&rows))
}

/// Order-fixed pairwise summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Share of the root TSE removed by splits along each input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSensitivityResult {
    pub indices: Vec<f64>,
    pub residual: f64,
}

pub fn tree_indices(model: &TreePceModel) -> TreeSensitivityResult {
    let d = model.dim();
    let tse0 = model.tse0();
    if !(tse0 > 0.0) {
        return TreeSensitivityResult {
            indices: vec![0.0; d],
            residual: 0.0,
        };
    }
    let mut gains = vec![Vec::new(); d];
    for h in model.history() {
        gains[h.dim].push(h.delta_tse);
    }
    let indices: Vec<f64> = gains.iter().map(|g| pairwise_sum(g) / tse0).collect();
    let residual = 1.0 - indices.iter().sum::<f64>();
    TreeSensitivityResult { indices, residual }
}

/// Monte Carlo Sobol' estimates for singletons by two-matrix pick-freeze.
pub fn pick_freeze<F>(
    surrogate: F,
    space: &InputSpace,
    inputs: &[usize],
    n_mc: usize,
    seed: u64,
) -> Result<SobolResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n_mc < 100 {
        return Err(Error::InvalidInput(format!(
            "pick-freeze needs at least 100 samples, got {n_mc}"
        )));
    }
    let d = space.dim();
    check_subsets(&inputs.iter().map(|&i| vec![i]).collect::<Vec<_>>(), d)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let a: Vec<Vec<f64>> = (0..n_mc).map(|_| space.sample_point(&mut rng)).collect();
    let b: Vec<Vec<f64>> = (0..n_mc).map(|_| space.sample_point(&mut rng)).collect();
    let ya: Vec<f64> = a.par_iter().map(|x| surrogate(x)).collect();
    let yb: Vec<f64> = b.par_iter().map(|x| surrogate(x)).collect();
    let n = n_mc as f64;

    // variance from the pooled pairs, with its influence function
    let mu = (ya.iter().sum::<f64>() + yb.iter().sum::<f64>()) / (2.0 * n);
    let q =
        (ya.iter().map(|v| v * v).sum::<f64>() + yb.iter().map(|v| v * v).sum::<f64>()) / (2.0 * n);
    let variance = q - mu * mu;
    if !(variance > 0.0) {
        return Err(Error::DegenerateOutput(
            "surrogate output is constant on the sample".into(),
        ));
    }
    let psi_v: Vec<f64> = ya
        .iter()
        .zip(&yb)
        .map(|(x, y)| (0.5 * (x * x + y * y) - q) - 2.0 * mu * (0.5 * (x + y) - mu))
        .collect();
    let variance_se = (mean_square(&psi_v) / n).sqrt();

    let mut entries = Vec::new();
    let mut partial = Vec::new();
    for &i in inputs {
        let yc: Vec<f64> = b
            .par_iter()
            .zip(&a)
            .map(|(rb, ra)| {
                let mut x = rb.clone();
                x[i] = ra[i];
                surrogate(&x)
            })
            .collect();
        // first order: A and C_i share only column i
        let m1 = ya.iter().zip(&yc).map(|(x, y)| x * y).sum::<f64>() / n;
        let m2 = ya.iter().zip(&yc).map(|(x, y)| 0.5 * (x + y)).sum::<f64>() / n;
        let vi = m1 - m2 * m2;
        let psi_i: Vec<f64> = ya
            .iter()
            .zip(&yc)
            .map(|(x, y)| (x * y - m1) - 2.0 * m2 * (0.5 * (x + y) - m2))
            .collect();
        // total: B and C_i differ only in column i
        let w: Vec<f64> = yb
            .iter()
            .zip(&yc)
            .map(|(x, y)| 0.5 * (x - y) * (x - y))
            .collect();
        let vt = w.iter().sum::<f64>() / n;
        let s = vi / variance;
        let st = vt / variance;
        let se_s = influence_se(&psi_i, &psi_v, s, variance, n);
        let psi_t: Vec<f64> = w.iter().map(|v| v - vt).collect();
        let se_t = influence_se(&psi_t, &psi_v, st, variance, n);
        partial.push(vi);
        entries.push(bounded_entry(vec![i], s, st, Some(se_s), Some(se_t)));
    }
    Ok(SobolResult {
        method: SobolMethod::PickFreeze,
        dim: d,
        mean: mu,
        variance,
        variance_se: Some(variance_se),
        partial_variances: partial,
        entries,
        sample_size: Some(n_mc),
        seed: Some(seed),
    })
}

fn mean_square(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

fn influence_se(psi_num: &[f64], psi_den: &[f64], ratio: f64, den: f64, n: f64) -> f64 {
    let psi: Vec<f64> = psi_num
        .iter()
        .zip(psi_den)
        .map(|(a, b)| (a - ratio * b) / den)
        .collect();
    (mean_square(&psi) / n).sqrt()
}

/// Sensitivity output of one model, ready for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub sobol: SobolResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeSensitivityResult>,
}

impl SensitivityReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Two columns, `name,value`; inputs are numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,value\n");
        let label = |s: &[usize]| -> String {
            s.iter()
                .map(|i| (i + 1).to_string())
                .collect::<Vec<_>>()
                .join("_")
        };
        out.push_str(&format!("mean,{}\n", self.sobol.mean));
        out.push_str(&format!("variance,{}\n", self.sobol.variance));
        if let Some(se) = self.sobol.variance_se {
            out.push_str(&format!("variance_se,{se}\n"));
        }
        for e in &self.sobol.entries {
            let l = label(&e.subset);
            out.push_str(&format!("S_{l},{}\n", e.first_order));
            out.push_str(&format!("ST_{l},{}\n", e.total));
            if let Some(se) = e.first_order_se {
                out.push_str(&format!("S_{l}_se,{se}\n"));
            }
            if let Some(se) = e.total_se {
                out.push_str(&format!("ST_{l}_se,{se}\n"));
            }
        }
        if let Some(t) = &self.tree {
            for (i, v) in t.indices.iter().enumerate() {
                out.push_str(&format!("TreePCE_{},{v}\n", i + 1));
            }
            out.push_str(&format!("TreePCE_residual,{}\n", t.residual));
        }
        out
    }
}
