//! Input spaces, sample sets, threshold meshes and rectangles.

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

type DensityFn = dyn Fn(f64) -> f64 + Send + Sync;

const INVERSE_CDF_CELLS: usize = 2048;

/// A density-defined marginal: a user density on a bounded support.
///
/// The density is normalized on construction, so it only has to be known up
/// to a constant.
#[derive(Clone)]
pub struct DensityMarginal {
    name: String,
    lower: f64,
    upper: f64,
    raw: Arc<DensityFn>,
    scale: f64,
    cdf_table: Arc<OnceLock<Vec<f64>>>,
}

impl DensityMarginal {
    pub fn new<F>(name: impl Into<String>, lower: f64, upper: f64, density: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::DegenerateInterval { lower, upper });
        }
        let total = quadrature::adaptive(&density, lower, upper, 1e-13);
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidInput(
                "density must have positive finite mass on its support".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            lower,
            upper,
            raw: Arc::new(density),
            scale: 1.0 / total,
            cdf_table: Arc::new(OnceLock::new()),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lower || x > self.upper {
            0.0
        } else {
            self.scale * (self.raw)(x)
        }
    }

    fn cdf_table(&self) -> &[f64] {
        self.cdf_table.get_or_init(|| {
            let rule = quadrature::GaussRule::new(8);
            let h = (self.upper - self.lower) / INVERSE_CDF_CELLS as f64;
            let mut table = Vec::with_capacity(INVERSE_CDF_CELLS + 1);
            let mut acc = 0.0;
            table.push(0.0);
            for c in 0..INVERSE_CDF_CELLS {
                let a = self.lower + c as f64 * h;
                acc += rule.integrate(|x| self.pdf(x), a, a + h);
                table.push(acc);
            }
            let total = acc;
            table.iter_mut().for_each(|v| *v /= total);
            table
        })
    }

    /// Inverse CDF, piecewise linear between tabulated cell masses.
    fn quantile(&self, u: f64) -> f64 {
        let table = self.cdf_table();
        let cell = table
            .partition_point(|&c| c < u)
            .clamp(1, INVERSE_CDF_CELLS)
            - 1;
        let (c0, c1) = (table[cell], table[cell + 1]);
        let h = (self.upper - self.lower) / INVERSE_CDF_CELLS as f64;
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.lower + (cell as f64 + frac.clamp(0.0, 1.0)) * h
    }
}

impl fmt::Debug for DensityMarginal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DensityMarginal")
            .field("name", &self.name)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish()
    }
}

/// Marginal distribution of one input.
#[derive(Debug, Clone)]
pub enum MarginalDistribution {
    Uniform { lower: f64, upper: f64 },
    Density(DensityMarginal),
}

impl MarginalDistribution {
    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::DegenerateInterval { lower, upper });
        }
        Ok(Self::Uniform { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        match self {
            Self::Uniform { lower, .. } => *lower,
            Self::Density(d) => d.lower,
        }
    }

    pub fn upper(&self) -> f64 {
        match self {
            Self::Uniform { upper, .. } => *upper,
            Self::Density(d) => d.upper,
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, Self::Uniform { .. })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::Uniform { lower, upper } => {
                if x < *lower || x > *upper {
                    0.0
                } else {
                    1.0 / (upper - lower)
                }
            }
            Self::Density(d) => d.pdf(x),
        }
    }

    /// Probability that the input falls in `[a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        let a = a.max(self.lower());
        let b = b.min(self.upper());
        if b <= a {
            return 0.0;
        }
        match self {
            Self::Uniform { lower, upper } => (b - a) / (upper - lower),
            Self::Density(d) => quadrature::adaptive(|x| d.pdf(x), a, b, 1e-14),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self {
            Self::Uniform { lower, upper } => lower + (upper - lower) * u,
            Self::Density(d) => d.quantile(u),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower() && x <= self.upper()
    }
}

/// Serializable description of a marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginalRecord {
    Uniform {
        lower: f64,
        upper: f64,
    },
    Density {
        name: String,
        lower: f64,
        upper: f64,
    },
}

impl From<&MarginalDistribution> for MarginalRecord {
    fn from(m: &MarginalDistribution) -> Self {
        match m {
            MarginalDistribution::Uniform { lower, upper } => Self::Uniform {
                lower: *lower,
                upper: *upper,
            },
            MarginalDistribution::Density(d) => Self::Density {
                name: d.name.clone(),
                lower: d.lower,
                upper: d.upper,
            },
        }
    }
}

impl TryFrom<&MarginalRecord> for MarginalDistribution {
    type Error = Error;

    fn try_from(r: &MarginalRecord) -> Result<Self> {
        match r {
            MarginalRecord::Uniform { lower, upper } => Self::uniform(*lower, *upper),
            MarginalRecord::Density { name, .. } => Err(Error::Serialization(format!(
                "density-defined marginal '{name}' cannot be restored from a file"
            ))),
        }
    }
}

/// Independent inputs with their marginals.
#[derive(Debug, Clone)]
pub struct InputSpace {
    marginals: Vec<MarginalDistribution>,
}

impl InputSpace {
    pub fn new(marginals: Vec<MarginalDistribution>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::InvalidInput(
                "input space needs at least one input".into(),
            ));
        }
        Ok(Self { marginals })
    }

    /// The unit hypercube `[0, 1]^d` with uniform marginals.
    pub fn unit_cube(d: usize) -> Result<Self> {
        Self::new(vec![
            MarginalDistribution::Uniform {
                lower: 0.0,
                upper: 1.0
            };
            d
        ])
    }

    pub fn uniform_box(bounds: &[(f64, f64)]) -> Result<Self> {
        let marginals = bounds
            .iter()
            .map(|&(a, b)| MarginalDistribution::uniform(a, b))
            .collect::<Result<Vec<_>>>()?;
        Self::new(marginals)
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[MarginalDistribution] {
        &self.marginals
    }

    pub fn marginal(&self, i: usize) -> &MarginalDistribution {
        &self.marginals[i]
    }

    pub fn support(&self) -> Region {
        Region {
            lower: self.marginals.iter().map(|m| m.lower()).collect(),
            upper: self.marginals.iter().map(|m| m.upper()).collect(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.marginals.iter().zip(x).all(|(m, &v)| m.contains(v))
    }

    /// Probability mass of a box; multiplicative across dimensions.
    pub fn mass(&self, region: &Region) -> f64 {
        (0..self.dim())
            .map(|i| self.marginals[i].mass(region.lower[i], region.upper[i]))
            .product()
    }

    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.marginals.iter().map(|m| m.sample(rng)).collect()
    }

    pub fn records(&self) -> Vec<MarginalRecord> {
        self.marginals.iter().map(MarginalRecord::from).collect()
    }

    pub fn from_records(records: &[MarginalRecord]) -> Result<Self> {
        let marginals = records
            .iter()
            .map(MarginalDistribution::try_from)
            .collect::<Result<Vec<_>>>()?;
        Self::new(marginals)
    }
}

/// Axis-aligned box given by geometric bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidInput(
                "region bounds must have equal nonzero length".into(),
            ));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::DegenerateInterval {
                lower: lower[i],
                upper: upper[i],
            });
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Closed-interval membership on every side.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    pub fn interval(&self, i: usize) -> (f64, f64) {
        (self.lower[i], self.upper[i])
    }

    pub fn with_interval(&self, i: usize, lower: f64, upper: f64) -> Self {
        let mut r = self.clone();
        r.lower[i] = lower;
        r.upper[i] = upper;
        r
    }
}

/// Input-output samples. Inputs are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
}

impl SampleSet {
    pub fn new(dim: usize, inputs: Vec<f64>, outputs: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput(
                "sample dimension must be at least 1".into(),
            ));
        }
        if inputs.len() != dim * outputs.len() {
            return Err(Error::InvalidInput(format!(
                "{} input values do not form {} rows of dimension {dim}",
                inputs.len(),
                outputs.len()
            )));
        }
        if inputs.iter().chain(&outputs).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("samples must be finite".into()));
        }
        Ok(Self {
            dim,
            inputs,
            outputs,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], outputs: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("ragged input rows".into()));
        }
        if rows.len() != outputs.len() {
            return Err(Error::InvalidInput(format!(
                "{} input rows but {} outputs",
                rows.len(),
                outputs.len()
            )));
        }
        Self::new(dim, rows.concat(), outputs)
    }

    /// Evaluates `f` on every row of `inputs`.
    pub fn from_function<F: Fn(&[f64]) -> f64>(dim: usize, inputs: Vec<f64>, f: F) -> Result<Self> {
        let outputs = inputs.chunks(dim.max(1)).map(&f).collect();
        Self::new(dim, inputs, outputs)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.inputs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.chunks(self.dim)
    }

    pub fn output(&self, k: usize) -> f64 {
        self.outputs[k]
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    /// Row indices lying in the closed box.
    pub fn indices_in(&self, region: &Region) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| region.contains(self.row(k)))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> SampleSet {
        let mut inputs = Vec::with_capacity(rows.len() * self.dim);
        for &k in rows {
            inputs.extend_from_slice(self.row(k));
        }
        SampleSet {
            dim: self.dim,
            inputs,
            outputs: rows.iter().map(|&k| self.outputs[k]).collect(),
        }
    }

    /// First row lying outside the space, if any.
    pub fn check_in_space(&self, space: &InputSpace) -> Result<()> {
        if space.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: self.dim,
            });
        }
        match self.rows().find(|r| !space.contains(r)) {
            Some(r) => Err(Error::OutOfDomain { point: r.to_vec() }),
            None => Ok(()),
        }
    }

    /// Splits rows into two sets by a seeded shuffle; the first holds
    /// `round(frac * N)` rows.
    pub fn shuffled_split(&self, frac: f64, seed: u64) -> (SampleSet, SampleSet) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let cut = ((self.len() as f64) * frac.clamp(0.0, 1.0)).round() as usize;
        (self.subset(&order[..cut]), self.subset(&order[cut..]))
    }
}

/// Restriction of a sample set to a closed box.
pub fn filter_samples(data: &SampleSet, region: &Region) -> SampleSet {
    data.subset(&data.indices_in(region))
}

/// Candidate split values per dimension; entry 0 and the last entry are the
/// support bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMesh {
    points: Vec<Vec<f64>>,
}

impl ThresholdMesh {
    /// Builds a mesh from interior thresholds per dimension.
    pub fn from_interior(space: &InputSpace, interior: Vec<Vec<f64>>) -> Result<Self> {
        if interior.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: interior.len(),
            });
        }
        let mut points = Vec::with_capacity(space.dim());
        for (i, inner) in interior.into_iter().enumerate() {
            let m = space.marginal(i);
            let mut axis = Vec::with_capacity(inner.len() + 2);
            axis.push(m.lower());
            axis.extend(inner);
            axis.push(m.upper());
            points.push(axis);
        }
        let mesh = Self { points };
        mesh.validate(space)?;
        Ok(mesh)
    }

    /// `m` equally spaced interior thresholds per dimension.
    pub fn uniform(space: &InputSpace, m: usize) -> Result<Self> {
        Self::uniform_per_dim(space, &vec![m; space.dim()])
    }

    pub fn uniform_per_dim(space: &InputSpace, counts: &[usize]) -> Result<Self> {
        let interior = space
            .marginals()
            .iter()
            .zip(counts)
            .map(|(mar, &m)| {
                let (a, b) = (mar.lower(), mar.upper());
                (1..=m)
                    .map(|k| a + (b - a) * k as f64 / (m + 1) as f64)
                    .collect()
            })
            .collect();
        Self::from_interior(space, interior)
    }

    /// `m` empirical quantiles per dimension, computed once on the whole
    /// sample set.
    pub fn empirical_quantiles(space: &InputSpace, data: &SampleSet, m: usize) -> Result<Self> {
        if data.dim() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: data.dim(),
            });
        }
        let mut interior = Vec::with_capacity(space.dim());
        for i in 0..space.dim() {
            let mut col: Vec<f64> = data.rows().map(|r| r[i]).collect();
            col.sort_by(f64::total_cmp);
            let mar = space.marginal(i);
            let mut qs: Vec<f64> = (1..=m)
                .filter_map(|k| {
                    if col.is_empty() {
                        return None;
                    }
                    let pos = (k as f64 / (m + 1) as f64) * (col.len() - 1) as f64;
                    let lo = pos.floor() as usize;
                    let hi = pos.ceil() as usize;
                    let q = col[lo] + (col[hi] - col[lo]) * (pos - lo as f64);
                    (q > mar.lower() && q < mar.upper()).then_some(q)
                })
                .collect();
            qs.dedup();
            interior.push(qs);
        }
        Self::from_interior(space, interior)
    }

    fn validate(&self, space: &InputSpace) -> Result<()> {
        for (i, axis) in self.points.iter().enumerate() {
            if axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidInput(format!(
                    "thresholds in dimension {} must be strictly increasing inside the support",
                    i + 1
                )));
            }
            let m = space.marginal(i);
            if axis[0] != m.lower() || axis[axis.len() - 1] != m.upper() {
                return Err(Error::InvalidInput(format!(
                    "mesh sentinels in dimension {} must equal the support bounds",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    /// All entries of one axis, sentinels included.
    pub fn axis(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.points[i][j]
    }

    /// Number of interior thresholds along `i`.
    pub fn interior_count(&self, i: usize) -> usize {
        self.points[i].len() - 2
    }

    pub fn region(&self, rect: &Rectangle) -> Region {
        Region {
            lower: (0..self.dim())
                .map(|i| self.points[i][rect.lo[i]])
                .collect(),
            upper: (0..self.dim())
                .map(|i| self.points[i][rect.hi[i]])
                .collect(),
        }
    }

    pub fn full_rectangle(&self) -> Rectangle {
        Rectangle {
            lo: vec![0; self.dim()],
            hi: self.points.iter().map(|a| a.len() - 1).collect(),
        }
    }
}

/// Box described by mesh indices `[t_{i, lo_i}, t_{i, hi_i}]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rectangle {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl Rectangle {
    pub fn new(mesh: &ThresholdMesh, lo: Vec<usize>, hi: Vec<usize>) -> Result<Self> {
        if lo.len() != mesh.dim() || hi.len() != mesh.dim() {
            return Err(Error::DimensionMismatch {
                expected: mesh.dim(),
                got: lo.len().min(hi.len()),
            });
        }
        for i in 0..mesh.dim() {
            if !(lo[i] < hi[i]) || hi[i] >= mesh.axis(i).len() {
                return Err(Error::InvalidInput(format!(
                    "invalid mesh index bounds ({}, {}) in dimension {}",
                    lo[i],
                    hi[i],
                    i + 1
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_splittable_along(&self, i: usize) -> bool {
        self.hi[i] > self.lo[i] + 1
    }

    /// Interior mesh indices along `i` at which this rectangle can be cut.
    pub fn split_indices(&self, i: usize) -> std::ops::Range<usize> {
        self.lo[i] + 1..self.hi[i]
    }

    /// Cuts along `i` at mesh index `j`; returns (lower part, upper part).
    pub fn split(&self, i: usize, j: usize) -> (Rectangle, Rectangle) {
        assert!(
            j > self.lo[i] && j < self.hi[i],
            "split index outside rectangle"
        );
        let mut left = self.clone();
        let mut right = self.clone();
        left.hi[i] = j;
        right.lo[i] = j;
        (left, right)
    }
}

/// `Pr(X in rect)` for independent marginals.
pub fn conditional_mass(space: &InputSpace, mesh: &ThresholdMesh, rect: &Rectangle) -> f64 {
    space.mass(&mesh.region(rect))
}
