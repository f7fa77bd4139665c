//! Local polynomial chaos expansions fitted by least squares.

use serde::{Deserialize, Serialize};

use crate::domain::{InputSpace, Rectangle, Region, SampleSet};
use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::orthobasis::{build_univariate_basis, MultiIndexSet, UnivariateBasis};

/// Settings of the greedy forward-selection solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseConfig {
    pub folds: usize,
    /// Number of consecutive non-improving steps tolerated before stopping.
    pub patience: usize,
    pub max_terms: Option<usize>,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            patience: 3,
            max_terms: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "solver")]
pub enum FitMethod {
    LeastSquares,
    Sparse(SparseConfig),
}

impl FitMethod {
    pub fn is_sparse(&self) -> bool {
        matches!(self, FitMethod::Sparse(_))
    }
}

/// A polynomial expansion restricted to a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PceModel {
    region: Region,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cell: Option<Rectangle>,
    bases: Vec<UnivariateBasis>,
    indices: MultiIndexSet,
    coefficients: Vec<f64>,
    training_tse: f64,
    training_count: usize,
    rank_deficient: bool,
    sparse: bool,
}

/// Coefficient of determination, or a marker when it is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RSquared {
    Value(f64),
    Degenerate,
}

impl RSquared {
    pub fn value(self) -> Option<f64> {
        match self {
            RSquared::Value(v) => Some(v),
            RSquared::Degenerate => None,
        }
    }
}

impl PceModel {
    /// Assembles a model from explicit parts; mostly for tests and tools.
    pub fn from_parts(
        region: Region,
        bases: Vec<UnivariateBasis>,
        indices: MultiIndexSet,
        coefficients: Vec<f64>,
    ) -> Result<Self> {
        if bases.len() != region.dim() || indices.dim() != region.dim() {
            return Err(Error::DimensionMismatch {
                expected: region.dim(),
                got: indices.dim(),
            });
        }
        if coefficients.len() != indices.len() {
            return Err(Error::InvalidInput(
                "coefficient count differs from index count".into(),
            ));
        }
        let maxdeg = indices.max_degree_per_dim();
        if bases.iter().zip(&maxdeg).any(|(b, &m)| b.degree() < m) {
            return Err(Error::InvalidInput(
                "basis degree below index degree".into(),
            ));
        }
        Ok(Self {
            region,
            cell: None,
            bases,
            indices,
            coefficients,
            training_tse: 0.0,
            training_count: 0,
            rank_deficient: false,
            sparse: false,
        })
    }

    pub(crate) fn with_diagnostics(
        mut self,
        training_tse: f64,
        training_count: usize,
        rank_deficient: bool,
        sparse: bool,
    ) -> Self {
        self.training_tse = training_tse;
        self.training_count = training_count;
        self.rank_deficient = rank_deficient;
        self.sparse = sparse;
        self
    }

    pub fn with_cell(mut self, cell: Rectangle) -> Self {
        self.cell = Some(cell);
        self
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn cell(&self) -> Option<&Rectangle> {
        self.cell.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn bases(&self) -> &[UnivariateBasis] {
        &self.bases
    }

    pub fn indices(&self) -> &MultiIndexSet {
        &self.indices
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn training_tse(&self) -> f64 {
        self.training_tse
    }

    pub fn training_count(&self) -> usize {
        self.training_count
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn is_sparse(&self) -> bool {
        self.sparse
    }

    /// Number of retained coefficients.
    pub fn coefficient_count(&self) -> usize {
        self.coefficients.len()
    }

    pub fn nonzero_count(&self, tol: f64) -> usize {
        self.coefficients.iter().filter(|c| c.abs() > tol).count()
    }

    /// Coefficient of the constant term, 0 when it is not retained.
    pub fn constant(&self) -> f64 {
        self.indices
            .indices()
            .iter()
            .position(|a| a.iter().all(|&v| v == 0))
            .map(|k| self.coefficients[k])
            .unwrap_or(0.0)
    }

    /// Evaluates the expansion; `x` is not required to lie in the region.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let values = basis_values(&self.bases, x);
        self.indices
            .indices()
            .iter()
            .zip(&self.coefficients)
            .map(|(alpha, c)| c * product(&values, alpha))
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

fn basis_values(bases: &[UnivariateBasis], x: &[f64]) -> Vec<Vec<f64>> {
    bases
        .iter()
        .zip(x)
        .map(|(b, &xi)| {
            let mut out = vec![0.0; b.degree() + 1];
            b.evaluate_all(xi, &mut out);
            out
        })
        .collect()
}

fn product(values: &[Vec<f64>], alpha: &[u32]) -> f64 {
    values
        .iter()
        .zip(alpha)
        .map(|(v, &a)| v[a as usize])
        .product()
}

/// Bases for every dimension of `region`, of the degree the index set needs.
pub fn local_bases(
    space: &InputSpace,
    region: &Region,
    indices: &MultiIndexSet,
) -> Result<Vec<UnivariateBasis>> {
    if space.dim() != region.dim() || indices.dim() != region.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: region.dim().min(indices.dim()),
        });
    }
    indices
        .max_degree_per_dim()
        .into_iter()
        .enumerate()
        .map(|(i, p)| build_univariate_basis(space.marginal(i), region.interval(i), p))
        .collect()
}

/// Column-major design matrix of the rows `rows` of `data`.
pub fn design_matrix(
    bases: &[UnivariateBasis],
    indices: &MultiIndexSet,
    data: &SampleSet,
    rows: &[usize],
) -> Vec<f64> {
    let n = rows.len();
    let m = indices.len();
    let mut a = vec![0.0; n * m];
    for (k, &row) in rows.iter().enumerate() {
        let values = basis_values(bases, data.row(row));
        for (j, alpha) in indices.indices().iter().enumerate() {
            a[j * n + k] = product(&values, alpha);
        }
    }
    a
}

/// Least-squares fit over the samples of `data` that lie in `region`.
pub fn fit_least_squares(
    data: &SampleSet,
    space: &InputSpace,
    region: &Region,
    indices: &MultiIndexSet,
) -> Result<PceModel> {
    let rows = data.indices_in(region);
    fit_rows(data, &rows, space, region, indices, FitMethod::LeastSquares)
}

/// Greedy forward-selection fit over the samples in `region`.
pub fn fit_sparse(
    data: &SampleSet,
    space: &InputSpace,
    region: &Region,
    candidates: &MultiIndexSet,
    config: SparseConfig,
) -> Result<PceModel> {
    let rows = data.indices_in(region);
    fit_rows(
        data,
        &rows,
        space,
        region,
        candidates,
        FitMethod::Sparse(config),
    )
}

/// Fits on an explicit row subset (assumed to lie in `region`).
pub fn fit_rows(
    data: &SampleSet,
    rows: &[usize],
    space: &InputSpace,
    region: &Region,
    indices: &MultiIndexSet,
    method: FitMethod,
) -> Result<PceModel> {
    if data.dim() != region.dim() {
        return Err(Error::DimensionMismatch {
            expected: region.dim(),
            got: data.dim(),
        });
    }
    let bases = local_bases(space, region, indices)?;
    let n = rows.len();
    let y: Vec<f64> = rows.iter().map(|&r| data.output(r)).collect();
    match method {
        FitMethod::LeastSquares => {
            let m = indices.len();
            if n < m || n == 0 {
                return Err(Error::InsufficientSamples {
                    available: n,
                    required: m.max(1),
                });
            }
            let a = design_matrix(&bases, indices, data, rows);
            let sol = least_squares(&a, n, m, &y);
            let tse = residual_tse(&a, n, &sol.coefficients, &y);
            Ok(PceModel {
                region: region.clone(),
                cell: None,
                bases,
                indices: indices.clone(),
                coefficients: sol.coefficients,
                training_tse: tse,
                training_count: n,
                rank_deficient: sol.rank_deficient,
                sparse: false,
            })
        }
        FitMethod::Sparse(config) => {
            if n < 2 {
                return Err(Error::InsufficientSamples {
                    available: n,
                    required: 2,
                });
            }
            let a = design_matrix(&bases, indices, data, rows);
            let selected = forward_selection(&a, n, indices.len(), &y, indices, config);
            let subset = indices.select(&selected);
            let mut sub_a = Vec::with_capacity(n * subset.len());
            let mut order = selected.clone();
            order.sort_unstable();
            for &j in &order {
                sub_a.extend_from_slice(&a[j * n..(j + 1) * n]);
            }
            let sol = least_squares(&sub_a, n, order.len(), &y);
            let tse = residual_tse(&sub_a, n, &sol.coefficients, &y);
            let bases = local_bases(space, region, &subset)?;
            Ok(PceModel {
                region: region.clone(),
                cell: None,
                bases,
                indices: subset,
                coefficients: sol.coefficients,
                training_tse: tse,
                training_count: n,
                rank_deficient: sol.rank_deficient,
                sparse: true,
            })
        }
    }
}

fn residual_tse(a: &[f64], n: usize, coef: &[f64], y: &[f64]) -> f64 {
    let mut fitted = vec![0.0; n];
    for (j, c) in coef.iter().enumerate() {
        for (f, v) in fitted.iter_mut().zip(&a[j * n..(j + 1) * n]) {
            *f += c * v;
        }
    }
    fitted.iter().zip(y).map(|(f, y)| (y - f).powi(2)).sum()
}

/// Gram-Schmidt factorization grown one column at a time.
struct GrowingQr {
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    qty: Vec<f64>,
}

const DEPENDENCE_TOL: f64 = 1e-9;

impl GrowingQr {
    fn new() -> Self {
        Self {
            q: Vec::new(),
            r: Vec::new(),
            qty: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.q.len()
    }

    /// Orthogonalizes `col` against the current basis; returns the new
    /// direction and its R column, or None when `col` is dependent.
    fn orthogonalize(&self, col: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let scale = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if scale == 0.0 || self.q.len() >= col.len() {
            return None;
        }
        let mut v = col.to_vec();
        let mut rcol = vec![0.0; self.q.len() + 1];
        for _ in 0..2 {
            for (k, qk) in self.q.iter().enumerate() {
                let c: f64 = qk.iter().zip(&v).map(|(a, b)| a * b).sum();
                rcol[k] += c;
                v.iter_mut().zip(qk).for_each(|(vi, qi)| *vi -= c * qi);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= DEPENDENCE_TOL * scale {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        rcol[self.q.len()] = norm;
        Some((v, rcol))
    }

    fn push(&mut self, q: Vec<f64>, rcol: Vec<f64>, y: &[f64]) -> f64 {
        let c: f64 = q.iter().zip(y).map(|(a, b)| a * b).sum();
        self.q.push(q);
        self.r.push(rcol);
        self.qty.push(c);
        c
    }

    fn solve(&self) -> Vec<f64> {
        let m = self.q.len();
        let mut x = vec![0.0; m];
        for k in (0..m).rev() {
            let mut s = self.qty[k];
            for j in k + 1..m {
                s -= self.r[j][k] * x[j];
            }
            x[k] = s / self.r[k][k];
        }
        x
    }
}

struct Fold {
    train: Vec<usize>,
    valid: Vec<usize>,
    y_train: Vec<f64>,
    qr: GrowingQr,
    /// Positions (in selection order) of the columns active in this fold.
    active: Vec<usize>,
}

impl Fold {
    fn add(&mut self, a: &[f64], n: usize, j: usize, position: usize) {
        let col: Vec<f64> = self.train.iter().map(|&k| a[j * n + k]).collect();
        if let Some((q, r)) = self.qr.orthogonalize(&col) {
            self.qr.push(q, r, &self.y_train);
            self.active.push(position);
        }
    }

    fn error(&self, a: &[f64], n: usize, selected: &[usize], y: &[f64]) -> f64 {
        let coef = self.qr.solve();
        self.valid
            .iter()
            .map(|&k| {
                let pred: f64 = self
                    .active
                    .iter()
                    .zip(&coef)
                    .map(|(&pos, c)| c * a[selected[pos] * n + k])
                    .sum();
                (y[k] - pred).powi(2)
            })
            .sum()
    }
}

/// Returns candidate positions of the selected columns, in selection order.
fn forward_selection(
    a: &[f64],
    n: usize,
    m: usize,
    y: &[f64],
    indices: &MultiIndexSet,
    config: SparseConfig,
) -> Vec<usize> {
    let k_folds = config.folds.max(2).min(n);
    let mut folds: Vec<Fold> = (0..k_folds)
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|k| k % k_folds != f).collect();
            let valid: Vec<usize> = (0..n).filter(|k| k % k_folds == f).collect();
            let y_train = train.iter().map(|&k| y[k]).collect();
            Fold {
                train,
                valid,
                y_train,
                qr: GrowingQr::new(),
                active: Vec::new(),
            }
        })
        .collect();
    let norms: Vec<f64> = (0..m)
        .map(|j| {
            a[j * n..(j + 1) * n]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let total: f64 = y.iter().map(|v| v * v).sum();
    let exact = 1e-24 * total.max(f64::MIN_POSITIVE);
    let cap = config.max_terms.unwrap_or(m).min(m).max(1);

    let mut full = GrowingQr::new();
    let mut residual = y.to_vec();
    let mut selected: Vec<usize> = Vec::new();
    let mut excluded = vec![false; m];

    let add = |j: usize,
               full: &mut GrowingQr,
               residual: &mut Vec<f64>,
               selected: &mut Vec<usize>,
               folds: &mut Vec<Fold>|
     -> bool {
        let col = &a[j * n..(j + 1) * n];
        match full.orthogonalize(col) {
            Some((q, r)) => {
                let c = full.push(q, r, y);
                let qn = &full.q[full.len() - 1];
                residual
                    .iter_mut()
                    .zip(qn)
                    .for_each(|(ri, qi)| *ri -= c * qi);
                let pos = selected.len();
                selected.push(j);
                for fold in folds.iter_mut() {
                    fold.add(a, n, j, pos);
                }
                true
            }
            None => false,
        }
    };

    if let Some(zero) = indices
        .indices()
        .iter()
        .position(|alpha| alpha.iter().all(|&v| v == 0))
    {
        excluded[zero] = true;
        add(zero, &mut full, &mut residual, &mut selected, &mut folds);
    }

    let cv = |selected: &[usize], folds: &[Fold]| -> f64 {
        folds.iter().map(|f| f.error(a, n, selected, y)).sum()
    };

    let mut best_len = selected.len();
    let mut best_cv = if selected.is_empty() {
        total
    } else {
        cv(&selected, &folds)
    };
    let mut stall = 0usize;

    loop {
        let res2: f64 = residual.iter().map(|v| v * v).sum();
        if selected.len() >= cap || res2 <= exact || best_cv <= exact {
            break;
        }
        // candidates ranked by normalized correlation with the residual
        let mut ranked: Vec<(f64, usize)> = (0..m)
            .filter(|&j| !excluded[j] && norms[j] > 0.0)
            .map(|j| {
                let dot: f64 = a[j * n..(j + 1) * n]
                    .iter()
                    .zip(&residual)
                    .map(|(p, r)| p * r)
                    .sum();
                (dot.abs() / norms[j], j)
            })
            .collect();
        if ranked.is_empty() {
            break;
        }
        ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let mut added = false;
        for &(_, j) in &ranked {
            excluded[j] = true;
            if add(j, &mut full, &mut residual, &mut selected, &mut folds) {
                added = true;
                break;
            }
        }
        if !added {
            break;
        }
        let score = cv(&selected, &folds);
        if score < best_cv * (1.0 - 1e-9) || score <= exact {
            best_cv = score;
            best_len = selected.len();
            stall = 0;
        } else {
            stall += 1;
            if stall >= config.patience.max(1) {
                break;
            }
        }
    }
    // exact fits stop on the residual test before cross-validation sees them
    let res2: f64 = residual.iter().map(|v| v * v).sum();
    if res2 <= exact {
        best_len = selected.len();
    }
    selected.truncate(best_len.max(1).min(selected.len()));
    if selected.is_empty() {
        // no usable column at all: keep the first nonzero candidate
        if let Some(j) = (0..m).find(|&j| norms[j] > 0.0) {
            selected.push(j);
        } else {
            selected.push(0);
        }
    }
    selected
}

/// Total squared error of `model` over the samples of `data` in its region.
pub fn tse(model: &PceModel, data: &SampleSet) -> f64 {
    data.indices_in(model.region())
        .into_iter()
        .map(|k| (data.output(k) - model.predict(data.row(k))).powi(2))
        .sum()
}

/// `1 - TSE / sum (y - mean)^2` over the samples in the model's region.
pub fn r_squared(model: &PceModel, data: &SampleSet) -> RSquared {
    let rows = data.indices_in(model.region());
    if rows.len() < 2 {
        return RSquared::Degenerate;
    }
    let mean = rows.iter().map(|&k| data.output(k)).sum::<f64>() / rows.len() as f64;
    let ss: f64 = rows.iter().map(|&k| (data.output(k) - mean).powi(2)).sum();
    if ss == 0.0 {
        return RSquared::Degenerate;
    }
    RSquared::Value(1.0 - tse(model, data) / ss)
}

pub fn coefficient_count(model: &PceModel) -> usize {
    model.coefficient_count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthobasis::enumerate_linear;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn uniform_data(d: usize, n: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> SampleSet {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let inputs: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
        SampleSet::from_function(d, inputs, f).unwrap()
    }

    fn unit(d: usize) -> (InputSpace, Region) {
        let s = InputSpace::unit_cube(d).unwrap();
        let r = s.support();
        (s, r)
    }

    #[test]
    fn constant_data_is_recovered() {
        let (s, r) = unit(2);
        let data = uniform_data(2, 40, 1, |_| 2.5);
        let m = fit_least_squares(&data, &s, &r, &enumerate_linear(2, 3)).unwrap();
        assert!((m.coefficients()[0] - 2.5).abs() < 1e-10);
        assert!(m.coefficients()[1..].iter().all(|c| c.abs() < 1e-10));
        assert_eq!(m.nonzero_count(1e-10), 1);
    }

    #[test]
    fn quadratic_is_exact() {
        let (s, r) = unit(1);
        let data = uniform_data(1, 100, 2, |x| x[0] * x[0]);
        let m = fit_least_squares(&data, &s, &r, &enumerate_linear(1, 2)).unwrap();
        assert!(m.training_tse() <= 1e-18, "tse {}", m.training_tse());
        // normal-equations oracle in the monomial basis
        let xs: Vec<f64> = data.rows().map(|x| x[0]).collect();
        let pred: Vec<f64> = xs.iter().map(|&x| m.predict(&[x])).collect();
        for (x, p) in xs.iter().zip(pred) {
            assert!((p - x * x).abs() < 1e-12);
        }
    }

    #[test]
    fn step_function_keeps_gibbs_residual() {
        let (s, r) = unit(1);
        let data = uniform_data(1, 1000, 3, |x| if x[0] > 0.5 { 1.0 } else { 0.0 });
        let m = fit_least_squares(&data, &s, &r, &enumerate_linear(1, 8)).unwrap();
        assert!(m.training_tse() > 1.0);
        // overshoot just right of the jump and undershoot just left
        let right = m.predict(&[0.53]);
        let left = m.predict(&[0.47]);
        assert!(right > 0.5 && left < 0.5);
        let wiggle: Vec<f64> = (0..40)
            .map(|k| m.predict(&[0.55 + 0.01 * k as f64]) - 1.0)
            .collect();
        let sign_changes = wiggle.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
        assert!(sign_changes >= 2);
    }

    #[test]
    fn underdetermined_is_an_error() {
        let (s, r) = unit(2);
        let data = uniform_data(2, 5, 4, |x| x[0]);
        let err = fit_least_squares(&data, &s, &r, &enumerate_linear(2, 2)).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientSamples {
                available: 5,
                required: 6
            }
        ));
    }

    #[test]
    fn rank_deficient_design_is_flagged() {
        let (s, r) = unit(2);
        // all samples on the line x2 = x1
        let inputs: Vec<f64> = (0..20)
            .flat_map(|k| [k as f64 / 19.0, k as f64 / 19.0])
            .collect();
        let data = SampleSet::from_function(2, inputs, |x| x[0]).unwrap();
        let m = fit_least_squares(&data, &s, &r, &enumerate_linear(2, 1)).unwrap();
        assert!(m.is_rank_deficient());
        assert!(m.training_tse() < 1e-20);
    }

    #[test]
    fn tse_examples() {
        let (s, r) = unit(1);
        let zero = PceModel::from_parts(
            r.clone(),
            local_bases(&s, &r, &enumerate_linear(1, 0)).unwrap(),
            enumerate_linear(1, 0),
            vec![0.0],
        )
        .unwrap();
        let data = SampleSet::from_rows(&[vec![0.1], vec![0.7]], vec![1.0, 2.0]).unwrap();
        assert_eq!(tse(&zero, &data), 5.0);
        let half = Region::new(vec![0.2], vec![0.6]).unwrap();
        let z2 = PceModel::from_parts(
            half.clone(),
            local_bases(&s, &half, &enumerate_linear(1, 0)).unwrap(),
            enumerate_linear(1, 0),
            vec![0.0],
        )
        .unwrap();
        assert_eq!(tse(&z2, &data), 0.0);
    }

    #[test]
    fn r_squared_examples() {
        let (s, r) = unit(1);
        let data = uniform_data(1, 50, 5, |x| 3.0 * x[0]);
        let exact = fit_least_squares(&data, &s, &r, &enumerate_linear(1, 1)).unwrap();
        assert!((r_squared(&exact, &data).value().unwrap() - 1.0).abs() < 1e-12);
        let mean = fit_least_squares(&data, &s, &r, &enumerate_linear(1, 0)).unwrap();
        assert!(r_squared(&mean, &data).value().unwrap().abs() < 1e-12);
        let flat = uniform_data(1, 10, 6, |_| 1.0);
        let m = fit_least_squares(&flat, &s, &r, &enumerate_linear(1, 0)).unwrap();
        assert_eq!(r_squared(&m, &flat), RSquared::Degenerate);
    }

    #[test]
    fn coefficient_counts() {
        let (s, r) = unit(4);
        let data = uniform_data(4, 60, 7, |x| x.iter().sum());
        let m = fit_least_squares(&data, &s, &r, &enumerate_linear(4, 2)).unwrap();
        assert_eq!(coefficient_count(&m), 15);
        let (s10, r10) = unit(10);
        let data10 = uniform_data(10, 100, 8, |x| x[0]);
        let m10 = fit_least_squares(&data10, &s10, &r10, &enumerate_linear(10, 2)).unwrap();
        assert_eq!(coefficient_count(&m10), 66);
    }

    #[test]
    fn sparse_recovers_quadratic_support() {
        let (s, r) = unit(1);
        let data = uniform_data(1, 200, 9, |x| x[0] * x[0]);
        let m = fit_sparse(
            &data,
            &s,
            &r,
            &enumerate_linear(1, 8),
            SparseConfig::default(),
        )
        .unwrap();
        assert!(m.is_sparse());
        assert!(m.indices().indices().iter().all(|a| a[0] <= 2));
        assert!(m.training_tse() < 1e-18);
    }

    #[test]
    fn sparse_constant_selects_one_term() {
        let (s, r) = unit(3);
        let data = uniform_data(3, 50, 10, |_| -1.25);
        let m = fit_sparse(
            &data,
            &s,
            &r,
            &enumerate_linear(3, 3),
            SparseConfig::default(),
        )
        .unwrap();
        assert_eq!(m.coefficient_count(), 1);
        assert!((m.constant() + 1.25).abs() < 1e-12);
    }

    #[test]
    fn sparse_respects_term_cap() {
        let (s, r) = unit(2);
        let data = uniform_data(2, 300, 11, |x| (5.0 * x[0]).sin() + x[1].powi(3));
        let cfg = SparseConfig {
            max_terms: Some(4),
            ..SparseConfig::default()
        };
        let m = fit_sparse(&data, &s, &r, &enumerate_linear(2, 6), cfg).unwrap();
        assert!(m.coefficient_count() <= 4);
    }

    #[test]
    fn json_round_trip() {
        let (s, r) = unit(2);
        let data = uniform_data(2, 80, 12, |x| (x[0] - 0.3).exp() * x[1]);
        let m = fit_least_squares(&data, &s, &r, &enumerate_linear(2, 3)).unwrap();
        let back = PceModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        for x in data.rows() {
            assert_eq!(back.predict(x), m.predict(x));
        }
    }

    #[test]
    fn constant_converges_to_conditional_mean() {
        // E[x1 + x2^2] on [0,0.5] x [0,1] = 0.25 + 1/3
        let s = InputSpace::unit_cube(2).unwrap();
        let region = Region::new(vec![0.0, 0.0], vec![0.5, 1.0]).unwrap();
        let n = 100_000;
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let inputs: Vec<f64> = (0..n)
            .flat_map(|_| [0.5 * rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let data = SampleSet::from_function(2, inputs, |x| x[0] + x[1] * x[1]).unwrap();
        let m = fit_least_squares(&data, &s, &region, &enumerate_linear(2, 1)).unwrap();
        let mean = 0.25 + 1.0 / 3.0;
        // variance of the target bounds the standard error of the constant
        let var = 0.25f64.powi(2) / 3.0 + 4.0 / 45.0;
        let se = (var / n as f64).sqrt();
        assert!((m.constant() - mean).abs() < 3.0 * se);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn least_squares_is_optimal(seed in 0u64..1000, p in 0usize..4, j in 0usize..10, sign in prop::bool::ANY) {
            let (s, r) = unit(2);
            let data = uniform_data(2, 60, seed, |x| (3.0 * x[0]).cos() + x[0] * x[1]);
            let set = enumerate_linear(2, p);
            let m = fit_least_squares(&data, &s, &r, &set).unwrap();
            let j = j % set.len();
            let mut coef = m.coefficients().to_vec();
            coef[j] += if sign { 1e-3 } else { -1e-3 };
            let perturbed = PceModel::from_parts(r.clone(), m.bases().to_vec(), set, coef).unwrap();
            prop_assert!(tse(&perturbed, &data) >= m.training_tse());
            let recomputed = tse(&m, &data);
            prop_assert!((recomputed - m.training_tse()).abs() <= 1e-9 * recomputed.max(1e-300) + 1e-24);
        }

        #[test]
        fn nested_sets_do_not_increase_tse(seed in 0u64..1000, p in 0usize..4) {
            let (s, r) = unit(2);
            let data = uniform_data(2, 80, seed, |x| (4.0 * x[0] * x[1]).sin());
            let small = fit_least_squares(&data, &s, &r, &enumerate_linear(2, p)).unwrap();
            let large = fit_least_squares(&data, &s, &r, &enumerate_linear(2, p + 1)).unwrap();
            prop_assert!(large.training_tse() <= small.training_tse() * (1.0 + 1e-10) + 1e-24);
        }

        #[test]
        fn sparse_is_subset_of_full(seed in 0u64..1000) {
            let (s, r) = unit(2);
            let data = uniform_data(2, 120, seed, |x| if x[0] > 0.4 { x[1] } else { x[0] * x[0] });
            let set = enumerate_linear(2, 4);
            let full = fit_least_squares(&data, &s, &r, &set).unwrap();
            let sparse = fit_sparse(&data, &s, &r, &set, SparseConfig::default()).unwrap();
            prop_assert!(sparse.indices().indices().iter().all(|a| set.position(a).is_some()));
            prop_assert!(sparse.training_tse() >= full.training_tse() * (1.0 - 1e-10));
        }
    }
}
