//! Orthonormal polynomial families on intervals and their tensorization.
//!
//! Every univariate family is stored by the coefficients of its orthonormal
//! three-term recurrence in the reference variable
//! `u = (2x - lower - upper) / (upper - lower)`:
//!
//! ```text
//! u phi_n(u) = b_{n+1} phi_{n+1}(u) + a_n phi_n(u) + b_n phi_{n-1}(u)
//! ```
//!
//! Uniform marginals restricted to a subinterval are again uniform, so they
//! get the closed-form Legendre coefficients (`a_n = 0`,
//! `b_n = n / sqrt(4n^2 - 1)`). Density-defined marginals get theirs from a
//! discretized Stieltjes procedure on the conditional density. Evaluation
//! always runs the recurrence; monomial coefficients are derived on demand
//! for integrals of basis products.

use serde::{Deserialize, Serialize};

use crate::domain::MarginalDistribution;
use crate::error::{Error, Result};
use crate::quadrature::GaussRule;

/// Largest degree for which monomial coefficients are produced.
pub const MAX_MONOMIAL_DEGREE: usize = 12;

/// Largest degree accepted by the recurrence evaluator.
pub const MAX_DEGREE: usize = 40;

const STIELTJES_PANELS: usize = 16;
const STIELTJES_NODES: usize = 24;
const SINGULAR_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    Legendre,
    Recurrence,
}

/// Orthonormal polynomials `phi_0..phi_p` for a marginal restricted to an
/// interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateBasis {
    lower: f64,
    upper: f64,
    degree: usize,
    family: BasisFamily,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    diag: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    offdiag: Vec<f64>,
}

impl UnivariateBasis {
    /// Shifted and scaled Legendre polynomials, orthonormal for the uniform
    /// density on `[lower, upper]`.
    pub fn legendre(lower: f64, upper: f64, degree: usize) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::DegenerateInterval { lower, upper });
        }
        if degree > MAX_DEGREE {
            return Err(Error::UnsupportedDegree {
                degree,
                max: MAX_DEGREE,
            });
        }
        let diag = vec![0.0; degree];
        let offdiag = (0..=degree)
            .map(|n| {
                let n = n as f64;
                n / (4.0 * n * n - 1.0).abs().sqrt()
            })
            .collect::<Vec<_>>();
        Ok(Self {
            lower,
            upper,
            degree,
            family: BasisFamily::Legendre,
            diag,
            offdiag,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn family(&self) -> BasisFamily {
        self.family
    }

    fn b(&self, n: usize) -> f64 {
        self.offdiag[n]
    }

    fn a(&self, n: usize) -> f64 {
        self.diag[n]
    }

    /// Maps a model-unit coordinate to the reference variable on `[-1, 1]`.
    pub fn to_reference(&self, x: f64) -> f64 {
        (2.0 * x - self.lower - self.upper) / (self.upper - self.lower)
    }

    /// Writes `phi_0(x) .. phi_p(x)` into `out[..=p]`.
    pub fn evaluate_all(&self, x: f64, out: &mut [f64]) {
        let u = self.to_reference(x);
        let p = out.len().saturating_sub(1).min(self.degree);
        out[0] = 1.0;
        if p == 0 {
            return;
        }
        out[1] = (u - self.a(0)) / self.b(1);
        for n in 1..p {
            out[n + 1] = ((u - self.a(n)) * out[n] - self.b(n) * out[n - 1]) / self.b(n + 1);
        }
    }

    pub fn evaluate(&self, alpha: usize, x: f64) -> f64 {
        assert!(
            alpha <= self.degree,
            "degree {alpha} above basis degree {}",
            self.degree
        );
        let mut buf = vec![0.0; alpha + 1];
        self.evaluate_all(x, &mut buf);
        buf[alpha]
    }

    /// Coefficients `c[alpha][rho]` with `phi_alpha = sum_rho c[alpha][rho] v^rho`
    /// for the variable `v` defined by `u = scale * v + shift`.
    pub fn coefficients_in(&self, scale: f64, shift: f64) -> Result<Vec<Vec<f64>>> {
        if self.degree > MAX_MONOMIAL_DEGREE {
            return Err(Error::UnsupportedDegree {
                degree: self.degree,
                max: MAX_MONOMIAL_DEGREE,
            });
        }
        let p = self.degree;
        let mut table: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
        let mut first = vec![0.0; p + 1];
        first[0] = 1.0;
        table.push(first);
        for n in 0..p {
            let mut next = vec![0.0; p + 1];
            let cur = &table[n];
            let offset = shift - self.a(n);
            for rho in 0..=p {
                let c = cur[rho];
                if c == 0.0 {
                    continue;
                }
                next[rho] += offset * c;
                if rho < p {
                    next[rho + 1] += scale * c;
                }
            }
            if n > 0 {
                let prev = &table[n - 1];
                for rho in 0..=p {
                    next[rho] -= self.b(n) * prev[rho];
                }
            }
            let bn = self.b(n + 1);
            next.iter_mut().for_each(|v| *v /= bn);
            table.push(next);
        }
        Ok(table)
    }

    /// Monomial coefficients `beta[alpha][rho]` in the model-unit variable x.
    pub fn monomial_coefficients(&self) -> Result<Vec<Vec<f64>>> {
        let w = self.upper - self.lower;
        self.coefficients_in(2.0 / w, -(self.lower + self.upper) / w)
    }
}

/// Builds the orthonormal family of `marginal` conditioned on `interval`.
pub fn build_univariate_basis(
    marginal: &MarginalDistribution,
    interval: (f64, f64),
    p_max: usize,
) -> Result<UnivariateBasis> {
    let (lower, upper) = interval;
    if !(lower < upper) {
        return Err(Error::DegenerateInterval { lower, upper });
    }
    let tol = 1e-12 * (marginal.upper() - marginal.lower()).abs().max(1.0);
    if lower < marginal.lower() - tol || upper > marginal.upper() + tol {
        return Err(Error::InvalidInput(format!(
            "interval [{lower}, {upper}] is not inside the support [{}, {}]",
            marginal.lower(),
            marginal.upper()
        )));
    }
    match marginal {
        MarginalDistribution::Uniform { .. } => UnivariateBasis::legendre(lower, upper, p_max),
        MarginalDistribution::Density(_) => stieltjes(marginal, lower, upper, p_max),
    }
}

fn stieltjes(
    marginal: &MarginalDistribution,
    lower: f64,
    upper: f64,
    degree: usize,
) -> Result<UnivariateBasis> {
    if degree > MAX_DEGREE {
        return Err(Error::UnsupportedDegree {
            degree,
            max: MAX_DEGREE,
        });
    }
    let rule = GaussRule::new(STIELTJES_NODES);
    let mut nodes = Vec::with_capacity(STIELTJES_PANELS * STIELTJES_NODES);
    let mut weights = Vec::with_capacity(nodes.capacity());
    let h = 2.0 / STIELTJES_PANELS as f64;
    for panel in 0..STIELTJES_PANELS {
        let a = -1.0 + panel as f64 * h;
        for (u, w) in rule.mapped(a, a + h) {
            let x = 0.5 * (lower + upper) + 0.5 * (upper - lower) * u;
            nodes.push(u);
            weights.push(w * marginal.pdf(x));
        }
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput(format!(
            "interval [{lower}, {upper}] carries no probability mass"
        )));
    }
    weights.iter_mut().for_each(|w| *w /= total);

    let mut diag = Vec::with_capacity(degree);
    let mut offdiag = vec![0.0; degree + 1];
    let mut prev = vec![0.0; nodes.len()];
    let mut cur = vec![1.0; nodes.len()];
    let mut prev_norm = 1.0;
    for n in 0..=degree {
        let norm: f64 = weights.iter().zip(&cur).map(|(w, p)| w * p * p).sum();
        if n > 0 {
            let beta = norm / prev_norm;
            if !(beta > SINGULAR_RATIO) {
                return Err(Error::SingularMoments {
                    failed_degree: n,
                    max_degree: n - 1,
                });
            }
            offdiag[n] = beta.sqrt();
        }
        if n == degree {
            break;
        }
        let a = weights
            .iter()
            .zip(&cur)
            .zip(&nodes)
            .map(|((w, p), u)| w * u * p * p)
            .sum::<f64>()
            / norm;
        diag.push(a);
        let beta = if n == 0 { 0.0 } else { offdiag[n] * offdiag[n] };
        let next: Vec<f64> = (0..nodes.len())
            .map(|k| (nodes[k] - a) * cur[k] - beta * prev[k])
            .collect();
        prev = std::mem::replace(&mut cur, next);
        prev_norm = norm;
    }
    Ok(UnivariateBasis {
        lower,
        upper,
        degree,
        family: BasisFamily::Recurrence,
        diag,
        offdiag,
    })
}

/// A d-tuple of univariate degrees.
pub type MultiIndex = Vec<u32>;

/// A finite truncation set of multi-indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    dim: usize,
    scheme: String,
    degree: usize,
    indices: Vec<MultiIndex>,
}

impl MultiIndexSet {
    /// Builds a set from explicit indices (e.g. a sparse selection).
    pub fn from_indices(dim: usize, scheme: &str, indices: Vec<MultiIndex>) -> Result<Self> {
        if indices.iter().any(|a| a.len() != dim) {
            return Err(Error::InvalidInput(
                "multi-index length differs from dimension".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        if !indices.iter().all(|a| seen.insert(a.clone())) {
            return Err(Error::InvalidInput("duplicate multi-index".into()));
        }
        let degree = indices.iter().map(|a| total_degree(a)).max().unwrap_or(0);
        Ok(Self {
            dim,
            scheme: scheme.to_string(),
            degree,
            indices,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scheme(&self) -> &str {
        &self.scheme
    }

    /// Total-degree bound of the set.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn get(&self, k: usize) -> &MultiIndex {
        &self.indices[k]
    }

    pub fn position(&self, alpha: &[u32]) -> Option<usize> {
        self.indices.iter().position(|a| a.as_slice() == alpha)
    }

    /// Largest degree used along each dimension.
    pub fn max_degree_per_dim(&self) -> Vec<usize> {
        (0..self.dim)
            .map(|i| {
                self.indices
                    .iter()
                    .map(|a| a[i] as usize)
                    .max()
                    .unwrap_or(0)
            })
            .collect()
    }

    /// Subset keeping the given positions, in their original order.
    pub fn select(&self, positions: &[usize]) -> Self {
        let mut pos = positions.to_vec();
        pos.sort_unstable();
        pos.dedup();
        let indices: Vec<MultiIndex> = pos.iter().map(|&k| self.indices[k].clone()).collect();
        let degree = indices.iter().map(|a| total_degree(a)).max().unwrap_or(0);
        Self {
            dim: self.dim,
            scheme: format!("{}/selected", self.scheme.trim_end_matches("/selected")),
            degree,
            indices,
        }
    }
}

pub fn total_degree(alpha: &[u32]) -> usize {
    alpha.iter().map(|&a| a as usize).sum()
}

/// All multi-indices with `|alpha| <= p`, graded by total degree and, within
/// a degree, in decreasing lexicographic order (so `(1,0)` precedes `(0,1)`).
pub fn enumerate_linear(d: usize, p: usize) -> MultiIndexSet {
    assert!(d >= 1, "dimension must be at least 1");
    let mut indices = Vec::with_capacity(binomial(d + p, p) as usize);
    for total in 0..=p {
        let mut current = vec![0u32; d];
        compositions(total as u32, 0, &mut current, &mut indices);
    }
    MultiIndexSet {
        dim: d,
        scheme: "linear".into(),
        degree: p,
        indices,
    }
}

fn compositions(remaining: u32, pos: usize, current: &mut MultiIndex, out: &mut Vec<MultiIndex>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v;
        compositions(remaining - v, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// Binomial coefficient `C(n, k)`.
pub fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// `Psi_alpha(x) = prod_i phi^{(i)}_{alpha_i}(x_i)`.
pub fn evaluate_multivariate(bases: &[UnivariateBasis], alpha: &[u32], x: &[f64]) -> f64 {
    bases
        .iter()
        .zip(alpha)
        .zip(x)
        .map(|((b, &a), &xi)| b.evaluate(a as usize, xi))
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DensityMarginal;

    fn unif01() -> MarginalDistribution {
        MarginalDistribution::uniform(0.0, 1.0).unwrap()
    }

    fn gram(basis: &UnivariateBasis, f: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
        let rule = GaussRule::new(40);
        let p = basis.degree();
        let (lo, hi) = basis.interval();
        let mass = rule.integrate(&f, lo, hi);
        let mut g = vec![vec![0.0; p + 1]; p + 1];
        let mut buf = vec![0.0; p + 1];
        for (x, w) in rule.mapped(lo, hi) {
            basis.evaluate_all(x, &mut buf);
            for a in 0..=p {
                for b in 0..=p {
                    g[a][b] += w * f(x) * buf[a] * buf[b] / mass;
                }
            }
        }
        g
    }

    #[test]
    fn legendre_low_degrees_match_closed_forms() {
        let b = build_univariate_basis(&unif01(), (0.0, 1.0), 2).unwrap();
        for &x in &[0.0, 0.13, 0.5, 0.77, 1.0] {
            assert_eq!(b.evaluate(0, x), 1.0);
            let phi1 = 3f64.sqrt() * (2.0 * x - 1.0);
            let phi2 = 5f64.sqrt() * (6.0 * x * x - 6.0 * x + 1.0);
            assert!((b.evaluate(1, x) - phi1).abs() < 1e-14);
            assert!((b.evaluate(2, x) - phi2).abs() < 1e-13);
        }
        assert_eq!(b.evaluate(1, 0.5), 0.0);
        let rule = GaussRule::new(10);
        let norm2 = rule.integrate(|x| b.evaluate(2, x).powi(2), 0.0, 1.0);
        assert!((norm2 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn orthonormal_on_subintervals() {
        for &(lo, hi) in &[(0.0f64, 1.0f64), (2.0 / 9.0, 5.0 / 9.0), (-3.0, 7.5)] {
            let m = MarginalDistribution::uniform(lo.min(-3.0), hi.max(7.5)).unwrap();
            let b = build_univariate_basis(&m, (lo, hi), 10).unwrap();
            let g = gram(&b, |_| 1.0);
            for (a, row) in g.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    let want = if a == c { 1.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-8, "({a},{c}) = {v}");
                }
            }
        }
    }

    #[test]
    fn density_marginal_basis_is_orthonormal() {
        let d = DensityMarginal::new("tri", 0.0, 2.0, |x| 1.0 + x * x).unwrap();
        let m = MarginalDistribution::Density(d.clone());
        let b = build_univariate_basis(&m, (0.5, 1.5), 6).unwrap();
        assert_eq!(b.family(), BasisFamily::Recurrence);
        let g = gram(&b, |x| d.pdf(x));
        for (a, row) in g.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let want = if a == c { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-8, "({a},{c}) = {v}");
            }
        }
    }

    #[test]
    fn constant_density_reproduces_legendre() {
        let d = DensityMarginal::new("flat", 0.0, 1.0, |_| 3.0).unwrap();
        let m = MarginalDistribution::Density(d);
        let b = build_univariate_basis(&m, (0.0, 1.0), 8).unwrap();
        let l = UnivariateBasis::legendre(0.0, 1.0, 8).unwrap();
        for k in 0..=20 {
            let x = k as f64 / 20.0;
            for a in 0..=8 {
                assert!((b.evaluate(a, x) - l.evaluate(a, x)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_moments_are_reported() {
        // mass concentrated on a tiny bump: far fewer support points than degree
        let d = DensityMarginal::new("spike", 0.0, 1.0, |x| {
            if (x - 0.5).abs() < 1e-9 {
                1.0
            } else {
                0.0
            }
        });
        // either normalization fails or the recurrence collapses
        if let Ok(d) = d {
            let m = MarginalDistribution::Density(d);
            let err = build_univariate_basis(&m, (0.0, 1.0), 5);
            assert!(err.is_err());
        }
        let cut =
            DensityMarginal::new("half", 0.0, 1.0, |x| if x < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let m = MarginalDistribution::Density(cut);
        match build_univariate_basis(&m, (0.5 + 1e-3, 1.0), 3) {
            Err(Error::InvalidInput(_)) | Err(Error::SingularMoments { .. }) => {}
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_interval_is_rejected() {
        assert!(matches!(
            build_univariate_basis(&unif01(), (0.3, 0.3), 2),
            Err(Error::DegenerateInterval { .. })
        ));
        assert!(build_univariate_basis(&unif01(), (0.3, 1.3), 2).is_err());
    }

    #[test]
    fn monomial_form_matches_recurrence() {
        let b = UnivariateBasis::legendre(0.2, 0.9, 12).unwrap();
        let coeffs = b.monomial_coefficients().unwrap();
        for k in 0..=10 {
            let x = 0.2 + 0.07 * k as f64;
            for (a, c) in coeffs.iter().enumerate() {
                let horner = c.iter().rev().fold(0.0, |acc, &v| acc * x + v);
                let rec = b.evaluate(a, x);
                assert!((horner - rec).abs() < 1e-6 * (1.0 + rec.abs()), "a={a}");
            }
            // leading coefficient nonzero: exact degree
            for (a, c) in coeffs.iter().enumerate() {
                assert!(c[a] != 0.0);
                assert!(c[a + 1..].iter().all(|&v| v == 0.0));
            }
        }
        let high = UnivariateBasis::legendre(0.0, 1.0, 13).unwrap();
        assert!(high.monomial_coefficients().is_err());
    }

    #[test]
    fn affine_equivariance() {
        let a = UnivariateBasis::legendre(0.0, 1.0, 6).unwrap();
        let b = UnivariateBasis::legendre(-4.0, 10.0, 6).unwrap();
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            for deg in 0..=6 {
                let va = a.evaluate(deg, t);
                let vb = b.evaluate(deg, -4.0 + 14.0 * t);
                assert!((va - vb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_enumeration_cardinalities() {
        assert_eq!(enumerate_linear(4, 2).len(), 15);
        assert_eq!(enumerate_linear(1, 0).indices(), &[vec![0u32]]);
        assert_eq!(enumerate_linear(10, 2).len(), 66);
        assert_eq!(enumerate_linear(4, 8).len(), 495);
        let set = enumerate_linear(2, 2);
        assert_eq!(
            set.indices(),
            &[
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
        assert_eq!(enumerate_linear(3, 4), enumerate_linear(3, 4));
        assert_eq!(binomial(12, 8), 495);
    }

    #[test]
    fn multivariate_examples() {
        let b = UnivariateBasis::legendre(0.0, 1.0, 3).unwrap();
        let bases = vec![b.clone(), b];
        assert_eq!(evaluate_multivariate(&bases, &[0, 0], &[0.3, 0.8]), 1.0);
        assert_eq!(evaluate_multivariate(&bases, &[1, 0], &[0.5, 0.9]), 0.0);
        let v = evaluate_multivariate(&bases, &[1, 1], &[1.0, 1.0]);
        assert!((v - 3.0).abs() < 1e-14);
    }

    #[test]
    fn duplicate_indices_rejected() {
        assert!(MultiIndexSet::from_indices(2, "custom", vec![vec![1, 0], vec![1, 0]]).is_err());
        assert!(MultiIndexSet::from_indices(2, "custom", vec![vec![1]]).is_err());
    }
}
