//! Dense least squares by Householder QR with column pivoting.
//!
//! Matrices are column-major slices with `n` rows and `m` columns.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Minimizes `||A x - b||`. Full-rank systems go through the pivoted QR;
/// rank-deficient ones fall back to the minimal-norm SVD solution.
pub fn least_squares(a: &[f64], n: usize, m: usize, b: &[f64]) -> LeastSquares {
    assert_eq!(a.len(), n * m, "design matrix shape");
    assert_eq!(b.len(), n, "right-hand side length");
    if m == 0 {
        return LeastSquares {
            coefficients: Vec::new(),
            rank: 0,
            rank_deficient: false,
        };
    }
    let mut r = a.to_vec();
    let mut qtb = b.to_vec();
    let mut perm: Vec<usize> = (0..m).collect();
    let steps = n.min(m);
    let mut diag = Vec::with_capacity(steps);

    for k in 0..steps {
        // pivot: largest remaining column norm
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..m {
            let col = &r[j * n + k..(j + 1) * n];
            let s: f64 = col.iter().map(|v| v * v).sum();
            if s > best_norm {
                best_norm = s;
                best = j;
            }
        }
        if best != k {
            for i in 0..n {
                r.swap(k * n + i, best * n + i);
            }
            perm.swap(k, best);
        }
        let col = &mut r[k * n + k..(k + 1) * n];
        let alpha = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha == 0.0 {
            diag.push(0.0);
            continue;
        }
        let x0 = col[0];
        let beta = if x0 >= 0.0 { -alpha } else { alpha };
        col[0] = x0 - beta;
        let vnorm2: f64 = col.iter().map(|v| v * v).sum();
        let v: Vec<f64> = col.to_vec();
        apply_reflector(&v, vnorm2, &mut qtb[k..]);
        for j in k + 1..m {
            apply_reflector(&v, vnorm2, &mut r[j * n + k..(j + 1) * n]);
        }
        r[k * n + k] = beta;
        for i in k + 1..n {
            r[k * n + i] = 0.0;
        }
        diag.push(beta);
    }

    let lead = diag.first().map(|d| d.abs()).unwrap_or(0.0);
    let tol = (n.max(m) as f64) * f64::EPSILON * lead;
    let rank = diag.iter().take_while(|d| d.abs() > tol).count();

    if rank < m || lead == 0.0 {
        return LeastSquares {
            coefficients: min_norm_solution(a, n, m, b),
            rank,
            rank_deficient: true,
        };
    }

    let mut x = vec![0.0; m];
    for k in (0..m).rev() {
        let mut s = qtb[k];
        for j in k + 1..m {
            s -= r[j * n + k] * x[j];
        }
        x[k] = s / r[k * n + k];
    }
    let mut coefficients = vec![0.0; m];
    for (k, &p) in perm.iter().enumerate() {
        coefficients[p] = x[k];
    }
    LeastSquares {
        coefficients,
        rank,
        rank_deficient: false,
    }
}

fn apply_reflector(v: &[f64], vnorm2: f64, target: &mut [f64]) {
    if vnorm2 == 0.0 {
        return;
    }
    let dot: f64 = v.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
    let f = 2.0 * dot / vnorm2;
    for (t, vi) in target.iter_mut().zip(v) {
        *t -= f * vi;
    }
}

fn min_norm_solution(a: &[f64], n: usize, m: usize, b: &[f64]) -> Vec<f64> {
    let mat = DMatrix::from_column_slice(n, m, a);
    let rhs = DVector::from_column_slice(b);
    let svd = mat.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = (n.max(m) as f64) * f64::EPSILON * smax;
    match svd.solve(&rhs, eps) {
        Ok(x) => x.iter().copied().collect(),
        Err(_) => vec![0.0; m],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matvec(a: &[f64], n: usize, m: usize, x: &[f64]) -> Vec<f64> {
        (0..n)
            .map(|i| (0..m).map(|j| a[j * n + i] * x[j]).sum())
            .collect()
    }

    #[test]
    fn exact_square_system() {
        // [[2, 1], [1, 3]] x = [3, 5] -> x = [0.8, 1.4]
        let a = vec![2.0, 1.0, 1.0, 3.0];
        let sol = least_squares(&a, 2, 2, &[3.0, 5.0]);
        assert!(!sol.rank_deficient);
        assert!((sol.coefficients[0] - 0.8).abs() < 1e-14);
        assert!((sol.coefficients[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn overdetermined_matches_normal_equations() {
        let n = 7;
        let xs: Vec<f64> = (0..n).map(|k| k as f64 / 3.0).collect();
        let mut a = vec![1.0; n];
        a.extend(xs.iter().copied());
        let b: Vec<f64> = xs
            .iter()
            .map(|x| 1.0 + 2.0 * x + (x * 7.0).sin() * 0.1)
            .collect();
        let sol = least_squares(&a, n, 2, &b);
        // normal equations oracle
        let sx: f64 = xs.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sy: f64 = b.iter().sum();
        let sxy: f64 = xs.iter().zip(&b).map(|(x, y)| x * y).sum();
        let det = n as f64 * sxx - sx * sx;
        let c0 = (sxx * sy - sx * sxy) / det;
        let c1 = (n as f64 * sxy - sx * sy) / det;
        assert!((sol.coefficients[0] - c0).abs() < 1e-12);
        assert!((sol.coefficients[1] - c1).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_gives_minimal_norm() {
        // duplicated column: x0 + x1 = 2 -> minimal norm (1, 1)
        let a = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let sol = least_squares(&a, 3, 2, &[2.0, 2.0, 2.0]);
        assert!(sol.rank_deficient);
        assert_eq!(sol.rank, 1);
        assert!((sol.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((sol.coefficients[1] - 1.0).abs() < 1e-12);
        let fitted = matvec(&a, 3, 2, &sol.coefficients);
        assert!(fitted.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }
}
