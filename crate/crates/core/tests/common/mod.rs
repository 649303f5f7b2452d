//! Reference implementations shared by the integration tests. They avoid
//! the library's own linear algebra so that agreement is meaningful.
#![allow(dead_code)]

use nalgebra::DMatrix;

/// Cyclic Jacobi eigensolver. Returns eigenvalues ascending with matching
/// eigenvector columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap());
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// `V diag(f(λ)) Vᵀ` through [`jacobi_eigen`].
pub fn spectral_map(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (values, v) = jacobi_eigen(a);
    let n = a.nrows();
    DMatrix::from_fn(n, n, |i, j| (0..n).map(|k| v[(i, k)] * f(values[k]) * v[(j, k)]).sum())
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = a.iter().map(|x| x.abs()).sum::<f64>().max(1e-300);
    let squarings = (norm.log2().ceil() as i32 + 1).max(0);
    let scaled = a / 2f64.powi(squarings);
    let n = a.nrows();
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

pub fn frobenius_relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// `I − Dv^{-1/2} H W De^{-1} Hᵀ Dv^{-1/2}` from explicit dense products.
pub fn dense_laplacian(n: usize, edges: &[Vec<usize>], weights: &[f64]) -> DMatrix<f64> {
    let m = edges.len();
    let h = DMatrix::from_fn(n, m, |v, e| if edges[e].contains(&v) { 1.0 } else { 0.0 });
    let w = DMatrix::from_fn(m, m, |a, b| if a == b { weights[a] } else { 0.0 });
    let de_inv = DMatrix::from_fn(m, m, |a, b| if a == b { 1.0 / edges[a].len() as f64 } else { 0.0 });
    let dv = &h * &w * DMatrix::from_element(m, 1, 1.0);
    let dv_is = DMatrix::from_fn(n, n, |a, b| if a == b { 1.0 / dv[(a, 0)].sqrt() } else { 0.0 });
    DMatrix::identity(n, n) - &dv_is * &h * w * de_inv * h.transpose() * &dv_is
}

/// Symmetric normalised graph Laplacian from an adjacency matrix.
pub fn graph_laplacian(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - a[(i, j)] / (d[i] * d[j]).sqrt())
}

/// Central difference of `f` at `x` in direction `e_i`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, step: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[i] += step;
    m[i] -= step;
    (f(&p) - f(&m)) / (2.0 * step)
}

pub fn relatively_close(analytic: f64, numeric: f64, tol: f64) -> bool {
    (analytic - numeric).abs() <= tol * analytic.abs().max(numeric.abs()) + 1e-7
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap()).unwrap();
        m.swap_rows(col, pivot);
        inv.swap_rows(col, pivot);
        let p = m[(col, col)];
        for k in 0..n {
            m[(col, k)] /= p;
            inv[(col, k)] /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[(row, col)];
                for k in 0..n {
                    m[(row, k)] -= f * m[(col, k)];
                    inv[(row, k)] -= f * inv[(col, k)];
                }
            }
        }
    }
    inv
}

/// `log N(y; 0, Σ)` with the inverse and log-determinant taken independently.
pub fn mvn_log_density(y: &[f64], sigma: &DMatrix<f64>) -> f64 {
    let n = y.len();
    let inv = gauss_jordan_inverse(sigma);
    let (values, _) = jacobi_eigen(sigma);
    let log_det: f64 = values.iter().map(|l| l.ln()).sum();
    let quad: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| y[i] * inv[(i, j)] * y[j]).sum();
    -0.5 * (quad + log_det + n as f64 * (2.0 * std::f64::consts::PI).ln())
}
