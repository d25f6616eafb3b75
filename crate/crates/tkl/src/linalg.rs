//! Small dense linear algebra: cyclic Jacobi eigen-decomposition for
//! symmetric matrices and a deterministic power iteration for top
//! eigenpairs. Everything here targets the modest sizes of this crate
//! (Gram matrices of at most a few thousand rows, PCA to two components);
//! no external linear-algebra dependency is warranted.

use crate::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: rows * cols,
                got: data.len(),
                context: "matrix buffer length",
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Eigenvalues (ascending) and matching orthonormal eigenvector columns of a
/// symmetric matrix, via cyclic Jacobi rotations. Intended for `n` up to a
/// few hundred.
pub fn jacobi_eigen(m: &Mat) -> Result<(Vec<f64>, Mat)> {
    if m.rows != m.cols {
        return Err(Error::ShapeMismatch {
            expected: m.rows,
            got: m.cols,
            context: "jacobi needs a square matrix",
        });
    }
    let n = m.rows;
    let mut a = m.clone();
    let mut v = Mat::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let frob: f64 = a.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(1e-300);
    for _sweep in 0..100 {
        let off: f64 = {
            let mut s = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    s += a.get(i, j) * a.get(i, j);
                }
            }
            (2.0 * s).sqrt()
        };
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rotate rows/columns p and q of a
                for i in 0..n {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, c * aip - s * aiq);
                    a.set(i, q, s * aip + c * aiq);
                }
                for j in 0..n {
                    let apj = a.get(p, j);
                    let aqj = a.get(q, j);
                    a.set(p, j, c * apj - s * aqj);
                    a.set(q, j, s * apj + c * aqj);
                }
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).expect("finite eigenvalues"));
    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set(i, new_col, v.get(i, old_col));
        }
    }
    Ok((values, vectors))
}

/// Top `k` eigenpairs (descending eigenvalue) of a symmetric PSD operator
/// given only as a matvec, via deterministic power iteration with deflation.
/// Starting vectors are fixed trigonometric patterns, so repeated calls are
/// bit-identical.
pub fn top_eigenpairs_matvec<F>(n: usize, k: usize, iters: usize, matvec: F) -> Vec<(f64, Vec<f64>)>
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut found: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
    let mut buf = vec![0.0; n];
    for comp in 0..k.min(n) {
        let mut v: Vec<f64> = (0..n)
            .map(|j| (((comp + 1) * (j + 1)) as f64).sin() + 0.5)
            .collect();
        normalize(&mut v);
        let mut value = 0.0;
        for _ in 0..iters {
            matvec(&v, &mut buf);
            // deflate previously found directions
            for (_, u) in &found {
                let proj: f64 = buf.iter().zip(u).map(|(a, b)| a * b).sum();
                for (b, ui) in buf.iter_mut().zip(u) {
                    *b -= proj * ui;
                }
            }
            value = buf.iter().zip(&v).map(|(a, b)| a * b).sum();
            let norm: f64 = buf.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= 1e-300 {
                // operator annihilates the remaining subspace
                value = 0.0;
                break;
            }
            for (vi, b) in v.iter_mut().zip(&buf) {
                *vi = b / norm;
            }
        }
        found.push((value, v));
    }
    found
}

fn normalize(v: &mut [f64]) {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym_from(entries: &[&[f64]]) -> Mat {
        let n = entries.len();
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, entries[i][j]);
            }
        }
        m
    }

    #[test]
    fn jacobi_on_a_known_2x2() {
        let m = sym_from(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let (vals, vecs) = jacobi_eigen(&m).unwrap();
        assert!((vals[0] - 1.0).abs() <= 1e-12);
        assert!((vals[1] - 3.0).abs() <= 1e-12);
        // eigenvector for 3 is (1,1)/sqrt(2) up to sign
        let ratio = vecs.get(0, 1) / vecs.get(1, 1);
        assert!((ratio - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn jacobi_leaves_diagonal_matrices_alone() {
        let m = sym_from(&[&[3.0, 0.0, 0.0], &[0.0, -1.0, 0.0], &[0.0, 0.0, 2.0]]);
        let (vals, _) = jacobi_eigen(&m).unwrap();
        assert_eq!(vals, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn jacobi_satisfies_the_eigen_equation() {
        // deterministic pseudo-random symmetric matrix
        let n = 8;
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = (((i * 31 + j * 17 + 7) % 23) as f64 - 11.0) / 11.0;
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        let (vals, vecs) = jacobi_eigen(&m).unwrap();
        let trace: f64 = (0..n).map(|i| m.get(i, i)).sum();
        assert!((vals.iter().sum::<f64>() - trace).abs() <= 1e-10, "trace preserved");
        for e in 0..n {
            for i in 0..n {
                let mut av = 0.0;
                for j in 0..n {
                    av += m.get(i, j) * vecs.get(j, e);
                }
                assert!(
                    (av - vals[e] * vecs.get(i, e)).abs() <= 1e-9,
                    "A v = lambda v failed at eigenpair {e}, row {i}"
                );
            }
        }
        // orthonormality
        for e1 in 0..n {
            for e2 in 0..n {
                let dot: f64 = (0..n).map(|i| vecs.get(i, e1) * vecs.get(i, e2)).sum();
                let want = if e1 == e2 { 1.0 } else { 0.0 };
                assert!((dot - want).abs() <= 1e-10, "columns {e1},{e2}");
            }
        }
    }

    #[test]
    fn power_iteration_agrees_with_jacobi() {
        let m = sym_from(&[
            &[4.0, 1.0, 0.5],
            &[1.0, 3.0, 0.2],
            &[0.5, 0.2, 1.0],
        ]);
        let (vals, _) = jacobi_eigen(&m).unwrap();
        let top = top_eigenpairs_matvec(3, 2, 500, |v, out| {
            for i in 0..3 {
                out[i] = (0..3).map(|j| m.get(i, j) * v[j]).sum();
            }
        });
        assert!((top[0].0 - vals[2]).abs() <= 1e-9, "largest eigenvalue");
        assert!((top[1].0 - vals[1]).abs() <= 1e-9, "second eigenvalue");
    }
}
