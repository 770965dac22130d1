//! Just enough dense linear algebra for weighted least squares.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `XᵀWX` and `XᵀWy`.
pub fn weighted_normal_equations(x: &Matrix, y: &[f64], w: &[f64]) -> (Matrix, Vec<f64>) {
    let d = x.cols();
    let mut a = Matrix::zeros(d, d);
    let mut b = alloc::vec![0.0; d];
    for i in 0..x.rows() {
        let r = x.row(i);
        let wi = w[i];
        for j in 0..d {
            let wr = wi * r[j];
            b[j] += wr * y[i];
            for k in j..d {
                a.data[j * d + k] += wr * r[k];
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            a.data[j * d + k] = a.data[k * d + j];
        }
    }
    (a, b)
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// Fails when a pivot drops below `1e-12` of its original diagonal entry,
/// which flags (numerically) rank-deficient designs.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k) * l.get(j, k);
        }
        if !(diag > 1e-12 * a.get(j, j).abs()) || !(a.get(j, j) > 0.0) {
            return Err(Error::Design(format!("matrix is not positive definite at column {j}")));
        }
        let ljj = math::sqrt(diag);
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l.get(i, k) * z[k];
        }
        z[i] /= l.get(i, i);
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= l.get(k, i) * z[k];
        }
        z[i] /= l.get(i, i);
    }
    z
}

/// Solve the SPD system `A x = b` with one round of iterative refinement.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.rows() != a.cols() || a.rows() != b.len() {
        return Err(Error::Shape {
            expected: a.rows(),
            got: b.len(),
        });
    }
    let l = cholesky(a)?;
    let mut x = cholesky_solve(&l, b);
    let r: Vec<f64> = a.mul_vec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
    let dx = cholesky_solve(&l, &r);
    x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
    Ok(x)
}

/// Weighted least squares `argmin Σ w_i (y_i - x_iᵀβ)²`.
pub fn weighted_least_squares(x: &Matrix, y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if y.len() != x.rows() {
        return Err(Error::Shape {
            expected: x.rows(),
            got: y.len(),
        });
    }
    if w.len() != x.rows() {
        return Err(Error::Shape {
            expected: x.rows(),
            got: w.len(),
        });
    }
    let (a, b) = weighted_normal_equations(x, y, w);
    solve_spd(&a, &b).map_err(|_| Error::Design("design matrix is rank deficient".into()))
}
