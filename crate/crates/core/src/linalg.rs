//! Dense numeric carriers: `Vector` and row-major `Matrix`.
//!
//! These are the only numeric types crossing the public API. The matrix
//! is deliberately small-scale: the inverse is a partial-pivot
//! Gauss-Jordan, adequate for the low-dimensional covariance matrices
//! this crate works with.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real vector.
pub type Vector = Vec<f64>;

/// Dense row-major matrix with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vector]) -> Result<Self> {
        if rows.is_empty() {
            return Ok(Self {
                rows: 0,
                cols: 0,
                data: Vec::new(),
            });
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Internal consistency of the serialized representation.
    pub fn is_consistent(&self) -> bool {
        self.rows * self.cols == self.data.len()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// `self * v` for a matrix of shape (rows x cols) and a vector of length cols.
    pub fn mat_vec(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!(
                "mat_vec: matrix has {} columns, vector has {}",
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(v) {
                acc += w * x;
            }
            *o = acc;
        }
        Ok(out)
    }

    /// `self^T * v` for a vector of length rows.
    pub fn mat_t_vec(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.rows {
            return Err(Error::Shape(format!(
                "mat_t_vec: matrix has {} rows, vector has {}",
                self.rows,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            let row = self.row(i);
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * vi;
            }
        }
        Ok(out)
    }

    /// Per-column means; empty matrix yields an error.
    pub fn column_means(&self) -> Result<Vector> {
        if self.rows == 0 {
            return Err(Error::InvalidInput("column_means of empty matrix".into()));
        }
        let mut means = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (m, x) in means.iter_mut().zip(row) {
                *m += x;
            }
        }
        let n = self.rows as f64;
        for m in &mut means {
            *m /= n;
        }
        Ok(means)
    }

    /// Stack matrices with identical column counts on top of each other.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let nonempty: Vec<&&Matrix> = parts.iter().filter(|m| m.rows > 0).collect();
        let Some(first) = nonempty.first() else {
            return Ok(Matrix::zeros(0, 0));
        };
        let cols = first.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for m in &nonempty {
            if m.cols != cols {
                return Err(Error::Shape(format!(
                    "vstack: column counts differ ({} vs {cols})",
                    m.cols
                )));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Inverse via Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(Error::Shape(format!(
                "inverse of non-square matrix {}x{}",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        let mut a = self.data.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            // pivot: largest absolute value in this column, at or below the diagonal
            let mut pivot_row = col;
            let mut pivot_abs = a[col * n + col].abs();
            for r in col + 1..n {
                let v = a[r * n + col].abs();
                if v > pivot_abs {
                    pivot_abs = v;
                    pivot_row = r;
                }
            }
            if pivot_abs < 1e-300 {
                return Err(Error::InvalidInput("singular matrix".into()));
            }
            if pivot_row != col {
                for c in 0..n {
                    a.swap(col * n + c, pivot_row * n + c);
                    inv.data.swap(col * n + c, pivot_row * n + c);
                }
            }
            let pivot = a[col * n + col];
            for c in 0..n {
                a[col * n + c] /= pivot;
                inv.data[col * n + c] /= pivot;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[r * n + col];
                if factor == 0.0 {
                    continue;
                }
                for c in 0..n {
                    a[r * n + c] -= factor * a[col * n + c];
                    inv.data[r * n + c] -= factor * inv.data[col * n + c];
                }
            }
        }
        Ok(inv)
    }
}

/// Euclidean distance between two equal-length slices.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Quadratic form `d^T m d` for a square matrix.
pub fn quadratic_form(m: &Matrix, d: &[f64]) -> Result<f64> {
    let md = m.mat_vec(d)?;
    Ok(d.iter().zip(&md).map(|(x, y)| x * y).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_shape() {
        assert!(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn mat_vec_and_transpose() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.mat_vec(&[1.0, 0.0, -1.0]).unwrap(), vec![-2.0, -2.0]);
        assert_eq!(m.mat_t_vec(&[1.0, 1.0]).unwrap(), vec![5.0, 7.0, 9.0]);
        assert!(m.mat_vec(&[1.0]).is_err());
    }

    #[test]
    fn inverse_2x2() {
        let m = Matrix::from_vec(2, 2, vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let inv = m.inverse().unwrap();
        // product should be close to identity
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += m.get(i, k) * inv.get(k, j);
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_rejects_singular() {
        let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(m.inverse().is_err());
    }

    #[test]
    fn vstack_checks_columns() {
        let a = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Matrix::from_vec(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = Matrix::vstack(&[&a, &b]).unwrap();
        assert_eq!(s.rows(), 3);
        let c = Matrix::from_vec(1, 3, vec![0.0; 3]).unwrap();
        assert!(Matrix::vstack(&[&a, &c]).is_err());
    }
}
