//! Minimal row-major dense matrix used by the estimators.
//!
//! Everything here is f64 and single-threaded. Summation order is row-major
//! and fixed, so results are bit-reproducible for identical inputs.

use crate::error::AnalysisError;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AnalysisError> {
        if data.len() != rows * cols {
            return Err(AnalysisError::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat, AnalysisError> {
        if self.cols != other.rows {
            return Err(AnalysisError::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn hconcat(parts: &[&Mat]) -> Result<Mat, AnalysisError> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(AnalysisError::Shape(
                "cannot concatenate matrices with different row counts".into(),
            ));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Mat { rows, cols, data })
    }

    /// First non-finite entry, if any.
    pub fn find_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.cols.max(1), p % self.cols.max(1)))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt with reorthogonalization, columns processed left to
/// right without pivoting. Returns the orthonormal factor Q of a square input.
pub fn orthonormalize_columns(a: &Mat) -> Result<Mat, AnalysisError> {
    let (n, p) = (a.rows(), a.cols());
    if n < p {
        return Err(AnalysisError::Shape(format!(
            "cannot orthonormalize {p} columns in dimension {n}"
        )));
    }
    let mut cols: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..n).map(|i| a.get(i, j)).collect())
        .collect();
    for j in 0..p {
        for _pass in 0..2 {
            for k in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let r = dot(&done[k], &rest[0]);
                for (v, q) in rest[0].iter_mut().zip(&done[k]) {
                    *v -= r * q;
                }
            }
        }
        let norm = dot(&cols[j], &cols[j]).sqrt();
        if norm <= f64::EPSILON {
            return Err(AnalysisError::Undefined(format!(
                "column {j} is linearly dependent on earlier columns"
            )));
        }
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    Ok(Mat::from_fn(n, p, |i, j| cols[j][i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Mat::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Mat::from_vec(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.as_slice(), &[58., 64., 139., 154.]);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn hconcat_interleaves_rows() {
        let a = Mat::from_vec(2, 1, vec![1., 2.]).unwrap();
        let b = Mat::from_vec(2, 2, vec![3., 4., 5., 6.]).unwrap();
        let c = Mat::hconcat(&[&a, &b]).unwrap();
        assert_eq!(c.as_slice(), &[1., 3., 4., 2., 5., 6.]);
    }

    #[test]
    fn orthonormalize_gives_orthogonal_q() {
        let a = Mat::from_vec(3, 3, vec![2., 1., 0., 1., 3., 1., 0., 1., 4.]).unwrap();
        let q = orthonormalize_columns(&a).unwrap();
        let qtq = q.transpose().matmul(&q).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qtq.get(i, j) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn orthonormalize_rejects_dependent_columns() {
        let a = Mat::from_vec(2, 2, vec![1., 2., 1., 2.]).unwrap();
        assert!(orthonormalize_columns(&a).is_err());
    }
}
