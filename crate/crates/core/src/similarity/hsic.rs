use crate::error::AnalysisError;
use crate::linalg::{dot, Mat};

/// Minimum sample count for the unbiased estimator (its `n(n-3)` factor).
pub const MIN_SAMPLES: usize = 4;

/// Symmetric `n x n` linear-kernel Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    values: Vec<f64>,
}

impl GramMatrix {
    /// Wraps explicit values, checking shape, size and symmetry (1e-12 relative).
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self, AnalysisError> {
        if values.len() != n * n {
            return Err(AnalysisError::Shape(format!(
                "{} values for a {n}x{n} Gram matrix",
                values.len()
            )));
        }
        if n < MIN_SAMPLES {
            return Err(AnalysisError::TooFewSamples {
                needed: MIN_SAMPLES,
                found: n,
            });
        }
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(AnalysisError::NonFinite { row: i, col: j });
                }
                if (a - b).abs() > 1e-12 * scale {
                    return Err(AnalysisError::Shape(format!(
                        "Gram matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(GramMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `K = X X^T` in f64. Rows of `x` are samples.
pub fn gram(x: &Mat) -> Result<GramMatrix, AnalysisError> {
    let n = x.rows();
    if n < MIN_SAMPLES {
        return Err(AnalysisError::TooFewSamples {
            needed: MIN_SAMPLES,
            found: n,
        });
    }
    if x.cols() == 0 {
        return Err(AnalysisError::Shape("features have no columns".into()));
    }
    if let Some((row, col)) = x.find_non_finite() {
        return Err(AnalysisError::NonFinite { row, col });
    }
    Ok(gram_unchecked(x, &(0..n).collect::<Vec<_>>()))
}

/// Gram matrix of the listed rows; no validation.
pub(crate) fn gram_unchecked(x: &Mat, rows: &[usize]) -> GramMatrix {
    let n = rows.len();
    let mut values = vec![0.0; n * n];
    for a in 0..n {
        let ra = x.row(rows[a]);
        for b in a..n {
            let v = dot(ra, x.row(rows[b]));
            values[a * n + b] = v;
            values[b * n + a] = v;
        }
    }
    GramMatrix { n, values }
}

/// A Gram matrix with its diagonal zeroed and its row and total sums cached,
/// which reduces every HSIC₁ evaluation to O(n²).
#[derive(Debug, Clone)]
pub struct PreparedGram {
    n: usize,
    off_diag: Vec<f64>,
    row_sums: Vec<f64>,
    total: f64,
}

impl PreparedGram {
    pub fn new(k: &GramMatrix) -> Self {
        let n = k.n;
        let mut off_diag = k.values.clone();
        for i in 0..n {
            off_diag[i * n + i] = 0.0;
        }
        let row_sums: Vec<f64> = off_diag.chunks_exact(n).map(|r| r.iter().sum()).collect();
        let total = row_sums.iter().sum();
        PreparedGram {
            n,
            off_diag,
            row_sums,
            total,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Unbiased HSIC₁ on prepared Gram matrices of equal size.
///
/// With `K~`, `L~` the zero-diagonal Gram matrices:
///
/// ```text
/// HSIC₁ = [ tr(K~L~) + (1ᵀK~1)(1ᵀL~1) / ((n-1)(n-2)) - 2/(n-2) · 1ᵀK~L~1 ] / (n(n-3))
/// ```
///
/// Both matrices are symmetric, so `tr(K~L~)` is the elementwise product sum
/// and `1ᵀK~L~1` is the dot product of the row-sum vectors.
pub fn hsic1_prepared(k: &PreparedGram, l: &PreparedGram) -> f64 {
    debug_assert_eq!(k.n, l.n);
    let n = k.n as f64;
    let trace = dot(&k.off_diag, &l.off_diag);
    let cross = dot(&k.row_sums, &l.row_sums);
    (trace + k.total * l.total / ((n - 1.0) * (n - 2.0)) - 2.0 / (n - 2.0) * cross)
        / (n * (n - 3.0))
}

pub fn hsic1(k: &GramMatrix, l: &GramMatrix) -> Result<f64, AnalysisError> {
    if k.n != l.n {
        return Err(AnalysisError::Shape(format!(
            "Gram matrices have {} and {} samples",
            k.n, l.n
        )));
    }
    if k.n < MIN_SAMPLES {
        return Err(AnalysisError::TooFewSamples {
            needed: MIN_SAMPLES,
            found: k.n,
        });
    }
    Ok(hsic1_prepared(&PreparedGram::new(k), &PreparedGram::new(l)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_features_give_identity_gram() {
        let k = gram(&Mat::identity(4)).unwrap();
        assert_eq!(k.values(), Mat::identity(4).as_slice());
    }

    #[test]
    fn ones_give_twos() {
        let k = gram(&Mat::from_fn(4, 2, |_, _| 1.0)).unwrap();
        assert!(k.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn zero_grams_have_zero_hsic() {
        let z = GramMatrix::from_values(5, vec![0.0; 25]).unwrap();
        assert_eq!(hsic1(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn rejects_small_or_mismatched() {
        assert!(matches!(
            gram(&Mat::identity(3)),
            Err(AnalysisError::TooFewSamples {
                needed: 4,
                found: 3
            })
        ));
        let a = gram(&Mat::identity(4)).unwrap();
        let b = gram(&Mat::identity(5)).unwrap();
        assert!(matches!(hsic1(&a, &b), Err(AnalysisError::Shape(_))));
        let mut x = Mat::identity(4);
        x.set(2, 1, f64::INFINITY);
        assert!(matches!(gram(&x), Err(AnalysisError::NonFinite { .. })));
        assert!(GramMatrix::from_values(4, (0..16).map(|v| v as f64).collect()).is_err());
    }
}
