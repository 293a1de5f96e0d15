use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::AnalysisError;
use crate::linalg::Mat;

pub const STANDARDIZE_EPS: f64 = 1e-5;

/// Frozen per-feature mean and population variance, applied as
/// `(x - mean) / sqrt(var + eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl Standardizer {
    pub fn fit(train: &Mat) -> Result<Self, AnalysisError> {
        let n = train.rows();
        if n < 2 {
            return Err(AnalysisError::TooFewSamples {
                needed: 2,
                found: n,
            });
        }
        let d = train.cols();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(train.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(train.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        Ok(Standardizer {
            mean,
            var,
            eps: STANDARDIZE_EPS,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, m: &Mat) -> Result<Mat, AnalysisError> {
        if m.cols() != self.dim() {
            return Err(AnalysisError::Shape(format!(
                "standardizer fitted on {} features, applied to {}",
                self.dim(),
                m.cols()
            )));
        }
        let inv: Vec<f64> = self
            .var
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let mut out = m.clone();
        for i in 0..out.rows() {
            for ((x, mu), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&inv) {
                *x = (*x - mu) * s;
            }
        }
        Ok(out)
    }
}

pub fn fit_standardizer(train: &FeatureMatrix) -> Result<Standardizer, AnalysisError> {
    Standardizer::fit(&train.values)
}

pub fn apply_standardizer(
    s: &Standardizer,
    f: &FeatureMatrix,
) -> Result<FeatureMatrix, AnalysisError> {
    Ok(FeatureMatrix {
        values: s.apply(&f.values)?,
        provenance: f.provenance.clone(),
        sample_ids: f.sample_ids.clone(),
    })
}
