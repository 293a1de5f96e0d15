use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::container::{ActivationSet, TensorBlock};
use crate::error::{AlignError, AnalysisError};
use crate::linalg::Mat;

/// How token-level `[N, T, d]` activations become one row per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Token 0.
    Cls,
    /// Mean over tokens `1..T`.
    GapWoCls,
    /// `[N, T*d]`, token-major.
    Flatten,
    /// Mean over all tokens.
    MeanAll,
    /// `[N, d]` layers as stored.
    Passthrough,
}

impl PoolMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolMode::Cls => "cls",
            PoolMode::GapWoCls => "gap_wo_cls",
            PoolMode::Flatten => "flatten",
            PoolMode::MeanAll => "mean_all",
            PoolMode::Passthrough => "passthrough",
        }
    }
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "cls" => PoolMode::Cls,
            "gap_wo_cls" | "gap" => PoolMode::GapWoCls,
            "flatten" => PoolMode::Flatten,
            "mean_all" | "mean" => PoolMode::MeanAll,
            "passthrough" => PoolMode::Passthrough,
            _ => {
                return Err(format!(
                    "unknown pooling mode {s:?} (cls, gap_wo_cls, flatten, mean_all, passthrough)"
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub layers: Vec<String>,
    pub pooling: Vec<PoolMode>,
}

/// Pooled `[samples x features]` view of one or more layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Mat,
    pub provenance: Provenance,
    pub sample_ids: Vec<String>,
}

impl FeatureMatrix {
    /// Wraps a matrix, rejecting non-finite values and id/row mismatches.
    pub fn new(
        values: Mat,
        sample_ids: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self, AnalysisError> {
        if values.rows() != sample_ids.len() {
            return Err(AnalysisError::Shape(format!(
                "{} rows but {} sample ids",
                values.rows(),
                sample_ids.len()
            )));
        }
        if provenance.layers.is_empty() {
            return Err(AnalysisError::InvalidArgument("empty provenance".into()));
        }
        if let Some((row, col)) = values.find_non_finite() {
            return Err(AnalysisError::NonFinite { row, col });
        }
        Ok(FeatureMatrix {
            values,
            provenance,
            sample_ids,
        })
    }

    /// Unlabelled matrix with synthetic ids `s0, s1, ...`; for fixtures and tests.
    pub fn anonymous(values: Mat, source: &str) -> Result<Self, AnalysisError> {
        let ids = (0..values.rows()).map(|i| format!("s{i}")).collect();
        Self::new(
            values,
            ids,
            Provenance {
                layers: vec![source.to_string()],
                pooling: vec![PoolMode::Passthrough],
            },
        )
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select_rows(idx),
            provenance: self.provenance.clone(),
            sample_ids: idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }

    /// Same features with every value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.scale(c),
            provenance: self.provenance.clone(),
            sample_ids: self.sample_ids.clone(),
        }
    }
}

/// Pools `layer` into a feature matrix, upcasting to f64.
pub fn pool_features(
    set: &ActivationSet,
    layer: &str,
    mode: PoolMode,
) -> Result<FeatureMatrix, AnalysisError> {
    let t = set
        .layer(layer)
        .ok_or_else(|| AnalysisError::UnknownLayer(layer.to_string()))?;
    let values = pool_tensor(t, mode)?;
    FeatureMatrix::new(
        values,
        set.sample_ids.clone(),
        Provenance {
            layers: vec![layer.to_string()],
            pooling: vec![mode],
        },
    )
}

/// Pools a tensor without building a full `FeatureMatrix`.
///
/// `[N, d]` layers accept `passthrough` and `flatten` (which is the identity
/// on rank 2); the token modes need `[N, T, d]`.
pub fn pool_tensor(t: &TensorBlock, mode: PoolMode) -> Result<Mat, AnalysisError> {
    let incompatible = || AnalysisError::Pooling {
        mode: mode.to_string(),
        shape: t.shape.clone(),
    };
    let n = t.shape[0];
    match (t.shape.len(), mode) {
        (2, PoolMode::Passthrough | PoolMode::Flatten) => {
            Mat::from_vec(n, t.shape[1], t.data.iter().map(|&v| v as f64).collect())
        }
        (3, PoolMode::Flatten) => Mat::from_vec(
            n,
            t.shape[1] * t.shape[2],
            t.data.iter().map(|&v| v as f64).collect(),
        ),
        (3, PoolMode::Cls | PoolMode::GapWoCls | PoolMode::MeanAll) => {
            let (tokens, d) = (t.shape[1], t.shape[2]);
            let (lo, hi) = match mode {
                PoolMode::Cls => (0, 1),
                PoolMode::GapWoCls => (1, tokens),
                _ => (0, tokens),
            };
            if mode != PoolMode::MeanAll && tokens < 2 {
                return Err(incompatible());
            }
            let count = (hi - lo) as f64;
            let mut out = Mat::zeros(n, d);
            for i in 0..n {
                let sample = &t.data[i * tokens * d..(i + 1) * tokens * d];
                let row = out.row_mut(i);
                for tok in lo..hi {
                    for (r, &v) in row.iter_mut().zip(&sample[tok * d..(tok + 1) * d]) {
                        *r += v as f64;
                    }
                }
                if count > 1.0 {
                    row.iter_mut().for_each(|r| *r /= count);
                }
            }
            Ok(out)
        }
        _ => Err(incompatible()),
    }
}

/// Column-wise concatenation; sample ids must agree position by position.
pub fn concat_layers(features: &[FeatureMatrix]) -> Result<FeatureMatrix, AnalysisError> {
    let first = features
        .first()
        .ok_or_else(|| AnalysisError::InvalidArgument("nothing to concatenate".into()))?;
    for f in &features[1..] {
        if f.sample_ids.len() != first.sample_ids.len() {
            return Err(AnalysisError::Shape(format!(
                "cannot concatenate {} samples with {}",
                first.sample_ids.len(),
                f.sample_ids.len()
            )));
        }
        if let Some(p) = (0..f.sample_ids.len()).find(|&i| f.sample_ids[i] != first.sample_ids[i]) {
            return Err(AlignError::Mismatch {
                position: p,
                a: first.sample_ids[p].clone(),
                b: f.sample_ids[p].clone(),
            }
            .into());
        }
    }
    let mats: Vec<&Mat> = features.iter().map(|f| &f.values).collect();
    let mut provenance = Provenance {
        layers: Vec::new(),
        pooling: Vec::new(),
    };
    for f in features {
        provenance
            .layers
            .extend(f.provenance.layers.iter().cloned());
        provenance
            .pooling
            .extend(f.provenance.pooling.iter().copied());
    }
    Ok(FeatureMatrix {
        values: Mat::hconcat(&mats)?,
        provenance,
        sample_ids: first.sample_ids.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_with(shape: Vec<usize>, data: Vec<f32>) -> ActivationSet {
        let n = shape[0];
        ActivationSet {
            model_id: "t".into(),
            sample_ids: (0..n).map(|i| format!("s{i}")).collect(),
            layers: vec![TensorBlock::new("block0.ln1", shape, data).unwrap()],
        }
    }

    #[test]
    fn equal_tokens_pool_identically() {
        let set = set_with(
            vec![2, 2, 3],
            vec![1., 2., 3., 1., 2., 3., 4., 5., 6., 4., 5., 6.],
        );
        let cls = pool_features(&set, "block0.ln1", PoolMode::Cls).unwrap();
        let gap = pool_features(&set, "block0.ln1", PoolMode::GapWoCls).unwrap();
        let mean = pool_features(&set, "block0.ln1", PoolMode::MeanAll).unwrap();
        assert_eq!(cls.values, gap.values);
        assert_eq!(cls.values, mean.values);
    }

    #[test]
    fn gap_without_cls_by_hand() {
        // sample 0 tokens: [1,2] [3,4] [5,6]; sample 1: [0,0] [10,20] [30,40]
        let set = set_with(
            vec![2, 3, 2],
            vec![1., 2., 3., 4., 5., 6., 0., 0., 10., 20., 30., 40.],
        );
        let gap = pool_features(&set, "block0.ln1", PoolMode::GapWoCls).unwrap();
        assert_eq!(gap.values.as_slice(), &[4., 5., 20., 30.]);
        let cls = pool_features(&set, "block0.ln1", PoolMode::Cls).unwrap();
        assert_eq!(cls.values.as_slice(), &[1., 2., 0., 0.]);
        let mean = pool_features(&set, "block0.ln1", PoolMode::MeanAll).unwrap();
        assert_eq!(mean.values.as_slice(), &[3., 4., 40. / 3., 20.]);
    }

    #[test]
    fn flatten_is_token_major() {
        let data: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let set = set_with(vec![2, 3, 2], data);
        let f = pool_features(&set, "block0.ln1", PoolMode::Flatten).unwrap();
        assert_eq!((f.rows(), f.dim()), (2, 6));
        assert_eq!(f.values.row(1), &[6., 7., 8., 9., 10., 11.]);
    }

    #[test]
    fn pooled_layers_reject_token_modes() {
        let set = set_with(vec![2, 3], vec![0.; 6]);
        assert!(pool_features(&set, "block0.ln1", PoolMode::Passthrough).is_ok());
        assert!(pool_features(&set, "block0.ln1", PoolMode::Flatten).is_ok());
        for m in [PoolMode::Cls, PoolMode::GapWoCls, PoolMode::MeanAll] {
            assert!(matches!(
                pool_features(&set, "block0.ln1", m),
                Err(AnalysisError::Pooling { .. })
            ));
        }
        let single_token = set_with(vec![2, 1, 3], vec![0.; 6]);
        assert!(pool_features(&single_token, "block0.ln1", PoolMode::GapWoCls).is_err());
        assert!(pool_features(&single_token, "block0.ln1", PoolMode::Passthrough).is_err());
        assert!(matches!(
            pool_features(&set, "nope", PoolMode::Cls),
            Err(AnalysisError::UnknownLayer(_))
        ));
    }

    #[test]
    fn concat_shapes_and_provenance() {
        let a = FeatureMatrix::anonymous(Mat::zeros(4, 3), "a").unwrap();
        let b = FeatureMatrix::anonymous(Mat::zeros(4, 2), "b").unwrap();
        let c = concat_layers(&[a.clone(), b]).unwrap();
        assert_eq!(c.dim(), 5);
        assert_eq!(c.provenance.layers, ["a", "b"]);
        assert_eq!(concat_layers(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(concat_layers(&[a.clone(), a.clone()]).unwrap().dim(), 6);

        let mut shuffled = a.clone();
        shuffled.sample_ids.swap(0, 1);
        assert!(concat_layers(&[a, shuffled]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let m = Mat::from_vec(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(
            FeatureMatrix::anonymous(m, "x"),
            Err(AnalysisError::NonFinite { row: 0, col: 1 })
        ));
    }
}
