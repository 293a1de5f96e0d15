use serde::{Deserialize, Serialize};

use super::CkaMatrix;
use crate::error::AnalysisError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub lo: f64,
    pub hi: f64,
    /// Mean over the defined entries in this bin.
    pub mean_cka: Option<f64>,
    /// Layer pairs falling in the bin, defined or not.
    pub count: usize,
    pub undefined: usize,
}

/// Mean CKA as a function of normalized layer distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDistanceProfile {
    pub bins: Vec<DistanceBin>,
    /// Depth of layer `i` among `L` layers.
    pub depth_normalization: String,
}

impl LayerDistanceProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lo,hi,mean_cka,count,undefined\n");
        for b in &self.bins {
            let mean = b
                .mean_cka
                .map_or_else(|| "undefined".to_string(), |m| m.to_string());
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.lo, b.hi, mean, b.count, b.undefined
            ));
        }
        out
    }
}

/// Normalized depth `i / (L - 1)`.
pub fn normalized_depth(i: usize, len: usize) -> f64 {
    i as f64 / (len - 1) as f64
}

/// Bin index for a distance in `[0, 1]`: half-open `[lo, hi)` bins with the
/// last bin closed.
pub fn bin_index(distance: f64, num_bins: usize) -> usize {
    ((distance * num_bins as f64).floor() as usize).min(num_bins - 1)
}

pub fn layer_distance_profile(
    m: &CkaMatrix,
    num_bins: usize,
) -> Result<LayerDistanceProfile, AnalysisError> {
    if num_bins < 1 {
        return Err(AnalysisError::InvalidArgument(
            "num_bins must be at least 1".into(),
        ));
    }
    let (la, lb) = m.shape();
    if la < 2 || lb < 2 {
        return Err(AnalysisError::InvalidArgument(format!(
            "need at least 2 layers per side, matrix is {la}x{lb}"
        )));
    }
    let mut sums = vec![0.0; num_bins];
    let mut defined = vec![0usize; num_bins];
    let mut counts = vec![0usize; num_bins];
    for i in 0..la {
        for j in 0..lb {
            let d = (normalized_depth(i, la) - normalized_depth(j, lb)).abs();
            let b = bin_index(d, num_bins);
            counts[b] += 1;
            if let Some(v) = m.get(i, j) {
                sums[b] += v;
                defined[b] += 1;
            }
        }
    }
    let width = 1.0 / num_bins as f64;
    let bins = (0..num_bins)
        .map(|b| DistanceBin {
            lo: b as f64 * width,
            hi: if b + 1 == num_bins {
                1.0
            } else {
                (b + 1) as f64 * width
            },
            mean_cka: (defined[b] > 0).then(|| sums[b] / defined[b] as f64),
            count: counts[b],
            undefined: counts[b] - defined[b],
        })
        .collect();
    Ok(LayerDistanceProfile {
        bins,
        depth_normalization: "i/(L-1)".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::PoolMode;

    pub(crate) fn matrix(values: Vec<Vec<Option<f64>>>) -> CkaMatrix {
        let la = values.len();
        let lb = values[0].len();
        CkaMatrix {
            layer_names_a: (0..la).map(|i| format!("a{i}")).collect(),
            layer_names_b: (0..lb).map(|i| format!("b{i}")).collect(),
            values,
            batch_size: 32,
            num_batches: 1,
            num_samples: 32,
            pooling: PoolMode::Flatten,
            filter: None,
        }
    }

    #[test]
    fn two_by_two_distances() {
        // diagonal pairs at distance 0, off-diagonal at 1
        let m = matrix(vec![vec![Some(1.0), Some(0.2)], vec![Some(0.4), Some(0.8)]]);
        let p = layer_distance_profile(&m, 2).unwrap();
        assert_eq!(p.bins[0].count, 2);
        assert_eq!(p.bins[1].count, 2);
        assert_eq!(p.bins[0].mean_cka, Some(0.9));
        assert!((p.bins[1].mean_cka.unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn constant_matrix_constant_bins() {
        let m = matrix(vec![vec![Some(0.25); 5]; 4]);
        let p = layer_distance_profile(&m, 4).unwrap();
        assert_eq!(p.bins.iter().map(|b| b.count).sum::<usize>(), 20);
        for b in &p.bins {
            if b.count > 0 {
                assert_eq!(b.mean_cka, Some(0.25));
            }
        }
        assert_eq!(p.bins.last().unwrap().hi, 1.0);
    }

    #[test]
    fn undefined_entries_counted_not_averaged() {
        let m = matrix(vec![vec![Some(1.0), None], vec![None, Some(0.5)]]);
        let p = layer_distance_profile(&m, 1).unwrap();
        assert_eq!(p.bins[0].count, 4);
        assert_eq!(p.bins[0].undefined, 2);
        assert_eq!(p.bins[0].mean_cka, Some(0.75));
    }

    #[test]
    fn rejects_bad_arguments() {
        let m = matrix(vec![vec![Some(1.0), Some(1.0)]]);
        assert!(layer_distance_profile(&m, 3).is_err());
        let m = matrix(vec![vec![Some(1.0); 2]; 2]);
        assert!(layer_distance_profile(&m, 0).is_err());
    }
}
