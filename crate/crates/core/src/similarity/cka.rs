use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hsic::{gram_unchecked, hsic1_prepared, PreparedGram, MIN_SAMPLES};
use crate::container::naming::NamePattern;
use crate::container::{align_samples, ActivationSet};
use crate::error::{AlignError, AnalysisError};
use crate::probes::{pool_tensor, FeatureMatrix, PoolMode};

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_NUM_SAMPLES: usize = 1024;

/// Running sums of per-batch HSIC₁ terms for minibatch CKA.
///
/// Batches must all have the same size; terms are added in call order.
#[derive(Debug, Clone, Default)]
pub struct MinibatchCka {
    batches: usize,
    cross: f64,
    self_a: f64,
    self_b: f64,
}

impl MinibatchCka {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ka: &PreparedGram, kb: &PreparedGram) {
        self.push_terms(
            hsic1_prepared(ka, kb),
            hsic1_prepared(ka, ka),
            hsic1_prepared(kb, kb),
        );
    }

    pub fn push_terms(&mut self, cross: f64, self_a: f64, self_b: f64) {
        self.batches += 1;
        self.cross += cross;
        self.self_a += self_a;
        self.self_b += self_b;
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    /// Mean cross term over the root of the product of the mean self terms.
    pub fn value(&self) -> Result<f64, AnalysisError> {
        cka_from_sums(self.batches, self.cross, self.self_a, self.self_b)
    }
}

fn cka_from_sums(k: usize, cross: f64, self_a: f64, self_b: f64) -> Result<f64, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::Undefined("no complete minibatch".into()));
    }
    let k = k as f64;
    let (xy, xx, yy) = (cross / k, self_a / k, self_b / k);
    if !(xx > 0.0 && yy > 0.0) || !xy.is_finite() {
        return Err(AnalysisError::Undefined(format!(
            "self-HSIC is not positive (a: {xx}, b: {yy}); features are constant or degenerate"
        )));
    }
    Ok(xy / (xx * yy).sqrt())
}

fn check_pair(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<(), AnalysisError> {
    if x.rows() != y.rows() {
        return Err(AnalysisError::Shape(format!(
            "{} rows vs {} rows",
            x.rows(),
            y.rows()
        )));
    }
    if let Some(p) = (0..x.rows()).find(|&i| x.sample_ids[i] != y.sample_ids[i]) {
        return Err(AlignError::Mismatch {
            position: p,
            a: x.sample_ids[p].clone(),
            b: y.sample_ids[p].clone(),
        }
        .into());
    }
    Ok(())
}

/// Linear CKA over all rows, using the unbiased HSIC₁ estimator. The raw
/// value is returned without clamping.
pub fn cka_exact(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64, AnalysisError> {
    check_pair(x, y)?;
    if x.rows() < MIN_SAMPLES {
        return Err(AnalysisError::TooFewSamples {
            needed: MIN_SAMPLES,
            found: x.rows(),
        });
    }
    cka_minibatch(x, y, x.rows())
}

/// Minibatch CKA over consecutive batches of `batch_size` rows. A trailing
/// partial batch is dropped.
pub fn cka_minibatch(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    batch_size: usize,
) -> Result<f64, AnalysisError> {
    check_pair(x, y)?;
    if batch_size < MIN_SAMPLES {
        return Err(AnalysisError::InvalidArgument(format!(
            "batch size {batch_size} is below the minimum of {MIN_SAMPLES}"
        )));
    }
    let k = x.rows() / batch_size;
    if k == 0 {
        return Err(AnalysisError::TooFewSamples {
            needed: batch_size,
            found: x.rows(),
        });
    }
    let mut acc = MinibatchCka::new();
    for b in 0..k {
        let rows: Vec<usize> = (b * batch_size..(b + 1) * batch_size).collect();
        let ka = PreparedGram::new(&gram_unchecked(&x.values, &rows));
        let kb = PreparedGram::new(&gram_unchecked(&y.values, &rows));
        acc.push(&ka, &kb);
    }
    acc.value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaConfig {
    pub pooling: PoolMode,
    pub batch_size: usize,
    /// Aligned samples beyond this count are ignored.
    pub max_samples: Option<usize>,
    pub layer_filter: Option<String>,
}

impl Default for CkaConfig {
    fn default() -> Self {
        CkaConfig {
            pooling: PoolMode::Flatten,
            batch_size: DEFAULT_BATCH_SIZE,
            max_samples: Some(DEFAULT_NUM_SAMPLES),
            layer_filter: None,
        }
    }
}

/// Layer-pair similarity grid. `None` marks an undefined entry (a constant or
/// degenerate layer), which is distinct from a similarity of zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaMatrix {
    pub layer_names_a: Vec<String>,
    pub layer_names_b: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub batch_size: usize,
    pub num_batches: usize,
    pub num_samples: usize,
    pub pooling: PoolMode,
    pub filter: Option<String>,
}

impl CkaMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.layer_names_a.len(), self.layer_names_b.len())
    }

    pub fn defined_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().filter_map(|v| *v)
    }

    pub fn undefined_count(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_none()).count()
    }

    /// Header row of layer_b names; one row per layer_a. Undefined entries
    /// are written as `undefined`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer");
        for n in &self.layer_names_b {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in self.layer_names_a.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                out.push(',');
                match v {
                    Some(v) => out.push_str(&v.to_string()),
                    None => out.push_str("undefined"),
                }
            }
            out.push('\n');
        }
        out
    }
}

struct LayerBatches {
    grams: Vec<PreparedGram>,
    self_terms: Vec<f64>,
}

fn prepare_layer(
    set: &ActivationSet,
    layer: usize,
    rows: &[usize],
    batch_size: usize,
    pooling: PoolMode,
) -> Result<LayerBatches, AnalysisError> {
    let pooled = pool_tensor(&set.layers[layer], pooling)?;
    if let Some((row, col)) = pooled.find_non_finite() {
        return Err(AnalysisError::NonFinite { row, col });
    }
    let grams: Vec<PreparedGram> = rows
        .chunks_exact(batch_size)
        .map(|chunk| PreparedGram::new(&gram_unchecked(&pooled, chunk)))
        .collect();
    let self_terms = grams.iter().map(|g| hsic1_prepared(g, g)).collect();
    Ok(LayerBatches { grams, self_terms })
}

fn select_layers(set: &ActivationSet, filter: Option<&NamePattern>) -> Vec<usize> {
    set.layers
        .iter()
        .enumerate()
        .filter(|(_, l)| filter.is_none_or(|f| f.matches(&l.name)))
        .map(|(i, _)| i)
        .collect()
}

/// Minibatch CKA for every (filtered) layer pair of two activation sets.
///
/// Samples are aligned by id in `a`'s order. Layer preparation and the pair
/// grid run on the current rayon pool; each pair is accumulated in batch
/// order, so the result does not depend on scheduling.
pub fn cka_matrix(
    a: &ActivationSet,
    b: &ActivationSet,
    config: &CkaConfig,
) -> Result<CkaMatrix, AnalysisError> {
    let batch_size = config.batch_size;
    if batch_size < MIN_SAMPLES {
        return Err(AnalysisError::InvalidArgument(format!(
            "batch size {batch_size} is below the minimum of {MIN_SAMPLES}"
        )));
    }
    let alignment = align_samples(a, b)?;
    let available = alignment.pairs.len();
    if available < 2 * batch_size {
        return Err(AlignError::TooFew {
            needed: 2 * batch_size,
            found: available,
        }
        .into());
    }
    let used = config.max_samples.map_or(available, |m| m.min(available));
    let num_batches = used / batch_size;
    if num_batches == 0 {
        return Err(AnalysisError::TooFewSamples {
            needed: batch_size,
            found: used,
        });
    }
    let pairs = &alignment.pairs[..num_batches * batch_size];
    let rows_a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let rows_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();

    let filter = config.layer_filter.as_ref().map(NamePattern::new);
    let layers_a = select_layers(a, filter.as_ref());
    let layers_b = select_layers(b, filter.as_ref());
    if layers_a.is_empty() || layers_b.is_empty() {
        return Err(AnalysisError::EmptyMatch(
            config.layer_filter.clone().unwrap_or_default(),
        ));
    }

    let prep = |set: &ActivationSet, layers: &[usize], rows: &[usize]| {
        layers
            .par_iter()
            .map(|&l| prepare_layer(set, l, rows, batch_size, config.pooling))
            .collect::<Result<Vec<_>, _>>()
    };
    let prep_a = prep(a, &layers_a, &rows_a)?;
    let prep_b = prep(b, &layers_b, &rows_b)?;

    let nb = layers_b.len();
    let flat: Vec<Option<f64>> = (0..layers_a.len() * nb)
        .into_par_iter()
        .map(|idx| {
            let (la, lb) = (&prep_a[idx / nb], &prep_b[idx % nb]);
            let mut acc = MinibatchCka::new();
            for (bi, (ga, gb)) in la.grams.iter().zip(&lb.grams).enumerate() {
                acc.push_terms(hsic1_prepared(ga, gb), la.self_terms[bi], lb.self_terms[bi]);
            }
            acc.value().ok()
        })
        .collect();

    Ok(CkaMatrix {
        layer_names_a: layers_a.iter().map(|&i| a.layers[i].name.clone()).collect(),
        layer_names_b: layers_b.iter().map(|&i| b.layers[i].name.clone()).collect(),
        values: flat.chunks(nb).map(|r| r.to_vec()).collect(),
        batch_size,
        num_batches,
        num_samples: num_batches * batch_size,
        pooling: config.pooling,
        filter: config.layer_filter.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;

    fn fm(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> FeatureMatrix {
        FeatureMatrix::anonymous(Mat::from_fn(rows, cols, f), "x").unwrap()
    }

    fn wobbly(rows: usize, cols: usize, seed: f64) -> FeatureMatrix {
        fm(rows, cols, |i, j| {
            ((i * 7 + j * 3) as f64 * 0.37 + seed).sin() + (i as f64 * seed).cos()
        })
    }

    #[test]
    fn self_similarity_is_exactly_one() {
        let x = wobbly(12, 5, 0.3);
        assert_eq!(cka_exact(&x, &x).unwrap(), 1.0);
        assert_eq!(cka_minibatch(&x, &x, 4).unwrap(), 1.0);
    }

    #[test]
    fn constant_features_are_undefined() {
        let x = wobbly(8, 3, 0.1);
        let c = fm(8, 3, |_, _| 2.5);
        assert!(matches!(
            cka_exact(&x, &c),
            Err(AnalysisError::Undefined(_))
        ));
    }

    #[test]
    fn single_batch_equals_exact() {
        let x = wobbly(10, 4, 0.7);
        let y = wobbly(10, 6, 1.9);
        assert_eq!(
            cka_minibatch(&x, &y, 10).unwrap(),
            cka_exact(&x, &y).unwrap()
        );
    }

    #[test]
    fn trailing_partial_batch_is_dropped() {
        let x = wobbly(11, 4, 0.7);
        let y = wobbly(11, 6, 1.9);
        let head = x.select_rows(&(0..8).collect::<Vec<_>>());
        let head_y = y.select_rows(&(0..8).collect::<Vec<_>>());
        assert_eq!(
            cka_minibatch(&x, &y, 4).unwrap(),
            cka_minibatch(&head, &head_y, 4).unwrap()
        );
    }

    #[test]
    fn rejects_misaligned_and_tiny_inputs() {
        let x = wobbly(8, 2, 0.2);
        let mut y = wobbly(8, 2, 0.5);
        y.sample_ids.swap(2, 3);
        assert!(matches!(
            cka_minibatch(&x, &y, 4),
            Err(AnalysisError::Align(_))
        ));
        assert!(cka_minibatch(&x, &x, 3).is_err());
        assert!(cka_minibatch(&x, &x, 16).is_err());
        let small = wobbly(3, 2, 0.2);
        assert!(cka_exact(&small, &small).is_err());
    }

    #[test]
    fn csv_marks_undefined_entries() {
        let m = CkaMatrix {
            layer_names_a: vec!["a0".into()],
            layer_names_b: vec!["b0".into(), "b1".into()],
            values: vec![vec![Some(0.5), None]],
            batch_size: 4,
            num_batches: 1,
            num_samples: 4,
            pooling: PoolMode::Flatten,
            filter: None,
        };
        assert_eq!(m.to_csv(), "layer,b0,b1\na0,0.5,undefined\n");
    }
}
