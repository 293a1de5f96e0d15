use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::container::LabelTable;
use crate::error::AnalysisError;
use crate::linalg::{dot, Mat};

pub const DEFAULT_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnResult {
    pub k: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub predictions: Vec<usize>,
}

/// Rows scaled to unit L2 norm; all-zero rows stay zero.
pub fn l2_normalize_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = dot(row, row).sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Majority vote among the `k` most cosine-similar training rows.
///
/// Neighbours are ordered by similarity, then by lower training index. Vote
/// ties go to the class with the higher summed similarity, then to the lower
/// class index.
pub fn knn_predict(
    train: &Mat,
    train_labels: &[usize],
    eval: &Mat,
    k: usize,
) -> Result<Vec<usize>, AnalysisError> {
    if train.rows() == 0 {
        return Err(AnalysisError::EmptySelection(
            "training set is empty".into(),
        ));
    }
    if train.cols() != eval.cols() {
        return Err(AnalysisError::Shape(format!(
            "train features have dimension {} but eval features {}",
            train.cols(),
            eval.cols()
        )));
    }
    if k == 0 || k > train.rows() {
        return Err(AnalysisError::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            train.rows()
        )));
    }
    let num_classes = train_labels.iter().max().map_or(0, |m| m + 1);
    let train = l2_normalize_rows(train);
    let eval = l2_normalize_rows(eval);
    let predictions = (0..eval.rows())
        .into_par_iter()
        .map(|e| {
            let q = eval.row(e);
            let mut sims: Vec<(f64, usize)> = (0..train.rows())
                .map(|t| (dot(q, train.row(t)), t))
                .collect();
            let order =
                |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            if k < sims.len() {
                sims.select_nth_unstable_by(k - 1, order);
                sims.truncate(k);
            }
            sims.sort_unstable_by(order);
            let mut votes = vec![0usize; num_classes];
            let mut weight = vec![0.0f64; num_classes];
            for &(s, t) in &sims {
                votes[train_labels[t]] += 1;
                weight[train_labels[t]] += s;
            }
            (0..num_classes)
                .max_by(|&a, &b| {
                    votes[a]
                        .cmp(&votes[b])
                        .then(weight[a].total_cmp(&weight[b]))
                        .then(b.cmp(&a))
                })
                .unwrap_or(0)
        })
        .collect();
    Ok(predictions)
}

pub fn knn_classify(
    train: &FeatureMatrix,
    train_labels: &LabelTable,
    eval: &FeatureMatrix,
    eval_labels: &LabelTable,
    k: usize,
) -> Result<KnnResult, AnalysisError> {
    let y_train = train_labels.lookup(&train.sample_ids)?;
    let y_eval = eval_labels.lookup(&eval.sample_ids)?;
    let predictions = knn_predict(&train.values, &y_train, &eval.values, k)?;
    let correct = predictions
        .iter()
        .zip(&y_eval)
        .filter(|(p, y)| p == y)
        .count();
    let accuracy = if predictions.is_empty() {
        0.0
    } else {
        correct as f64 / predictions.len() as f64
    };
    Ok(KnnResult {
        k,
        accuracy,
        correct,
        predictions,
    })
}
