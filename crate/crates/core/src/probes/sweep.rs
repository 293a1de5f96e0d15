use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{knn_classify, pool_features, PoolMode};
use crate::container::naming::parse_block;
use crate::container::{ActivationSet, LabelTable};
use crate::error::AnalysisError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSweepRow {
    pub block: usize,
    pub layer: String,
    /// One accuracy per pooling mode, in the sweep's mode order.
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSweep {
    pub k: usize,
    pub modes: Vec<PoolMode>,
    pub rows: Vec<DepthSweepRow>,
    /// Eval ids also present in the training set.
    pub overlapping_ids: usize,
    pub warnings: Vec<String>,
}

impl DepthSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block,layer");
        for m in &self.modes {
            out.push(',');
            out.push_str(m.as_str());
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{}", r.block, r.layer));
            for a in &r.accuracy {
                out.push_str(&format!(",{a}"));
            }
            out.push('\n');
        }
        out
    }
}

/// The output layer of each block: `block{i}.mlp.fc2` when dumped, otherwise
/// the last dumped layer of block `i`. Ordered by block index.
pub fn block_output_layers(set: &ActivationSet) -> Vec<(usize, String)> {
    let mut by_block: BTreeMap<usize, String> = BTreeMap::new();
    for name in set.layer_names() {
        if let Some((i, rest)) = parse_block(name) {
            let slot = by_block.entry(i).or_default();
            if !slot.ends_with(".mlp.fc2") || rest == "mlp.fc2" {
                *slot = name.to_string();
            }
        }
    }
    by_block.into_iter().collect()
}

/// k-NN accuracy after every block for each pooling mode.
pub fn knn_depth_sweep(
    train: &ActivationSet,
    train_labels: &LabelTable,
    eval: &ActivationSet,
    eval_labels: &LabelTable,
    modes: &[PoolMode],
    k: usize,
) -> Result<DepthSweep, AnalysisError> {
    if modes.is_empty() {
        return Err(AnalysisError::InvalidArgument(
            "no pooling modes given".into(),
        ));
    }
    let blocks = block_output_layers(train);
    if blocks.is_empty() {
        return Err(AnalysisError::EmptyMatch("block*".into()));
    }
    let train_ids: HashSet<&str> = train.sample_ids.iter().map(String::as_str).collect();
    let overlapping_ids = eval
        .sample_ids
        .iter()
        .filter(|id| train_ids.contains(id.as_str()))
        .count();
    let mut warnings = Vec::new();
    if overlapping_ids > 0 {
        warnings.push(format!(
            "{overlapping_ids} eval samples also appear in the training set; accuracies are optimistic"
        ));
    }
    let mut rows = Vec::with_capacity(blocks.len());
    for (block, layer) in blocks {
        let mut accuracy = Vec::with_capacity(modes.len());
        for &mode in modes {
            let tr = pool_features(train, &layer, mode)?;
            let ev = pool_features(eval, &layer, mode)?;
            accuracy.push(knn_classify(&tr, train_labels, &ev, eval_labels, k)?.accuracy);
        }
        rows.push(DepthSweepRow {
            block,
            layer,
            accuracy,
        });
    }
    Ok(DepthSweep {
        k,
        modes: modes.to_vec(),
        rows,
        overlapping_ids,
        warnings,
    })
}
