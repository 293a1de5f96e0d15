//! Agreement between two classifiers' predictions: Kendall's tau over top-k
//! class orderings and F1 of top-1 agreement.

use serde::{Deserialize, Serialize};

use crate::container::{align_ids, LabelTable};
use crate::error::{AnalysisError, ContainerError};
use crate::linalg::Mat;

/// Per-sample class orderings, most likely class first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub model_id: String,
    pub sample_ids: Vec<String>,
    pub num_classes: usize,
    /// Row-major `N x C`; every row is a permutation of `0..C`.
    pub ranks: Vec<u32>,
}

impl RankTable {
    pub fn new(
        model_id: impl Into<String>,
        sample_ids: Vec<String>,
        num_classes: usize,
        ranks: Vec<u32>,
    ) -> Result<Self, ContainerError> {
        let t = RankTable {
            model_id: model_id.into(),
            sample_ids,
            num_classes,
            ranks,
        };
        t.validate()?;
        Ok(t)
    }

    /// Orders classes by descending score, ties to the lower class index.
    pub fn from_scores(
        model_id: impl Into<String>,
        sample_ids: Vec<String>,
        scores: &Mat,
    ) -> Result<Self, ContainerError> {
        let mut ranks = Vec::with_capacity(scores.rows() * scores.cols());
        for i in 0..scores.rows() {
            let row = scores.row(i);
            let mut order: Vec<u32> = (0..row.len() as u32).collect();
            order.sort_by(|&a, &b| row[b as usize].total_cmp(&row[a as usize]).then(a.cmp(&b)));
            ranks.extend(order);
        }
        Self::new(model_id, sample_ids, scores.cols(), ranks)
    }

    pub fn validate(&self) -> Result<(), ContainerError> {
        let bad = |reason: String| ContainerError::Invariant {
            kind: "ranks",
            reason,
        };
        let c = self.num_classes;
        if c < 2 {
            return Err(bad(format!("need at least 2 classes, found {c}")));
        }
        if self.ranks.len() != self.sample_ids.len() * c {
            return Err(bad(format!(
                "{} rank entries for {} samples x {c} classes",
                self.ranks.len(),
                self.sample_ids.len()
            )));
        }
        let mut seen_ids = std::collections::HashSet::new();
        for id in &self.sample_ids {
            if !seen_ids.insert(id.as_str()) {
                return Err(bad(format!("duplicate sample id {id:?}")));
            }
        }
        let mut seen = vec![false; c];
        for (i, row) in self.ranks.chunks_exact(c).enumerate() {
            seen.iter_mut().for_each(|s| *s = false);
            for &cls in row {
                let cls = cls as usize;
                if cls >= c || std::mem::replace(&mut seen[cls], true) {
                    return Err(bad(format!("row {i} is not a permutation of 0..{c}")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.ranks[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn top1(&self, i: usize) -> usize {
        self.row(i)[0] as usize
    }

    /// Rank position of every class in row `i`.
    pub fn positions(&self, i: usize) -> Vec<usize> {
        let mut pos = vec![0; self.num_classes];
        for (p, &c) in self.row(i).iter().enumerate() {
            pos[c as usize] = p;
        }
        pos
    }
}

/// Tau-a between two rankings of the same `m` items, given as rank positions.
///
/// Pairs are enumerated as `(i, j)` with `i < j` in index order.
pub fn kendall_tau_pair(ranks_a: &[usize], ranks_b: &[usize]) -> Result<f64, AnalysisError> {
    let m = ranks_a.len();
    if ranks_b.len() != m {
        return Err(AnalysisError::Shape(format!(
            "rankings have lengths {m} and {}",
            ranks_b.len()
        )));
    }
    if m < 2 {
        return Err(AnalysisError::InvalidArgument(format!(
            "need at least 2 ranked items, found {m}"
        )));
    }
    for r in [ranks_a, ranks_b] {
        let mut sorted = r.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(AnalysisError::InvalidArgument(
                "duplicate rank positions".into(),
            ));
        }
    }
    let mut score: i64 = 0;
    for i in 0..m {
        for j in (i + 1)..m {
            let a = ranks_a[i].cmp(&ranks_a[j]);
            let b = ranks_b[i].cmp(&ranks_b[j]);
            score += if a == b { 1 } else { -1 };
        }
    }
    Ok(score as f64 / (m * (m - 1) / 2) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFilter {
    All,
    BothCorrect,
    BothIncorrect,
}

impl SampleFilter {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleFilter::All => "all",
            SampleFilter::BothCorrect => "both_correct",
            SampleFilter::BothIncorrect => "both_incorrect",
        }
    }
}

impl std::str::FromStr for SampleFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(SampleFilter::All),
            "both_correct" => Ok(SampleFilter::BothCorrect),
            "both_incorrect" => Ok(SampleFilter::BothIncorrect),
            _ => Err(format!(
                "unknown filter {s:?} (all, both_correct, both_incorrect)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTau {
    pub sample_id: String,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankConsistency {
    pub top_k: usize,
    pub filter: SampleFilter,
    pub mean: f64,
    /// Population standard deviation over retained samples.
    pub std: f64,
    pub retained: usize,
    pub aligned: usize,
    /// Retained samples, sorted by id.
    pub per_sample: Vec<SampleTau>,
}

impl RankConsistency {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,tau\n");
        for s in &self.per_sample {
            out.push_str(&format!("{},{}\n", s.sample_id, s.tau));
        }
        out
    }
}

/// Tau between `anchor`'s top-k ordering and where `other` ranks those
/// same classes.
fn anchored_tau(anchor: &[u32], other_positions: &[usize], k: usize) -> Result<f64, AnalysisError> {
    let own: Vec<usize> = (0..k).collect();
    let mapped: Vec<usize> = anchor[..k]
        .iter()
        .map(|&c| other_positions[c as usize])
        .collect();
    kendall_tau_pair(&own, &mapped)
}

/// Symmetrized per-sample tau of top-k orderings, averaged over the samples
/// the filter retains.
///
/// Samples are reduced in sample-id order, so swapping `a` and `b` gives a
/// bit-identical result.
pub fn rank_consistency(
    a: &RankTable,
    b: &RankTable,
    labels: Option<&LabelTable>,
    top_k: usize,
    filter: SampleFilter,
) -> Result<RankConsistency, AnalysisError> {
    if a.num_classes != b.num_classes {
        return Err(AnalysisError::Shape(format!(
            "rank tables have {} and {} classes",
            a.num_classes, b.num_classes
        )));
    }
    if top_k < 2 || top_k > a.num_classes {
        return Err(AnalysisError::InvalidArgument(format!(
            "top_k = {top_k} must be in 2..={}",
            a.num_classes
        )));
    }
    let mut pairs = align_ids(&a.sample_ids, &b.sample_ids)?.pairs;
    pairs.sort_by(|x, y| a.sample_ids[x.0].cmp(&a.sample_ids[y.0]));
    let labels = match (filter, labels) {
        (SampleFilter::All, l) => l,
        (_, Some(l)) => Some(l),
        (_, None) => {
            return Err(AnalysisError::InvalidArgument(format!(
                "filter {} needs labels",
                filter.as_str()
            )))
        }
    };

    let mut per_sample = Vec::new();
    for &(i, j) in &pairs {
        let id = &a.sample_ids[i];
        if filter != SampleFilter::All {
            let y = labels
                .and_then(|l| l.get(id))
                .ok_or_else(|| crate::error::LabelError::Missing(id.clone()))?;
            let (ca, cb) = (a.top1(i) == y, b.top1(j) == y);
            let keep = match filter {
                SampleFilter::BothCorrect => ca && cb,
                SampleFilter::BothIncorrect => !ca && !cb,
                SampleFilter::All => true,
            };
            if !keep {
                continue;
            }
        }
        let t_ab = anchored_tau(a.row(i), &b.positions(j), top_k)?;
        let t_ba = anchored_tau(b.row(j), &a.positions(i), top_k)?;
        per_sample.push(SampleTau {
            sample_id: id.clone(),
            tau: 0.5 * (t_ab + t_ba),
        });
    }
    if per_sample.is_empty() {
        return Err(AnalysisError::EmptySelection(format!(
            "filter {} retains no samples",
            filter.as_str()
        )));
    }
    let n = per_sample.len() as f64;
    let mean = per_sample.iter().map(|s| s.tau).sum::<f64>() / n;
    let var = per_sample
        .iter()
        .map(|s| (s.tau - mean) * (s.tau - mean))
        .sum::<f64>()
        / n;
    Ok(RankConsistency {
        top_k,
        filter,
        mean,
        std: var.sqrt(),
        retained: per_sample.len(),
        aligned: pairs.len(),
        per_sample,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top1Agreement {
    pub f1: f64,
    pub agreeing: usize,
    pub aligned: usize,
}

/// Micro-averaged F1 of `a`'s top-1 against `b`'s top-1, which for
/// single-label predictions is the fraction of aligned samples where they
/// agree.
pub fn top1_agreement_f1(a: &RankTable, b: &RankTable) -> Result<Top1Agreement, AnalysisError> {
    if a.num_classes != b.num_classes {
        return Err(AnalysisError::Shape(format!(
            "rank tables have {} and {} classes",
            a.num_classes, b.num_classes
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::EmptySelection(
            "rank table has no samples".into(),
        ));
    }
    let pairs = align_ids(&a.sample_ids, &b.sample_ids)?.pairs;
    let agreeing = pairs
        .iter()
        .filter(|&&(i, j)| a.top1(i) == b.top1(j))
        .count();
    Ok(Top1Agreement {
        f1: agreeing as f64 / pairs.len() as f64,
        agreeing,
        aligned: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(id: &str, rows: &[&[u32]]) -> RankTable {
        RankTable::new(
            id,
            (0..rows.len()).map(|i| format!("s{i}")).collect(),
            rows[0].len(),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn tau_examples() {
        assert_eq!(kendall_tau_pair(&[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap(), 1.0);
        assert_eq!(
            kendall_tau_pair(&[0, 1, 2, 3], &[3, 2, 1, 0]).unwrap(),
            -1.0
        );
        assert_eq!(
            kendall_tau_pair(&[1, 2, 3, 4, 5], &[2, 1, 3, 4, 5]).unwrap(),
            0.8
        );
        assert!(kendall_tau_pair(&[0], &[0]).is_err());
        assert!(kendall_tau_pair(&[0, 0, 1], &[0, 1, 2]).is_err());
        assert!(kendall_tau_pair(&[0, 1], &[0, 1, 2]).is_err());
    }

    #[test]
    fn rank_table_validation() {
        assert!(RankTable::new("m", vec!["a".into()], 3, vec![0, 1, 1]).is_err());
        assert!(RankTable::new("m", vec!["a".into()], 1, vec![0]).is_err());
        assert!(RankTable::new("m", vec!["a".into()], 3, vec![0, 1]).is_err());
        assert!(RankTable::new("m", vec!["a".into()], 2, vec![0, 2]).is_err());
    }

    #[test]
    fn from_scores_breaks_ties_low() {
        let scores = Mat::from_vec(2, 2, vec![0.1, 0.9, 0.5, 0.5]).unwrap();
        let t = RankTable::from_scores("m", vec!["a".into(), "b".into()], &scores).unwrap();
        assert_eq!(t.row(0), &[1, 0]);
        assert_eq!(t.row(1), &[0, 1]);
    }

    #[test]
    fn identical_and_reversed_tables() {
        let a = table("a", &[&[0, 1, 2, 3, 4, 5], &[5, 3, 1, 0, 2, 4]]);
        let r = rank_consistency(&a, &a, None, 5, SampleFilter::All).unwrap();
        assert!(r.per_sample.iter().all(|s| s.tau == 1.0));
        assert_eq!((r.mean, r.std), (1.0, 0.0));

        let rev = table("b", &[&[5, 4, 3, 2, 1, 0], &[4, 2, 0, 1, 3, 5]]);
        let r = rank_consistency(&a, &rev, None, 6, SampleFilter::All).unwrap();
        assert!(r.per_sample.iter().all(|s| s.tau == -1.0));
    }

    #[test]
    fn filters() {
        let a = table("a", &[&[0, 1, 2], &[1, 0, 2], &[2, 1, 0]]);
        let b = table("b", &[&[0, 2, 1], &[2, 0, 1], &[2, 0, 1]]);
        let labels = LabelTable::from_pairs([("s0", 0), ("s1", 0), ("s2", 2)]).unwrap();
        let r = rank_consistency(&a, &b, Some(&labels), 2, SampleFilter::BothCorrect).unwrap();
        assert_eq!(r.retained, 2);
        let r = rank_consistency(&a, &b, Some(&labels), 2, SampleFilter::BothIncorrect).unwrap();
        assert_eq!(r.per_sample[0].sample_id, "s1");
        let labels = LabelTable::from_pairs([("s0", 0), ("s1", 1), ("s2", 2)]).unwrap();
        assert!(matches!(
            rank_consistency(&a, &b, Some(&labels), 2, SampleFilter::BothIncorrect),
            Err(AnalysisError::EmptySelection(_))
        ));
        assert!(rank_consistency(&a, &b, None, 2, SampleFilter::BothCorrect).is_err());
        assert!(rank_consistency(&a, &b, None, 1, SampleFilter::All).is_err());
        assert!(rank_consistency(&a, &b, None, 4, SampleFilter::All).is_err());
    }

    #[test]
    fn f1_examples() {
        let a = table("a", &[&[0, 1], &[1, 0], &[0, 1]]);
        assert_eq!(top1_agreement_f1(&a, &a).unwrap().f1, 1.0);
        let b = table("b", &[&[1, 0], &[0, 1], &[1, 0]]);
        assert_eq!(top1_agreement_f1(&a, &b).unwrap().f1, 0.0);
        let c = table("c", &[&[0, 1], &[0, 1], &[1, 0]]);
        let f = top1_agreement_f1(&a, &c).unwrap();
        assert_eq!((f.agreeing, f.aligned), (1, 3));
    }
}
