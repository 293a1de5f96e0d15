//! Path efficiency of parameter trajectories: straight-line displacement
//! between the first and last snapshot divided by the summed per-step
//! displacement.

use serde::{Deserialize, Serialize};

use crate::container::naming::{LayerType, NamePattern};
use crate::container::ParamSnapshotSeries;
use crate::error::AnalysisError;

/// Selects parameter groups by layer type (`attn`, `ln`, `fc`), by name
/// pattern, or all of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupFilter {
    All,
    Type(LayerType),
    Pattern(NamePattern),
}

impl GroupFilter {
    pub fn parse(s: &str) -> Self {
        if s.is_empty() || s == "all" {
            GroupFilter::All
        } else if let Some(t) = LayerType::parse(s) {
            GroupFilter::Type(t)
        } else {
            GroupFilter::Pattern(NamePattern::new(s))
        }
    }

    pub fn matches(&self, group: &str) -> bool {
        match self {
            GroupFilter::All => true,
            GroupFilter::Type(t) => LayerType::of(group) == Some(*t),
            GroupFilter::Pattern(p) => p.matches(group),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            GroupFilter::All => "all".into(),
            GroupFilter::Type(t) => t.as_str().into(),
            GroupFilter::Pattern(p) => p.as_str().into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// One stored parameter group.
    Group,
    /// All selected groups of one layer type, jointly.
    LayerType,
    /// All selected groups jointly.
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    pub name: String,
    pub scope: Scope,
    pub num_params: usize,
    /// `||θ_T - θ_0||₂`
    pub displacement: f64,
    /// `Σ_t ||θ_t - θ_{t-1}||₂`
    pub path_length: f64,
    pub efficiency: f64,
    /// No movement at all; efficiency is reported as 1.
    pub stationary: bool,
    pub step_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEfficiencyReport {
    pub model_id: String,
    pub filter: String,
    pub epochs: Vec<u64>,
    pub groups: Vec<PathStats>,
    pub layer_types: Vec<PathStats>,
    pub aggregate: PathStats,
}

impl PathEfficiencyReport {
    pub fn all_stats(&self) -> impl Iterator<Item = &PathStats> {
        self.groups
            .iter()
            .chain(&self.layer_types)
            .chain(std::iter::once(&self.aggregate))
    }

    /// Per-step displacement table: one row per step, one column per series.
    pub fn deltas_csv(&self) -> String {
        let stats: Vec<&PathStats> = self.all_stats().collect();
        let mut out = String::from("step,from_epoch,to_epoch");
        for s in &stats {
            let prefix = match s.scope {
                Scope::Group => "group",
                Scope::LayerType => "type",
                Scope::Aggregate => "all",
            };
            out.push_str(&format!(",{prefix}:{}", s.name));
        }
        out.push('\n');
        for t in 1..self.epochs.len() {
            out.push_str(&format!("{t},{},{}", self.epochs[t - 1], self.epochs[t]));
            for s in &stats {
                out.push_str(&format!(",{}", s.step_norms[t - 1]));
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out =
            String::from("scope,name,num_params,displacement,path_length,efficiency,stationary\n");
        for s in self.all_stats() {
            let scope = match s.scope {
                Scope::Group => "group",
                Scope::LayerType => "layer_type",
                Scope::Aggregate => "aggregate",
            };
            out.push_str(&format!(
                "{scope},{},{},{},{},{},{}\n",
                s.name, s.num_params, s.displacement, s.path_length, s.efficiency, s.stationary
            ));
        }
        out
    }
}

/// L2 norm of the difference between snapshots `from` and `to` over the
/// listed groups, accumulated in f64 in group then element order.
fn diff_norm(series: &ParamSnapshotSeries, groups: &[usize], from: usize, to: usize) -> f64 {
    let (a, b) = (&series.snapshots[from], &series.snapshots[to]);
    let mut sum = 0.0f64;
    for &g in groups {
        for (&x, &y) in a.groups[g].1.iter().zip(&b.groups[g].1) {
            let d = y as f64 - x as f64;
            sum += d * d;
        }
    }
    sum.sqrt()
}

fn path_stats(
    series: &ParamSnapshotSeries,
    name: String,
    scope: Scope,
    groups: &[usize],
) -> PathStats {
    let last = series.snapshots.len() - 1;
    let step_norms: Vec<f64> = (1..=last)
        .map(|t| diff_norm(series, groups, t - 1, t))
        .collect();
    let path_length: f64 = step_norms.iter().sum();
    let displacement = diff_norm(series, groups, 0, last);
    let stationary = path_length == 0.0;
    PathStats {
        name,
        scope,
        num_params: groups
            .iter()
            .map(|&g| series.snapshots[0].groups[g].1.len())
            .sum(),
        displacement,
        path_length,
        efficiency: if stationary {
            1.0
        } else {
            displacement / path_length
        },
        stationary,
        step_norms,
    }
}

fn check_series(
    series: &ParamSnapshotSeries,
    filter: &GroupFilter,
) -> Result<Vec<usize>, AnalysisError> {
    series
        .validate()
        .map_err(|e| AnalysisError::Shape(e.to_string()))?;
    if series.snapshots.len() < 2 {
        return Err(AnalysisError::InvalidArgument(format!(
            "need at least 2 snapshots, found {}",
            series.snapshots.len()
        )));
    }
    let selected: Vec<usize> = series.snapshots[0]
        .groups
        .iter()
        .enumerate()
        .filter(|(_, (name, _))| filter.matches(name))
        .map(|(i, _)| i)
        .collect();
    if selected.is_empty() {
        return Err(AnalysisError::EmptyMatch(filter.describe()));
    }
    Ok(selected)
}

/// Path efficiency per selected group, per layer type present among them,
/// and for all selected groups jointly.
pub fn path_efficiency(
    series: &ParamSnapshotSeries,
    filter: &GroupFilter,
) -> Result<PathEfficiencyReport, AnalysisError> {
    let selected = check_series(series, filter)?;
    let names = &series.snapshots[0].groups;
    let groups = selected
        .iter()
        .map(|&g| path_stats(series, names[g].0.clone(), Scope::Group, &[g]))
        .collect();
    let layer_types = LayerType::ALL
        .into_iter()
        .filter_map(|t| {
            let members: Vec<usize> = selected
                .iter()
                .copied()
                .filter(|&g| LayerType::of(&names[g].0) == Some(t))
                .collect();
            (!members.is_empty())
                .then(|| path_stats(series, t.as_str().into(), Scope::LayerType, &members))
        })
        .collect();
    Ok(PathEfficiencyReport {
        model_id: series.model_id.clone(),
        filter: filter.describe(),
        epochs: series.snapshots.iter().map(|s| s.epoch).collect(),
        groups,
        layer_types,
        aggregate: path_stats(series, "all".into(), Scope::Aggregate, &selected),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDeltas {
    pub name: String,
    pub deltas: Vec<f64>,
}

/// `||θ_t - θ_{t-1}||₂` for every step, per selected group and jointly.
pub fn per_epoch_deltas(
    series: &ParamSnapshotSeries,
    filter: &GroupFilter,
) -> Result<Vec<GroupDeltas>, AnalysisError> {
    let selected = check_series(series, filter)?;
    let last = series.snapshots.len() - 1;
    let mut out: Vec<GroupDeltas> = selected
        .iter()
        .map(|&g| GroupDeltas {
            name: series.snapshots[0].groups[g].0.clone(),
            deltas: (1..=last)
                .map(|t| diff_norm(series, &[g], t - 1, t))
                .collect(),
        })
        .collect();
    out.push(GroupDeltas {
        name: "all".into(),
        deltas: (1..=last)
            .map(|t| diff_norm(series, &selected, t - 1, t))
            .collect(),
    });
    Ok(out)
}
