//! Activation, rank and parameter containers and their REPSIM01 encoding.

mod format;
mod labels;
pub mod naming;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

pub use format::{align_up, ContainerIndex, Kind, Metadata, RawContainer, TensorEntry, MAGIC};
pub use labels::{read_labels, LabelTable};

use crate::consistency::RankTable;
use crate::error::{AlignError, ContainerError};

/// One named f32 tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorBlock {
    pub fn new(
        name: impl Into<String>,
        shape: Vec<usize>,
        data: Vec<f32>,
    ) -> Result<Self, ContainerError> {
        let t = TensorBlock {
            name: name.into(),
            shape,
            data,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ContainerError> {
        let bad = |reason: String| ContainerError::Layout {
            name: self.name.clone(),
            reason,
        };
        if self.name.is_empty() {
            return Err(bad("empty tensor name".into()));
        }
        if self.shape.is_empty() || self.shape.contains(&0) {
            return Err(bad(format!(
                "shape {:?} must be non-empty and positive",
                self.shape
            )));
        }
        let n: usize = self.shape.iter().product();
        if n != self.data.len() {
            return Err(bad(format!(
                "shape {:?} holds {n} values but {} are stored",
                self.shape,
                self.data.len()
            )));
        }
        Ok(())
    }

    /// Number of values per leading-axis entry.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

/// Per-layer activations of one model over an ordered sample list.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub model_id: String,
    pub sample_ids: Vec<String>,
    pub layers: Vec<TensorBlock>,
}

impl ActivationSet {
    pub fn num_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn layer(&self, name: &str) -> Option<&TensorBlock> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|l| l.name.as_str())
    }

    pub fn validate(&self) -> Result<(), ContainerError> {
        let bad = |reason: String| ContainerError::Invariant {
            kind: "activations",
            reason,
        };
        check_unique(&self.sample_ids).map_err(|id| bad(format!("duplicate sample id {id:?}")))?;
        let mut names = HashSet::new();
        for l in &self.layers {
            l.validate()?;
            if !names.insert(l.name.as_str()) {
                return Err(bad(format!("duplicate layer name {:?}", l.name)));
            }
            if !(2..=3).contains(&l.shape.len()) {
                return Err(bad(format!(
                    "layer {:?} has rank {}, expected [N, d] or [N, T, d]",
                    l.name,
                    l.shape.len()
                )));
            }
            if l.shape[0] != self.sample_ids.len() {
                return Err(bad(format!(
                    "layer {:?} has {} samples but the set has {}",
                    l.name,
                    l.shape[0],
                    self.sample_ids.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot {
    pub epoch: u64,
    pub groups: Vec<(String, Vec<f32>)>,
}

/// Parameter vectors per group, one snapshot per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshotSeries {
    pub model_id: String,
    pub snapshots: Vec<ParamSnapshot>,
}

impl ParamSnapshotSeries {
    pub fn group_names(&self) -> Vec<&str> {
        self.snapshots
            .first()
            .map(|s| s.groups.iter().map(|(n, _)| n.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ContainerError> {
        let bad = |reason: String| ContainerError::Invariant {
            kind: "params",
            reason,
        };
        for w in self.snapshots.windows(2) {
            if w[1].epoch <= w[0].epoch {
                return Err(bad(format!(
                    "epoch indices must strictly increase ({} then {})",
                    w[0].epoch, w[1].epoch
                )));
            }
        }
        let Some(first) = self.snapshots.first() else {
            return Ok(());
        };
        let mut names = HashSet::new();
        for (name, v) in &first.groups {
            if name.is_empty() || name.contains('/') {
                return Err(bad(format!("invalid group name {name:?}")));
            }
            if !names.insert(name.as_str()) {
                return Err(bad(format!("duplicate group {name:?}")));
            }
            if v.is_empty() {
                return Err(bad(format!("group {name:?} is empty")));
            }
        }
        for s in &self.snapshots[1..] {
            if s.groups.len() != first.groups.len() {
                return Err(bad(format!(
                    "epoch {} has {} groups, epoch {} has {}",
                    s.epoch,
                    s.groups.len(),
                    first.epoch,
                    first.groups.len()
                )));
            }
            for ((n0, v0), (n, v)) in first.groups.iter().zip(&s.groups) {
                if n0 != n {
                    return Err(bad(format!(
                        "epoch {} lists group {n:?} where {n0:?} was expected",
                        s.epoch
                    )));
                }
                if v0.len() != v.len() {
                    return Err(bad(format!(
                        "group {n:?} has length {} at epoch {} but {} at epoch {}",
                        v.len(),
                        s.epoch,
                        v0.len(),
                        first.epoch
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_unique(ids: &[String]) -> Result<(), String> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(id.clone());
        }
    }
    Ok(())
}

/// Typed view of a container's contents.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Activations(ActivationSet),
    Ranks(RankTable),
    Params(ParamSnapshotSeries),
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Activations(_) => Kind::Activations,
            Payload::Ranks(_) => Kind::Ranks,
            Payload::Params(_) => Kind::Params,
        }
    }
}

/// Conversion between a typed set and the raw container layout.
pub trait ContainerPayload: Sized {
    const KIND: Kind;
    fn to_raw(&self) -> Result<RawContainer, ContainerError>;
    fn from_raw(raw: RawContainer) -> Result<Self, ContainerError>;
}

impl ContainerPayload for ActivationSet {
    const KIND: Kind = Kind::Activations;

    fn to_raw(&self) -> Result<RawContainer, ContainerError> {
        self.validate()?;
        Ok(RawContainer {
            kind: Kind::Activations,
            model_id: self.model_id.clone(),
            sample_ids: self.sample_ids.clone(),
            tensors: self.layers.clone(),
        })
    }

    fn from_raw(raw: RawContainer) -> Result<Self, ContainerError> {
        expect_kind(&raw, Kind::Activations)?;
        let set = ActivationSet {
            model_id: raw.model_id,
            sample_ids: raw.sample_ids,
            layers: raw.tensors,
        };
        set.validate()?;
        Ok(set)
    }
}

const RANKS_TENSOR: &str = "ranks";

impl ContainerPayload for RankTable {
    const KIND: Kind = Kind::Ranks;

    fn to_raw(&self) -> Result<RawContainer, ContainerError> {
        self.validate()?;
        // class indices are exact in f32 below 2^24
        let data = self.ranks.iter().map(|&c| c as f32).collect();
        Ok(RawContainer {
            kind: Kind::Ranks,
            model_id: self.model_id.clone(),
            sample_ids: self.sample_ids.clone(),
            tensors: vec![TensorBlock {
                name: RANKS_TENSOR.into(),
                shape: vec![self.sample_ids.len(), self.num_classes],
                data,
            }],
        })
    }

    fn from_raw(raw: RawContainer) -> Result<Self, ContainerError> {
        expect_kind(&raw, Kind::Ranks)?;
        let bad = |reason: String| ContainerError::Invariant {
            kind: "ranks",
            reason,
        };
        let t = match raw.tensors.as_slice() {
            [t] if t.name == RANKS_TENSOR && t.shape.len() == 2 => t,
            _ => return Err(bad("expected a single 2-d tensor named \"ranks\"".into())),
        };
        let mut ranks = Vec::with_capacity(t.data.len());
        for &v in &t.data {
            if v < 0.0 || v.fract() != 0.0 || v >= (1u32 << 24) as f32 {
                return Err(bad(format!("{v} is not a class index")));
            }
            ranks.push(v as u32);
        }
        let table = RankTable {
            model_id: raw.model_id,
            sample_ids: raw.sample_ids,
            num_classes: t.shape[1],
            ranks,
        };
        table.validate()?;
        Ok(table)
    }
}

impl ContainerPayload for ParamSnapshotSeries {
    const KIND: Kind = Kind::Params;

    /// Every tensor is named `epoch_{:04}/{group}` so a whole series fits in
    /// one file.
    fn to_raw(&self) -> Result<RawContainer, ContainerError> {
        self.validate()?;
        let mut tensors = Vec::new();
        for s in &self.snapshots {
            for (g, v) in &s.groups {
                tensors.push(TensorBlock {
                    name: format!("{}/{g}", epoch_stem(s.epoch)),
                    shape: vec![v.len()],
                    data: v.clone(),
                });
            }
        }
        Ok(RawContainer {
            kind: Kind::Params,
            model_id: self.model_id.clone(),
            sample_ids: Vec::new(),
            tensors,
        })
    }

    /// Accepts either epoch-prefixed tensor names or bare group names; the
    /// latter form is a single snapshot at epoch 0.
    fn from_raw(raw: RawContainer) -> Result<Self, ContainerError> {
        expect_kind(&raw, Kind::Params)?;
        let bad = |reason: String| ContainerError::Invariant {
            kind: "params",
            reason,
        };
        let prefixed = raw.tensors.iter().filter(|t| t.name.contains('/')).count();
        let mut snapshots: Vec<ParamSnapshot> = Vec::new();
        if prefixed == 0 {
            snapshots.push(ParamSnapshot {
                epoch: 0,
                groups: raw.tensors.into_iter().map(|t| (t.name, t.data)).collect(),
            });
        } else if prefixed == raw.tensors.len() {
            for t in raw.tensors {
                let (stem, group) = t.name.split_once('/').unwrap();
                let epoch = parse_epoch_stem(stem)
                    .ok_or_else(|| bad(format!("tensor {:?} has no epoch_NNNN prefix", t.name)))?;
                match snapshots.last_mut() {
                    Some(s) if s.epoch == epoch => s.groups.push((group.to_string(), t.data)),
                    _ => snapshots.push(ParamSnapshot {
                        epoch,
                        groups: vec![(group.to_string(), t.data)],
                    }),
                }
            }
        } else {
            return Err(bad("mix of epoch-prefixed and bare tensor names".into()));
        }
        let series = ParamSnapshotSeries {
            model_id: raw.model_id,
            snapshots,
        };
        series.validate()?;
        Ok(series)
    }
}

fn expect_kind(raw: &RawContainer, kind: Kind) -> Result<(), ContainerError> {
    if raw.kind != kind {
        return Err(ContainerError::WrongKind {
            expected: kind.as_str().into(),
            found: raw.kind.as_str().into(),
        });
    }
    Ok(())
}

pub fn epoch_stem(epoch: u64) -> String {
    format!("epoch_{epoch:04}")
}

fn parse_epoch_stem(stem: &str) -> Option<u64> {
    let digits = stem.strip_prefix("epoch_")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Validates `set` and writes it to `path`. Nothing is written on an
/// invariant violation.
pub fn write_container<P: ContainerPayload>(set: &P, path: &Path) -> Result<(), ContainerError> {
    set.to_raw()?.write(path)
}

pub fn read_container(path: &Path) -> Result<Payload, ContainerError> {
    let raw = RawContainer::read(path)?;
    Ok(match raw.kind {
        Kind::Activations => Payload::Activations(ActivationSet::from_raw(raw)?),
        Kind::Ranks => Payload::Ranks(RankTable::from_raw(raw)?),
        Kind::Params => Payload::Params(ParamSnapshotSeries::from_raw(raw)?),
    })
}

/// Reads a container and requires it to hold `P`.
pub fn read_as<P: ContainerPayload>(path: &Path) -> Result<P, ContainerError> {
    P::from_raw(RawContainer::read(path)?)
}

/// Writes one `epoch_{:04}.rs1` file per snapshot, tensors named by group.
pub fn write_snapshot_dir(
    series: &ParamSnapshotSeries,
    dir: &Path,
) -> Result<Vec<PathBuf>, ContainerError> {
    series.validate()?;
    std::fs::create_dir_all(dir).map_err(|source| ContainerError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths = Vec::new();
    for s in &series.snapshots {
        let raw = RawContainer {
            kind: Kind::Params,
            model_id: series.model_id.clone(),
            sample_ids: Vec::new(),
            tensors: s
                .groups
                .iter()
                .map(|(g, v)| TensorBlock {
                    name: g.clone(),
                    shape: vec![v.len()],
                    data: v.clone(),
                })
                .collect(),
        };
        let p = dir.join(format!("{}.rs1", epoch_stem(s.epoch)));
        raw.write(&p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Loads `epoch_*.rs1` files in lexicographic filename order. The epoch index
/// comes from the filename.
pub fn read_snapshot_dir(dir: &Path) -> Result<ParamSnapshotSeries, ContainerError> {
    let io = |source| ContainerError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("epoch_") && name.ends_with(".rs1") {
            files.push((name, entry.path()));
        }
    }
    files.sort();
    let mut model_id = None;
    let mut snapshots = Vec::with_capacity(files.len());
    for (name, path) in files {
        let epoch = parse_epoch_stem(name.trim_end_matches(".rs1")).ok_or_else(|| {
            ContainerError::Invariant {
                kind: "params",
                reason: format!("cannot parse epoch from file name {name:?}"),
            }
        })?;
        let raw = RawContainer::read(&path)?;
        let prefixed = raw.tensors.iter().any(|t| t.name.contains('/'));
        let mut series = ParamSnapshotSeries::from_raw(raw)?;
        if series.snapshots.len() != 1 {
            return Err(ContainerError::Invariant {
                kind: "params",
                reason: format!(
                    "{name} holds {} snapshots, expected 1",
                    series.snapshots.len()
                ),
            });
        }
        let mut snap = series.snapshots.pop().unwrap();
        if prefixed && snap.epoch != epoch {
            return Err(ContainerError::Invariant {
                kind: "params",
                reason: format!("{name} is tagged epoch {}", snap.epoch),
            });
        }
        snap.epoch = epoch;
        model_id.get_or_insert(series.model_id);
        snapshots.push(snap);
    }
    let series = ParamSnapshotSeries {
        model_id: model_id.unwrap_or_default(),
        snapshots,
    };
    series.validate()?;
    Ok(series)
}

/// Index pairs of samples present in both id lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// `(index in a, index in b)`, ordered by the index in a.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_a: usize,
    pub unmatched_b: usize,
}

impl Alignment {
    pub fn is_identity(&self) -> bool {
        self.unmatched_a == 0
            && self.unmatched_b == 0
            && self
                .pairs
                .iter()
                .enumerate()
                .all(|(k, &(i, j))| i == k && j == k)
    }

    pub fn a_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn b_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

pub fn align_ids(a: &[String], b: &[String]) -> Result<Alignment, AlignError> {
    let b_index: std::collections::HashMap<&str, usize> = b
        .iter()
        .enumerate()
        .map(|(j, id)| (id.as_str(), j))
        .collect();
    let pairs: Vec<(usize, usize)> = a
        .iter()
        .enumerate()
        .filter_map(|(i, id)| b_index.get(id.as_str()).map(|&j| (i, j)))
        .collect();
    let unmatched_a = a.len() - pairs.len();
    let unmatched_b = b.len() - pairs.len();
    if pairs.is_empty() {
        return Err(AlignError::EmptyIntersection {
            unmatched_a,
            unmatched_b,
        });
    }
    Ok(Alignment {
        pairs,
        unmatched_a,
        unmatched_b,
    })
}

pub fn align_samples(a: &ActivationSet, b: &ActivationSet) -> Result<Alignment, AlignError> {
    align_ids(&a.sample_ids, &b.sample_ids)
}
