//! Seeded fixtures with analytically known structure.
//!
//! Randomness comes from xoshiro256++ seeded through SplitMix64
//! (`seed_from_u64`). Independent streams are derived from one seed by
//! applying the generator's `jump()` function `stream` times, so stream `k`
//! of seed `s` is reproducible from the published generator definitions.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::consistency::RankTable;
use crate::container::{
    ActivationSet, LabelTable, ParamSnapshot, ParamSnapshotSeries, TensorBlock,
};
use crate::error::AnalysisError;
use crate::linalg::{orthonormalize_columns, Mat};
use crate::probes::FeatureMatrix;

/// Magnitude of planted class signal relative to unit noise.
pub const SIGNAL_SCALE: f64 = 4.0;
pub const PLANTED_DIM: usize = 16;
pub const PLANTED_TOKENS: usize = 4;
pub const INTERMEDIATE_LAYER: &str = "block0.mlp.fc2";
pub const FINAL_LAYER: &str = "block1.mlp.fc2";

/// Stream `stream` of `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> Xoshiro256PlusPlus {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..stream {
        rng.jump();
    }
    rng
}

fn gaussian(rng: &mut Xoshiro256PlusPlus) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Xoshiro256PlusPlus) -> Mat {
    Mat::from_fn(rows, cols, |_, _| gaussian(rng))
}

fn check_n(n: usize) -> Result<(), AnalysisError> {
    if n < 4 {
        return Err(AnalysisError::InvalidArgument(format!(
            "fixtures need n >= 4, got {n}"
        )));
    }
    Ok(())
}

/// Seeded random orthogonal `p x p` matrix: Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(p: usize, rng: &mut Xoshiro256PlusPlus) -> Result<Mat, AnalysisError> {
    orthonormalize_columns(&gaussian_matrix(p, p, rng))
}

pub struct OrthogonalPair {
    pub x: FeatureMatrix,
    pub y: FeatureMatrix,
    pub q: Mat,
}

/// `X` standard Gaussian (stream 0), `Y = X Q` with `Q` orthogonal (stream 1).
pub fn gen_orthogonal_pair(n: usize, p: usize, seed: u64) -> Result<OrthogonalPair, AnalysisError> {
    check_n(n)?;
    if p == 0 {
        return Err(AnalysisError::InvalidArgument("p must be positive".into()));
    }
    let x = gaussian_matrix(n, p, &mut rng_stream(seed, 0));
    let q = random_orthogonal(p, &mut rng_stream(seed, 1))?;
    let y = x.matmul(&q)?;
    Ok(OrthogonalPair {
        x: FeatureMatrix::anonymous(x, "x")?,
        y: FeatureMatrix::anonymous(y, "y")?,
        q,
    })
}

/// Two independent standard Gaussian matrices (streams 0 and 1).
pub fn gen_independent_pair(
    n: usize,
    p_a: usize,
    p_b: usize,
    seed: u64,
) -> Result<(FeatureMatrix, FeatureMatrix), AnalysisError> {
    check_n(n)?;
    if p_a == 0 || p_b == 0 {
        return Err(AnalysisError::InvalidArgument(
            "feature dimensions must be positive".into(),
        ));
    }
    let x = gaussian_matrix(n, p_a, &mut rng_stream(seed, 0));
    let y = gaussian_matrix(n, p_b, &mut rng_stream(seed, 1));
    Ok((
        FeatureMatrix::anonymous(x, "x")?,
        FeatureMatrix::anonymous(y, "y")?,
    ))
}

/// Gaussian blobs: `num_classes` centers drawn with scale `separation`,
/// unit-variance points, labels `i % num_classes`.
pub fn gen_blobs(
    n: usize,
    num_classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> (Mat, Vec<usize>) {
    let centers = gaussian_matrix(num_classes, dim, &mut rng_stream(seed, 1)).scale(separation);
    let mut rng = rng_stream(seed, 0);
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes.max(1)).collect();
    let x = Mat::from_fn(n, dim, |i, j| {
        centers.get(labels[i], j) + gaussian(&mut rng)
    });
    (x, labels)
}

fn sample_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:06}")).collect()
}

fn to_block(name: &str, shape: Vec<usize>, m: &Mat) -> TensorBlock {
    TensorBlock {
        name: name.to_string(),
        shape,
        data: m.as_slice().iter().map(|&v| v as f32).collect(),
    }
}

/// Activation sets whose layers are `[n, p]` Gaussian blocks. Layer `i` of
/// `a` uses stream `i`; layer `i` of `b` is either `a`'s layer times a random
/// orthogonal matrix (`orthogonal`) or an independent Gaussian block.
pub fn gen_layered_pair(
    n: usize,
    p: usize,
    layers: usize,
    orthogonal: bool,
    seed: u64,
) -> Result<(ActivationSet, ActivationSet), AnalysisError> {
    check_n(n)?;
    let ids = sample_ids(n);
    let mut la = Vec::with_capacity(layers);
    let mut lb = Vec::with_capacity(layers);
    for i in 0..layers {
        let name = format!("block{i}.mlp.fc2");
        let x = gaussian_matrix(n, p, &mut rng_stream(seed, i as u64));
        let y = if orthogonal {
            x.matmul(&random_orthogonal(
                p,
                &mut rng_stream(seed, (layers + i) as u64),
            )?)?
        } else {
            gaussian_matrix(n, p, &mut rng_stream(seed, (layers + i) as u64))
        };
        la.push(to_block(&name, vec![n, p], &x));
        lb.push(to_block(&name, vec![n, p], &y));
    }
    Ok((
        ActivationSet {
            model_id: format!("synth-a-{seed}"),
            sample_ids: ids.clone(),
            layers: la,
        },
        ActivationSet {
            model_id: format!("synth-b-{seed}"),
            sample_ids: ids,
            layers: lb,
        },
    ))
}

/// A single activation set of `[n, ..tail]` Gaussian layers, layer `i` drawn
/// from stream `i`.
pub fn gen_gaussian_set(
    model_id: &str,
    n: usize,
    names: &[String],
    tail: &[usize],
    seed: u64,
) -> ActivationSet {
    let row: usize = tail.iter().product();
    let mut shape = vec![n];
    shape.extend_from_slice(tail);
    let layers = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut rng = rng_stream(seed, i as u64);
            TensorBlock {
                name: name.clone(),
                shape: shape.clone(),
                data: (0..n * row).map(|_| gaussian(&mut rng) as f32).collect(),
            }
        })
        .collect();
    ActivationSet {
        model_id: model_id.into(),
        sample_ids: sample_ids(n),
        layers,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Class means in the final layer's CLS token.
    Final,
    /// Class means only in the intermediate layer; the final layer is noise.
    Intermediate,
    /// Two-class parity of the signs of two final-layer CLS features.
    Xor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n: usize,
    pub num_classes: usize,
    pub placement: Placement,
    pub noise: f64,
    pub seed: u64,
    /// Multipliers applied to the intermediate and final layers.
    pub layer_scales: [f64; 2],
}

impl PlantedSpec {
    pub fn new(n: usize, num_classes: usize, placement: Placement, seed: u64) -> Self {
        PlantedSpec {
            n,
            num_classes,
            placement,
            noise: 1.0,
            seed,
            layer_scales: [1.0, 1.0],
        }
    }
}

/// Two-block token-level fixture (`[n, 4, 16]` per layer) with class signal
/// planted per `placement`. Sample `i` has class `i % num_classes` except for
/// `xor`, where the class is the sign parity.
pub fn gen_planted_probe_fixture(
    spec: &PlantedSpec,
) -> Result<(ActivationSet, LabelTable), AnalysisError> {
    check_n(spec.n)?;
    if spec.num_classes < 2 {
        return Err(AnalysisError::InvalidArgument(format!(
            "need at least 2 classes, got {}",
            spec.num_classes
        )));
    }
    if spec.placement == Placement::Xor && spec.num_classes != 2 {
        return Err(AnalysisError::InvalidArgument(
            "the xor fixture has exactly 2 classes".into(),
        ));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(AnalysisError::InvalidArgument(
            "noise must be finite and non-negative".into(),
        ));
    }
    let (n, d, t) = (spec.n, PLANTED_DIM, PLANTED_TOKENS);
    let mut noise_rng = rng_stream(spec.seed, 0);
    let mut mid = Mat::from_fn(n, t * d, |_, _| spec.noise * gaussian(&mut noise_rng));
    let mut fin = Mat::from_fn(n, t * d, |_, _| spec.noise * gaussian(&mut noise_rng));
    let means =
        gaussian_matrix(spec.num_classes, d, &mut rng_stream(spec.seed, 1)).scale(SIGNAL_SCALE);
    let mut sign_rng = rng_stream(spec.seed, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = match spec.placement {
            Placement::Final | Placement::Intermediate => {
                let c = i % spec.num_classes;
                let target = if spec.placement == Placement::Final {
                    &mut fin
                } else {
                    &mut mid
                };
                for (v, m) in target.row_mut(i)[..d].iter_mut().zip(means.row(c)) {
                    *v += m;
                }
                c
            }
            Placement::Xor => {
                let s1 = if sign_rng.random::<bool>() { 1.0 } else { -1.0 };
                let s2 = if sign_rng.random::<bool>() { 1.0 } else { -1.0 };
                fin.row_mut(i)[0] += SIGNAL_SCALE * s1;
                fin.row_mut(i)[1] += SIGNAL_SCALE * s2;
                usize::from(s1 * s2 > 0.0)
            }
        };
        labels.push(class);
    }
    let mid = mid.scale(spec.layer_scales[0]);
    let fin = fin.scale(spec.layer_scales[1]);
    let ids = sample_ids(n);
    let set = ActivationSet {
        model_id: format!("planted-{:?}-{}", spec.placement, spec.seed).to_lowercase(),
        sample_ids: ids.clone(),
        layers: vec![
            to_block(INTERMEDIATE_LAYER, vec![n, t, d], &mid),
            to_block(FINAL_LAYER, vec![n, t, d], &fin),
        ],
    };
    let table = LabelTable::new(
        ids.into_iter().zip(labels).collect(),
        Some(spec.num_classes),
    )?;
    Ok((set, table))
}

/// Multi-block fixture whose class signal degrades with depth. Block `b`
/// carries the class mean of the true label in its CLS token, except for a
/// nested subset of samples (fraction `max_noise * b / (blocks - 1)`) whose
/// mean is that of a fixed wrong class.
pub fn gen_label_noise_depth_fixture(
    n: usize,
    num_classes: usize,
    blocks: usize,
    max_noise: f64,
    seed: u64,
) -> Result<(ActivationSet, LabelTable), AnalysisError> {
    check_n(n)?;
    if num_classes < 2 || blocks == 0 {
        return Err(AnalysisError::InvalidArgument(
            "need at least 2 classes and 1 block".into(),
        ));
    }
    if !(0.0..=1.0).contains(&max_noise) {
        return Err(AnalysisError::InvalidArgument(
            "max_noise must lie in [0, 1]".into(),
        ));
    }
    let (d, t) = (PLANTED_DIM, PLANTED_TOKENS);
    let means = gaussian_matrix(num_classes, d, &mut rng_stream(seed, 1)).scale(SIGNAL_SCALE);
    let mut pick = rng_stream(seed, 2);
    let draws: Vec<(f64, usize)> = (0..n)
        .map(|_| (pick.random::<f64>(), pick.random_range(1..num_classes)))
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    let mut noise_rng = rng_stream(seed, 0);
    let mut layers = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let frac = if blocks == 1 {
            0.0
        } else {
            max_noise * b as f64 / (blocks - 1) as f64
        };
        let mut m = Mat::from_fn(n, t * d, |_, _| gaussian(&mut noise_rng));
        for i in 0..n {
            let (u, shift) = draws[i];
            let class = if u < frac {
                (labels[i] + shift) % num_classes
            } else {
                labels[i]
            };
            for (v, mu) in m.row_mut(i)[..d].iter_mut().zip(means.row(class)) {
                *v += mu;
            }
        }
        layers.push(to_block(&format!("block{b}.mlp.fc2"), vec![n, t, d], &m));
    }
    let ids = sample_ids(n);
    let set = ActivationSet {
        model_id: format!("label-noise-{seed}"),
        sample_ids: ids.clone(),
        layers,
    };
    let table = LabelTable::new(ids.into_iter().zip(labels).collect(), Some(num_classes))?;
    Ok((set, table))
}

/// Splits a set into the first `n_train` samples and the rest.
pub fn split_set(set: &ActivationSet, n_train: usize) -> (ActivationSet, ActivationSet) {
    let n = set.num_samples();
    let take = |range: std::ops::Range<usize>| {
        let len = range.len();
        ActivationSet {
            model_id: set.model_id.clone(),
            sample_ids: set.sample_ids[range.clone()].to_vec(),
            layers: set
                .layers
                .iter()
                .map(|l| {
                    let row = l.row_len();
                    let mut shape = l.shape.clone();
                    shape[0] = len;
                    TensorBlock {
                        name: l.name.clone(),
                        shape,
                        data: l.data[range.start * row..range.end * row].to_vec(),
                    }
                })
                .collect(),
        }
    };
    (take(0..n_train.min(n)), take(n_train.min(n)..n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Unit steps along one axis.
    Line,
    /// Out along one axis and back to the start.
    Return,
    /// Half the steps along one axis, half along a second axis.
    RightAngle,
    /// Gaussian start and Gaussian steps.
    RandomWalk,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "line" => Ok(TrajectoryKind::Line),
            "return" => Ok(TrajectoryKind::Return),
            "right_angle" => Ok(TrajectoryKind::RightAngle),
            "random_walk" => Ok(TrajectoryKind::RandomWalk),
            _ => Err(format!(
                "unknown trajectory {s:?} (line, return, right_angle, random_walk)"
            )),
        }
    }
}

/// Snapshots at epochs `0..=steps` of a single group named `attn`.
pub fn gen_trajectory(
    kind: TrajectoryKind,
    steps: usize,
    dim: usize,
    seed: u64,
) -> Result<ParamSnapshotSeries, AnalysisError> {
    let bad = |m: String| Err(AnalysisError::InvalidArgument(m));
    if steps == 0 || dim == 0 {
        return bad("steps and dim must be positive".into());
    }
    if matches!(kind, TrajectoryKind::Return | TrajectoryKind::RightAngle)
        && !steps.is_multiple_of(2)
    {
        return bad(format!("{kind:?} needs an even number of steps"));
    }
    if kind == TrajectoryKind::RightAngle && dim < 2 {
        return bad("right_angle needs dim >= 2".into());
    }
    let half = steps / 2;
    let mut rng = rng_stream(seed, 0);
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let mut p = vec![0.0; dim];
        match kind {
            TrajectoryKind::Line => p[0] = t as f64,
            TrajectoryKind::Return => p[0] = if t <= half { t } else { steps - t } as f64,
            TrajectoryKind::RightAngle => {
                p[0] = t.min(half) as f64;
                p[1] = t.saturating_sub(half) as f64;
            }
            TrajectoryKind::RandomWalk => {
                let prev = points.last();
                for (j, v) in p.iter_mut().enumerate() {
                    *v = prev.map_or(0.0, |q| q[j]) + gaussian(&mut rng);
                }
            }
        }
        points.push(p);
    }
    Ok(ParamSnapshotSeries {
        model_id: format!("trajectory-{kind:?}-{seed}").to_lowercase(),
        snapshots: points
            .into_iter()
            .enumerate()
            .map(|(e, p)| ParamSnapshot {
                epoch: e as u64,
                groups: vec![("attn".into(), p.into_iter().map(|v| v as f32).collect())],
            })
            .collect(),
    })
}

/// Two rank tables over the same samples. Scores of `b` are `a`'s scores
/// plus Gaussian noise of scale `noise`.
pub fn gen_rank_pair(
    n: usize,
    num_classes: usize,
    noise: f64,
    seed: u64,
) -> Result<(RankTable, RankTable), AnalysisError> {
    if num_classes < 2 || n == 0 {
        return Err(AnalysisError::InvalidArgument(
            "need n >= 1 and at least 2 classes".into(),
        ));
    }
    let a = gaussian_matrix(n, num_classes, &mut rng_stream(seed, 0));
    let mut nrng = rng_stream(seed, 1);
    let b = Mat::from_fn(n, num_classes, |i, j| {
        a.get(i, j) + noise * gaussian(&mut nrng)
    });
    let ids = sample_ids(n);
    let wrap = |e: crate::error::ContainerError| AnalysisError::InvalidArgument(e.to_string());
    Ok((
        RankTable::from_scores(format!("ranks-a-{seed}"), ids.clone(), &a).map_err(wrap)?,
        RankTable::from_scores(format!("ranks-b-{seed}"), ids, &b).map_err(wrap)?,
    ))
}
