//! Linear and MLP probes on frozen features.
//!
//! A probe of depth `D` has `D - 1` hidden blocks, each
//! `affine -> batch standardization (no affine) -> ReLU`, followed by an affine
//! classifier. Inputs are standardized with statistics fitted on the training
//! split. Training minimizes mean cross-entropy plus an L2 penalty on all
//! weight matrices and an L1 penalty on the classifier weights, with momentum
//! SGD under a linear-warmup / cosine learning-rate schedule.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, Standardizer};
use crate::container::LabelTable;
use crate::error::AnalysisError;
use crate::linalg::{dot, Mat};

pub const MOMENTUM: f64 = 0.9;
/// Weight of the previous value in the running batch statistics.
pub const RUNNING_STATS_MOMENTUM: f64 = 0.9;
const BN_EPS: f64 = 1e-5;
const BEST_OF: usize = 5;

fn default_true() -> bool {
    true
}

fn default_hidden() -> usize {
    256
}

/// Probe architecture plus the hyperparameter grid to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Number of affine layers; 1 is a linear probe.
    pub depth: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub l1_coefficients: Vec<f64>,
    pub epochs: Vec<usize>,
    pub warmup_epochs: Vec<usize>,
    pub batch_size: usize,
    #[serde(default = "default_true")]
    pub cosine_decay: bool,
    pub seeds: Vec<u64>,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

impl ProbeConfig {
    /// The large sweep grid (lr x wd x L1 x warmup x epochs) at batch 256.
    pub fn full_grid(depth: usize) -> Self {
        ProbeConfig {
            depth,
            hidden_dim: default_hidden(),
            learning_rates: vec![0.1, 1e-2, 1e-3],
            weight_decays: vec![0.0, 5e-2, 0.1],
            l1_coefficients: vec![0.0, 1e-1, 1e-2, 1e-3, 1e-4, 5e-4],
            epochs: vec![100, 200],
            warmup_epochs: vec![10, 40],
            batch_size: 256,
            cosine_decay: true,
            seeds: vec![0],
            standardize: true,
        }
    }

    /// A single-run configuration.
    pub fn single(depth: usize, lr: f64, epochs: usize, seed: u64) -> Self {
        ProbeConfig {
            depth,
            hidden_dim: 64,
            learning_rates: vec![lr],
            weight_decays: vec![0.0],
            l1_coefficients: vec![0.0],
            epochs: vec![epochs],
            warmup_epochs: vec![epochs / 10],
            batch_size: 64,
            cosine_decay: true,
            seeds: vec![seed],
            standardize: true,
        }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::InvalidArgument(m.to_string()));
        if self.depth < 1 {
            return bad("probe depth must be at least 1");
        }
        if self.depth > 1 && self.hidden_dim == 0 {
            return bad("hidden_dim must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.learning_rates.is_empty()
            || self.weight_decays.is_empty()
            || self.l1_coefficients.is_empty()
            || self.epochs.is_empty()
            || self.warmup_epochs.is_empty()
            || self.seeds.is_empty()
        {
            return bad("every hyperparameter grid must be non-empty");
        }
        if self
            .learning_rates
            .iter()
            .any(|&v| !(v > 0.0 && v.is_finite()))
        {
            return bad("learning rates must be positive and finite");
        }
        if self
            .weight_decays
            .iter()
            .chain(&self.l1_coefficients)
            .any(|&v| !(v >= 0.0 && v.is_finite()))
        {
            return bad("regularization coefficients must be non-negative and finite");
        }
        if self.epochs.contains(&0) {
            return bad("epochs must be positive");
        }
        Ok(())
    }

    /// Cartesian product in the order lr, weight decay, L1, warmup, epochs, seed.
    pub fn runs(&self) -> Vec<RunHyper> {
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &weight_decay in &self.weight_decays {
                for &l1 in &self.l1_coefficients {
                    for &warmup_epochs in &self.warmup_epochs {
                        for &epochs in &self.epochs {
                            for &seed in &self.seeds {
                                out.push(RunHyper {
                                    lr,
                                    weight_decay,
                                    l1,
                                    warmup_epochs,
                                    epochs,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub l1: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub hyper: RunHyper,
    pub status: RunStatus,
    pub accuracy: Option<f64>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub depth: usize,
    pub runs: Vec<ProbeRun>,
    /// Indices into `runs` of the top min(5, successful) runs, best first.
    pub best_runs: Vec<usize>,
    pub best_mean: Option<f64>,
    /// Population standard deviation over the best runs.
    pub best_std: Option<f64>,
    pub failed: usize,
}

impl ProbeResult {
    fn from_runs(depth: usize, runs: Vec<ProbeRun>) -> Self {
        let mut ok: Vec<usize> = (0..runs.len())
            .filter(|&i| runs[i].accuracy.is_some())
            .collect();
        ok.sort_by(|&a, &b| {
            runs[b]
                .accuracy
                .unwrap()
                .total_cmp(&runs[a].accuracy.unwrap())
                .then(a.cmp(&b))
        });
        ok.truncate(BEST_OF);
        let accs: Vec<f64> = ok.iter().map(|&i| runs[i].accuracy.unwrap()).collect();
        let (best_mean, best_std) = if accs.is_empty() {
            (None, None)
        } else {
            let m = accs.iter().sum::<f64>() / accs.len() as f64;
            let v = accs.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / accs.len() as f64;
            (Some(m), Some(v.sqrt()))
        };
        let failed = runs
            .iter()
            .filter(|r| r.status == RunStatus::Diverged)
            .count();
        ProbeResult {
            depth,
            runs,
            best_runs: ok,
            best_mean,
            best_std,
            failed,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("lr,weight_decay,l1,warmup_epochs,epochs,seed,accuracy,status\n");
        for r in &self.runs {
            let h = &r.hyper;
            let acc = r.accuracy.map_or_else(String::new, |a| a.to_string());
            let status = match r.status {
                RunStatus::Ok => "ok",
                RunStatus::Diverged => "diverged",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{acc},{status}\n",
                h.lr, h.weight_decay, h.l1, h.warmup_epochs, h.epochs, h.seed
            ));
        }
        out
    }
}

/// Learning rate at optimizer step `step`: linear warmup, then cosine decay
/// to zero (or constant when `cosine` is off).
pub fn learning_rate(
    base: f64,
    step: usize,
    warmup_steps: usize,
    total_steps: usize,
    cosine: bool,
) -> f64 {
    if step < warmup_steps {
        return base * (step + 1) as f64 / warmup_steps as f64;
    }
    if !cosine || total_steps <= warmup_steps {
        return base;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone)]
struct Dense {
    w: Mat,
    b: Vec<f64>,
    vw: Mat,
    vb: Vec<f64>,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, std: f64, rng: &mut Xoshiro256PlusPlus) -> Self {
        let w = Mat::from_fn(outputs, inputs, |_, _| {
            std * rng.sample::<f64, _>(StandardNormal)
        });
        Dense {
            w,
            b: vec![0.0; outputs],
            vw: Mat::zeros(outputs, inputs),
            vb: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &Mat) -> Mat {
        let mut out = Mat::zeros(x.rows(), self.w.rows());
        for i in 0..x.rows() {
            let xi = x.row(i);
            for (o, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = dot(xi, self.w.row(o)) + self.b[o];
            }
        }
        out
    }

    /// Gradients for upstream `dout`; returns `(dW, db, dx)`.
    fn backward(&self, x: &Mat, dout: &Mat) -> (Mat, Vec<f64>, Mat) {
        let (outs, ins) = (self.w.rows(), self.w.cols());
        let mut dw = Mat::zeros(outs, ins);
        let mut db = vec![0.0; outs];
        let mut dx = Mat::zeros(x.rows(), ins);
        for i in 0..x.rows() {
            let xi = x.row(i);
            let di = dout.row(i);
            for o in 0..outs {
                let g = di[o];
                if g == 0.0 {
                    continue;
                }
                db[o] += g;
                for (w, &xv) in dw.row_mut(o).iter_mut().zip(xi) {
                    *w += g * xv;
                }
                for (d, &wv) in dx.row_mut(i).iter_mut().zip(self.w.row(o)) {
                    *d += g * wv;
                }
            }
        }
        (dw, db, dx)
    }

    fn step(&mut self, mut dw: Mat, db: Vec<f64>, lr: f64, weight_decay: f64, l1: f64) {
        for (g, &w) in dw.as_mut_slice().iter_mut().zip(self.w.as_slice()) {
            *g += weight_decay * w + l1 * sign(w);
        }
        for ((v, w), g) in self
            .vw
            .as_mut_slice()
            .iter_mut()
            .zip(self.w.as_mut_slice())
            .zip(dw.as_slice())
        {
            *v = MOMENTUM * *v + g;
            *w -= lr * *v;
        }
        for ((v, b), g) in self.vb.iter_mut().zip(self.b.iter_mut()).zip(&db) {
            *v = MOMENTUM * *v + g;
            *b -= lr * *v;
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
struct HiddenBlock {
    dense: Dense,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

struct HiddenCache {
    input: Mat,
    normalized: Mat,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Mlp {
    hidden: Vec<HiddenBlock>,
    head: Dense,
}

impl Mlp {
    fn new(
        inputs: usize,
        hidden_dim: usize,
        classes: usize,
        depth: usize,
        rng: &mut Xoshiro256PlusPlus,
    ) -> Self {
        let mut hidden = Vec::with_capacity(depth - 1);
        let mut width = inputs;
        for _ in 1..depth {
            hidden.push(HiddenBlock {
                dense: Dense::new(width, hidden_dim, (2.0 / width as f64).sqrt(), rng),
                running_mean: vec![0.0; hidden_dim],
                running_var: vec![1.0; hidden_dim],
            });
            width = hidden_dim;
        }
        Mlp {
            hidden,
            head: Dense::new(width, classes, 0.01, rng),
        }
    }

    fn predict(&self, x: &Mat) -> Vec<usize> {
        let mut h = x.clone();
        for block in &self.hidden {
            let mut z = block.dense.forward(&h);
            for i in 0..z.rows() {
                for ((v, m), var) in z
                    .row_mut(i)
                    .iter_mut()
                    .zip(&block.running_mean)
                    .zip(&block.running_var)
                {
                    *v = ((*v - m) / (var + BN_EPS).sqrt()).max(0.0);
                }
            }
            h = z;
        }
        let logits = self.head.forward(&h);
        (0..logits.rows()).map(|i| argmax(logits.row(i))).collect()
    }

    /// One optimizer step on a minibatch; returns the regularized loss.
    fn train_step(&mut self, x: &Mat, y: &[usize], lr: f64, hyper: &RunHyper) -> f64 {
        let b = x.rows() as f64;
        let mut caches = Vec::with_capacity(self.hidden.len());
        let mut h = x.clone();
        for block in self.hidden.iter_mut() {
            let z = block.dense.forward(&h);
            let width = z.cols();
            let mut mean = vec![0.0; width];
            for i in 0..z.rows() {
                for (m, v) in mean.iter_mut().zip(z.row(i)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= b);
            let mut var = vec![0.0; width];
            for i in 0..z.rows() {
                for ((s, v), m) in var.iter_mut().zip(z.row(i)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= b);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut normalized = z;
            for i in 0..normalized.rows() {
                for ((v, m), s) in normalized.row_mut(i).iter_mut().zip(&mean).zip(&inv_std) {
                    *v = (*v - m) * s;
                }
            }
            for j in 0..width {
                block.running_mean[j] = RUNNING_STATS_MOMENTUM * block.running_mean[j]
                    + (1.0 - RUNNING_STATS_MOMENTUM) * mean[j];
                block.running_var[j] = RUNNING_STATS_MOMENTUM * block.running_var[j]
                    + (1.0 - RUNNING_STATS_MOMENTUM) * var[j];
            }
            let activated = Mat::from_fn(normalized.rows(), width, |i, j| {
                normalized.get(i, j).max(0.0)
            });
            caches.push(HiddenCache {
                input: std::mem::replace(&mut h, activated),
                normalized,
                inv_std,
            });
        }

        let logits = self.head.forward(&h);
        let mut dlogits = Mat::zeros(logits.rows(), logits.cols());
        let mut loss = 0.0;
        for i in 0..logits.rows() {
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            loss += denom.ln() + max - row[y[i]];
            for (j, d) in dlogits.row_mut(i).iter_mut().enumerate() {
                let p = (row[j] - max).exp() / denom;
                *d = (p - if j == y[i] { 1.0 } else { 0.0 }) / b;
            }
        }
        loss /= b;
        let mut penalty = hyper.l1 * self.head.w.as_slice().iter().map(|w| w.abs()).sum::<f64>();
        let sq = |d: &Dense| d.w.as_slice().iter().map(|w| w * w).sum::<f64>();
        penalty += 0.5
            * hyper.weight_decay
            * (sq(&self.head) + self.hidden.iter().map(|h| sq(&h.dense)).sum::<f64>());

        let (dw, db, mut upstream) = self.head.backward(&h, &dlogits);
        self.head.step(dw, db, lr, hyper.weight_decay, hyper.l1);

        for (block, cache) in self.hidden.iter_mut().zip(caches).rev() {
            let width = cache.normalized.cols();
            // ReLU mask, then the batch-standardization backward pass
            let mut dnorm = upstream;
            for i in 0..dnorm.rows() {
                for (d, &z) in dnorm.row_mut(i).iter_mut().zip(cache.normalized.row(i)) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let mut sum_d = vec![0.0; width];
            let mut sum_dz = vec![0.0; width];
            for i in 0..dnorm.rows() {
                for j in 0..width {
                    sum_d[j] += dnorm.get(i, j);
                    sum_dz[j] += dnorm.get(i, j) * cache.normalized.get(i, j);
                }
            }
            let dz = Mat::from_fn(dnorm.rows(), width, |i, j| {
                cache.inv_std[j] / b
                    * (b * dnorm.get(i, j) - sum_d[j] - cache.normalized.get(i, j) * sum_dz[j])
            });
            let (dw, db, dx) = block.dense.backward(&cache.input, &dz);
            block.dense.step(dw, db, lr, hyper.weight_decay, 0.0);
            upstream = dx;
        }
        loss + penalty
    }

    fn is_finite(&self) -> bool {
        let finite = |d: &Dense| d.w.as_slice().iter().chain(&d.b).all(|v| v.is_finite());
        finite(&self.head) && self.hidden.iter().all(|h| finite(&h.dense))
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Dataset for one probe run, already standardized if requested.
pub struct ProbeData<'a> {
    pub train: &'a Mat,
    pub train_labels: &'a [usize],
    pub eval: &'a Mat,
    pub eval_labels: &'a [usize],
    pub num_classes: usize,
}

/// Trains one probe and evaluates top-1 accuracy. Single-threaded and
/// deterministic for a given seed.
pub fn train_single(data: &ProbeData<'_>, config: &ProbeConfig, hyper: &RunHyper) -> ProbeRun {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(hyper.seed);
    let mut model = Mlp::new(
        data.train.cols(),
        config.hidden_dim,
        data.num_classes,
        config.depth,
        &mut rng,
    );
    let n = data.train.rows();
    let bs = config.batch_size.min(n);
    let mut batches = n / bs;
    // a lone trailing sample has no batch statistics
    if n % bs >= 2 || batches == 0 {
        batches += 1;
    }
    let total_steps = hyper.epochs * batches;
    let warmup_steps = hyper.warmup_epochs.min(hyper.epochs) * batches;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    let mut last_loss = f64::NAN;
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs).take(batches) {
            let x = data.train.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.train_labels[i]).collect();
            let lr = learning_rate(
                hyper.lr,
                step,
                warmup_steps,
                total_steps,
                config.cosine_decay,
            );
            last_loss = model.train_step(&x, &y, lr, hyper);
            step += 1;
            if !last_loss.is_finite() || !model.is_finite() {
                return ProbeRun {
                    hyper: *hyper,
                    status: RunStatus::Diverged,
                    accuracy: None,
                    final_loss: None,
                };
            }
        }
    }
    let predictions = model.predict(data.eval);
    let correct = predictions
        .iter()
        .zip(data.eval_labels)
        .filter(|(p, y)| p == y)
        .count();
    ProbeRun {
        hyper: *hyper,
        status: RunStatus::Ok,
        accuracy: Some(correct as f64 / data.eval_labels.len().max(1) as f64),
        final_loss: Some(last_loss),
    }
}

/// Sweeps the configuration grid and summarizes the best runs. Runs execute
/// on the current rayon pool; each run is independent of the others.
pub fn train_probe(
    train: &FeatureMatrix,
    train_labels: &LabelTable,
    eval: &FeatureMatrix,
    eval_labels: &LabelTable,
    config: &ProbeConfig,
) -> Result<ProbeResult, AnalysisError> {
    config.validate()?;
    if train.dim() != eval.dim() {
        return Err(AnalysisError::Shape(format!(
            "train features have dimension {} but eval features {}",
            train.dim(),
            eval.dim()
        )));
    }
    let y_train = train_labels.lookup(&train.sample_ids)?;
    let y_eval = eval_labels.lookup(&eval.sample_ids)?;
    let mut present: Vec<usize> = y_train.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(AnalysisError::InvalidArgument(format!(
            "training labels contain {} distinct classes, need at least 2",
            present.len()
        )));
    }
    if eval.rows() == 0 {
        return Err(AnalysisError::EmptySelection(
            "evaluation set is empty".into(),
        ));
    }
    let num_classes = y_train
        .iter()
        .chain(&y_eval)
        .map(|c| c + 1)
        .max()
        .unwrap_or(0)
        .max(train_labels.num_classes());

    let (x_train, x_eval) = if config.standardize {
        let s = Standardizer::fit(&train.values)?;
        (s.apply(&train.values)?, s.apply(&eval.values)?)
    } else {
        (train.values.clone(), eval.values.clone())
    };
    let data = ProbeData {
        train: &x_train,
        train_labels: &y_train,
        eval: &x_eval,
        eval_labels: &y_eval,
        num_classes,
    };
    let runs: Vec<ProbeRun> = config
        .runs()
        .par_iter()
        .map(|h| train_single(&data, config, h))
        .collect();
    Ok(ProbeResult::from_runs(config.depth, runs))
}
