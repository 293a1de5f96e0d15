//! Independent reference implementations used by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use repsim::container::{ActivationSet, TensorBlock};
use repsim::linalg::Mat;
use repsim::probes::FeatureMatrix;

/// Linear kernel by explicit double loop.
pub fn naive_gram(x: &Mat) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for c in 0..x.cols() {
                s += x.get(i, c) * x.get(j, c);
            }
            k[i][j] = s;
        }
    }
    k
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                c[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    c
}

/// Unbiased HSIC written term by term with explicit matrix products.
pub fn naive_hsic1(k: &[Vec<f64>], l: &[Vec<f64>]) -> f64 {
    let n = k.len();
    let zero_diag = |m: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut out = m.to_vec();
        for (i, row) in out.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        out
    };
    let kt = zero_diag(k);
    let lt = zero_diag(l);
    let kl = matmul(&kt, &lt);
    let trace: f64 = (0..n).map(|i| kl[i][i]).sum();
    let sum_k: f64 = kt.iter().flatten().sum();
    let sum_l: f64 = lt.iter().flatten().sum();
    let sum_kl: f64 = kl.iter().flatten().sum();
    let nf = n as f64;
    (trace + sum_k * sum_l / ((nf - 1.0) * (nf - 2.0)) - 2.0 / (nf - 2.0) * sum_kl)
        / (nf * (nf - 3.0))
}

/// Minibatch CKA from the naive HSIC over consecutive batches.
pub fn naive_cka(x: &Mat, y: &Mat, batch: usize) -> f64 {
    let batches = x.rows() / batch;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for b in 0..batches {
        let idx: Vec<usize> = (b * batch..(b + 1) * batch).collect();
        let kx = naive_gram(&x.select_rows(&idx));
        let ky = naive_gram(&y.select_rows(&idx));
        xy += naive_hsic1(&kx, &ky);
        xx += naive_hsic1(&kx, &kx);
        yy += naive_hsic1(&ky, &ky);
    }
    let k = batches as f64;
    (xy / k) / ((xx / k) * (yy / k)).sqrt()
}

/// Exhaustive k-NN: full sort of every training row by (cosine desc, index
/// asc), majority vote, ties by summed similarity then lower class.
pub fn naive_knn(train: &Mat, labels: &[usize], eval: &Mat, k: usize) -> Vec<usize> {
    let unit = |row: &[f64]| -> Vec<f64> {
        let mut s = 0.0;
        for v in row {
            s += v * v;
        }
        let norm = s.sqrt();
        row.iter()
            .map(|v| if norm > 0.0 { v / norm } else { *v })
            .collect()
    };
    let train_u: Vec<Vec<f64>> = (0..train.rows()).map(|i| unit(train.row(i))).collect();
    let classes = labels.iter().max().unwrap() + 1;
    (0..eval.rows())
        .map(|e| {
            let q = unit(eval.row(e));
            let mut scored: Vec<(f64, usize)> = train_u
                .iter()
                .enumerate()
                .map(|(t, r)| {
                    let mut s = 0.0;
                    for (a, b) in q.iter().zip(r) {
                        s += a * b;
                    }
                    (s, t)
                })
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut votes = vec![0usize; classes];
            let mut weight = vec![0.0; classes];
            for &(s, t) in &scored[..k] {
                votes[labels[t]] += 1;
                weight[labels[t]] += s;
            }
            let mut best = 0;
            for c in 1..classes {
                if votes[c] > votes[best] || (votes[c] == votes[best] && weight[c] > weight[best]) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Tau-a from sign products over all ordered pairs.
pub fn naive_tau(a: &[usize], b: &[usize]) -> f64 {
    let m = a.len();
    let sign = |x: usize, y: usize| (x as i64 - y as i64).signum();
    let mut s = 0i64;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                s += sign(a[i], a[j]) * sign(b[i], b[j]);
            }
        }
    }
    s as f64 / (m * (m - 1)) as f64
}

/// All permutations of `0..m` in lexicographic order.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; m], &mut out);
    out
}

pub fn features(m: Mat) -> FeatureMatrix {
    FeatureMatrix::anonymous(m, "x").unwrap()
}

/// Wraps `[n, d]` matrices as the layers of one activation set.
pub fn activation_set(model_id: &str, ids: &[String], layers: &[(&str, &Mat)]) -> ActivationSet {
    ActivationSet {
        model_id: model_id.into(),
        sample_ids: ids.to_vec(),
        layers: layers
            .iter()
            .map(|(name, m)| {
                TensorBlock::new(
                    *name,
                    vec![m.rows(), m.cols()],
                    m.as_slice().iter().map(|&v| v as f32).collect(),
                )
                .unwrap()
            })
            .collect(),
    }
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:04}")).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
