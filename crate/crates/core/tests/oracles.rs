#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use repsim::consistency::{kendall_tau_pair, rank_consistency, RankTable, SampleFilter};
use repsim::container::LabelTable;
use repsim::dynamics::{path_efficiency, per_epoch_deltas, GroupFilter};
use repsim::error::AnalysisError;
use repsim::linalg::Mat;
use repsim::probes::{knn_predict, PoolMode};
use repsim::similarity::{
    cka_exact, cka_minibatch, gram, hsic1, layer_distance_profile, CkaMatrix, GramMatrix,
};
use repsim::synth::{gaussian_matrix, gen_blobs, gen_trajectory, rng_stream, TrajectoryKind};

fn to_gram(k: &[Vec<f64>]) -> GramMatrix {
    GramMatrix::from_values(k.len(), k.iter().flatten().copied().collect()).unwrap()
}

#[test]
fn gram_matches_double_loop() {
    let x = gaussian_matrix(6, 3, &mut rng_stream(11, 0));
    let k = gram(&x).unwrap();
    let naive = naive_gram(&x);
    for i in 0..6 {
        for j in 0..6 {
            assert!((k.get(i, j) - naive[i][j]).abs() <= 1e-12 * naive[i][j].abs().max(1.0));
        }
    }
}

#[test]
fn hand_sized_hsic() {
    let k = vec![
        vec![2.0, 1.0, 0.0, -1.0],
        vec![1.0, 3.0, 1.0, 0.5],
        vec![0.0, 1.0, 1.0, 2.0],
        vec![-1.0, 0.5, 2.0, 4.0],
    ];
    let l = vec![
        vec![1.0, 0.0, 2.0, 1.0],
        vec![0.0, 2.0, -1.0, 0.0],
        vec![2.0, -1.0, 5.0, 3.0],
        vec![1.0, 0.0, 3.0, 1.0],
    ];
    // Zeroed diagonals: 1'K1 = 7, 1'L1 = 10, tr(KL) = 8, 1'KL1 = 15.5.
    let expected = (8.0 + 7.0 * 10.0 / 6.0 - 2.0 / 2.0 * 15.5) / 4.0;
    assert!((naive_hsic1(&k, &l) - expected).abs() < 1e-12);
    assert!((hsic1(&to_gram(&k), &to_gram(&l)).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn cka_matches_composed_oracle() {
    for seed in 0..10 {
        let x = gaussian_matrix(32, 8, &mut rng_stream(seed, 0));
        let y = gaussian_matrix(32, 5, &mut rng_stream(seed, 1));
        let got = cka_exact(&features(x.clone()), &features(y.clone())).unwrap();
        assert!((got - naive_cka(&x, &y, 32)).abs() < 1e-10);
        let got = cka_minibatch(&features(x.clone()), &features(y.clone()), 8).unwrap();
        assert!((got - naive_cka(&x, &y, 8)).abs() < 1e-10);
    }
}

#[test]
fn knn_matches_exhaustive_oracle() {
    for seed in 0..5 {
        let (train, labels) = gen_blobs(200, 3, 5, 1.0, seed);
        let (eval, _) = gen_blobs(100, 3, 5, 1.0, seed + 1000);
        for k in [1, 4, 20] {
            assert_eq!(
                knn_predict(&train, &labels, &eval, k).unwrap(),
                naive_knn(&train, &labels, &eval, k)
            );
        }
    }
}

#[test]
fn knn_vote_tie_prefers_similarity_then_class() {
    let train = Mat::from_vec(4, 2, vec![1.0, 0.0, 1.0, 0.1, 0.0, 1.0, 0.1, 1.0]).unwrap();
    let labels = [1, 1, 0, 0];
    let eval = Mat::from_vec(2, 2, vec![1.0, 0.2, 1.0, 1.0]).unwrap();
    assert_eq!(knn_predict(&train, &labels, &eval, 4).unwrap(), vec![1, 0]);
    assert_eq!(naive_knn(&train, &labels, &eval, 4), vec![1, 0]);
}

#[test]
fn tau_exhaustive_small() {
    for m in 2..=5 {
        let perms = permutations(m);
        for a in &perms {
            for b in &perms {
                assert_eq!(kendall_tau_pair(a, b).unwrap(), naive_tau(a, b));
            }
        }
    }
    assert_eq!(
        kendall_tau_pair(&[1, 2, 3, 4, 5], &[2, 1, 3, 4, 5]).unwrap(),
        0.8
    );
}

fn table(rows: &[[u32; 6]]) -> RankTable {
    RankTable::new(
        "m",
        (0..rows.len()).map(|i| format!("s{i}")).collect(),
        6,
        rows.iter().flatten().copied().collect(),
    )
    .unwrap()
}

#[test]
fn rank_consistency_hand_fixture() {
    let a = table(&[[0, 1, 2, 3, 4, 5], [5, 4, 3, 2, 1, 0], [2, 0, 1, 5, 3, 4]]);
    let b = table(&[[1, 0, 2, 3, 4, 5], [5, 4, 3, 2, 0, 1], [0, 2, 1, 3, 4, 5]]);
    // Sample 0: one swapped pair in both directions: 0.8 each way.
    // Sample 1: A's top-5 (5,4,3,2,1) sit at B positions (0,1,2,3,5): tau 1.
    //   B's top-5 (5,4,3,2,0) sit at A positions (0,1,2,3,5): tau 1.
    // Sample 2: A's top-5 (2,0,1,5,3) sit at B positions (1,0,2,5,3):
    //   discordant pairs (2,0) and (5,3): tau (8-2)/10 = 0.6.
    //   B's top-5 (0,2,1,3,4) sit at A positions (1,0,2,4,5):
    //   discordant pair (0,2): tau 0.8. Symmetrized 0.7.
    let r = rank_consistency(&a, &b, None, 5, SampleFilter::All).unwrap();
    let taus: Vec<f64> = r.per_sample.iter().map(|s| s.tau).collect();
    assert_eq!(taus, vec![0.8, 1.0, 0.7]);
    assert!((r.mean - 2.5 / 3.0).abs() < 1e-15);
    let labels = LabelTable::from_pairs([("s0", 0), ("s1", 5), ("s2", 2)]).unwrap();
    let correct = rank_consistency(&a, &b, Some(&labels), 5, SampleFilter::BothCorrect).unwrap();
    assert_eq!(correct.retained, 1);
    assert_eq!(correct.per_sample[0].sample_id, "s1");
    assert!(matches!(
        rank_consistency(&a, &b, Some(&labels), 5, SampleFilter::BothIncorrect),
        Err(AnalysisError::EmptySelection(_))
    ));
}

#[test]
fn profile_three_by_four_enumeration() {
    let values: Vec<Vec<Option<f64>>> = (0..3)
        .map(|i| (0..4).map(|j| Some((10 * i + j) as f64)).collect())
        .collect();
    let m = CkaMatrix {
        layer_names_a: (0..3).map(|i| format!("a{i}")).collect(),
        layer_names_b: (0..4).map(|j| format!("b{j}")).collect(),
        values: values.clone(),
        batch_size: 32,
        num_batches: 1,
        num_samples: 32,
        pooling: PoolMode::Flatten,
        filter: None,
    };
    let bins = 4;
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for i in 0..3 {
        for j in 0..4 {
            let d = (i as f64 / 2.0 - j as f64 / 3.0).abs();
            let b = ((d * bins as f64).floor() as usize).min(bins - 1);
            sums[b] += values[i][j].unwrap();
            counts[b] += 1;
        }
    }
    let p = layer_distance_profile(&m, bins).unwrap();
    assert_eq!(counts.iter().sum::<usize>(), 12);
    for b in 0..bins {
        assert_eq!(p.bins[b].count, counts[b]);
        match p.bins[b].mean_cka {
            Some(v) => assert!((v - sums[b] / counts[b] as f64).abs() < 1e-12),
            None => assert_eq!(counts[b], 0),
        }
    }
}

#[test]
fn random_walk_deltas_match_naive() {
    let s = gen_trajectory(TrajectoryKind::RandomWalk, 12, 7, 5).unwrap();
    let d = per_epoch_deltas(&s, &GroupFilter::All).unwrap();
    for t in 1..s.snapshots.len() {
        let (a, b) = (&s.snapshots[t - 1].groups[0].1, &s.snapshots[t].groups[0].1);
        let mut sq = 0.0f64;
        for i in 0..a.len() {
            sq += (b[i] as f64 - a[i] as f64).powi(2);
        }
        assert!((d[0].deltas[t - 1] - sq.sqrt()).abs() < 1e-12);
    }
    let r = path_efficiency(&s, &GroupFilter::All).unwrap();
    assert!(r.aggregate.efficiency <= 1.0 && r.aggregate.path_length >= r.aggregate.displacement);
}
