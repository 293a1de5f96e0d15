mod common;

use repsim::container::{ActivationSet, LabelTable};
use repsim::probes::{
    concat_layers, knn_depth_sweep, pool_features, train_probe, FeatureMatrix, PoolMode,
    ProbeConfig, ProbeResult,
};
use repsim::synth::{
    gen_label_noise_depth_fixture, gen_planted_probe_fixture, split_set, Placement, PlantedSpec,
    FINAL_LAYER, INTERMEDIATE_LAYER,
};

struct Split {
    train: ActivationSet,
    eval: ActivationSet,
    labels: LabelTable,
}

fn planted(placement: Placement, classes: usize, seed: u64) -> Split {
    planted_spec(PlantedSpec::new(1200, classes, placement, seed))
}

fn planted_spec(spec: PlantedSpec) -> Split {
    let (set, labels) = gen_planted_probe_fixture(&spec).unwrap();
    let (train, eval) = split_set(&set, 800);
    Split {
        train,
        eval,
        labels,
    }
}

fn feats(set: &ActivationSet, layers: &[&str]) -> FeatureMatrix {
    let parts: Vec<FeatureMatrix> = layers
        .iter()
        .map(|l| pool_features(set, l, PoolMode::Cls).unwrap())
        .collect();
    concat_layers(&parts).unwrap()
}

fn probe(s: &Split, layers: &[&str], config: &ProbeConfig) -> ProbeResult {
    train_probe(
        &feats(&s.train, layers),
        &s.labels,
        &feats(&s.eval, layers),
        &s.labels,
        config,
    )
    .unwrap()
}

fn best(r: &ProbeResult) -> f64 {
    r.best_mean.unwrap()
}

fn linear() -> ProbeConfig {
    ProbeConfig::single(1, 0.1, 30, 0)
}

fn mlp() -> ProbeConfig {
    ProbeConfig::single(3, 0.1, 60, 0)
}

#[test]
fn final_placement_is_linearly_decodable() {
    let s = planted(Placement::Final, 4, 1);
    let acc = best(&probe(&s, &[FINAL_LAYER], &linear()));
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn intermediate_signal_needs_concatenation() {
    let s = planted(Placement::Intermediate, 4, 2);
    let final_only = best(&probe(&s, &[FINAL_LAYER], &linear()));
    let concat = best(&probe(&s, &[FINAL_LAYER, INTERMEDIATE_LAYER], &linear()));
    assert!(final_only <= 0.25 + 0.10, "{final_only}");
    assert!(concat >= 0.99, "{concat}");
    assert!(concat - final_only > 0.20);
}

#[test]
fn xor_needs_depth() {
    let s = planted(Placement::Xor, 2, 3);
    let d1 = best(&probe(&s, &[FINAL_LAYER], &linear()));
    let d3 = best(&probe(&s, &[FINAL_LAYER], &mlp()));
    assert!(d1 <= 0.60, "{d1}");
    assert!(d3 >= 0.95, "{d3}");
    assert!(d3 - d1 > 0.20);
}

#[test]
fn duplicated_final_layer_doubles_dimension() {
    let s = planted(Placement::Final, 3, 4);
    assert_eq!(
        feats(&s.train, &[FINAL_LAYER, FINAL_LAYER]).dim(),
        2 * feats(&s.train, &[FINAL_LAYER]).dim()
    );
}

#[test]
fn standardization_helps_scale_mismatched_concat() {
    let mut spec = PlantedSpec::new(1200, 4, Placement::Intermediate, 5);
    spec.layer_scales = [1.0, 1e3];
    let s = planted_spec(spec);
    let on = linear();
    let mut off = linear();
    off.standardize = false;
    let layers = [FINAL_LAYER, INTERMEDIATE_LAYER];
    let with = best(&probe(&s, &layers, &on));
    let without = probe(&s, &layers, &off).best_mean.unwrap_or(0.0);
    assert!(with >= without);
}

#[test]
fn single_run_is_deterministic() {
    let s = planted(Placement::Xor, 2, 6);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let a = pool.install(|| probe(&s, &[FINAL_LAYER], &mlp()));
    let b = pool.install(|| probe(&s, &[FINAL_LAYER], &mlp()));
    assert_eq!(
        a.runs[0].accuracy.unwrap().to_bits(),
        b.runs[0].accuracy.unwrap().to_bits()
    );
    assert_eq!(
        a.runs[0].final_loss.unwrap().to_bits(),
        b.runs[0].final_loss.unwrap().to_bits()
    );
}

#[test]
fn grid_best_five_dominates_sub_grid() {
    let s = planted(Placement::Intermediate, 4, 7);
    let mut grid = ProbeConfig::single(1, 0.1, 5, 0);
    grid.learning_rates = vec![0.3, 0.1, 0.01];
    grid.weight_decays = vec![0.0, 1e-3];
    grid.seeds = vec![0, 1];
    let mut sub = grid.clone();
    sub.learning_rates = vec![0.1, 0.01];
    sub.weight_decays = vec![0.0, 1e-3];
    let layers = [FINAL_LAYER, INTERMEDIATE_LAYER];
    let full = probe(&s, &layers, &grid);
    let part = probe(&s, &layers, &sub);
    assert_eq!(full.runs.len(), 12);
    assert_eq!(part.runs.len(), 8);
    assert!(best(&full) >= best(&part));
}

#[test]
fn label_noise_sweep_declines_with_depth() {
    let (set, labels) = gen_label_noise_depth_fixture(1500, 4, 5, 0.6, 8).unwrap();
    let (train, eval) = split_set(&set, 1000);
    let sweep = knn_depth_sweep(
        &train,
        &labels,
        &eval,
        &labels,
        &[PoolMode::Cls, PoolMode::Flatten],
        20,
    )
    .unwrap();
    assert_eq!(sweep.rows.len(), 5);
    assert!(sweep.warnings.is_empty());
    let cls: Vec<f64> = sweep.rows.iter().map(|r| r.accuracy[0]).collect();
    assert!(cls.windows(2).all(|w| w[1] < w[0]), "{cls:?}");
    assert!(cls[0] > 0.95);
}

#[test]
fn single_block_sweep_has_one_row() {
    let (set, labels) = gen_label_noise_depth_fixture(200, 2, 1, 0.0, 9).unwrap();
    let (train, eval) = split_set(&set, 150);
    let sweep = knn_depth_sweep(&train, &labels, &eval, &labels, &[PoolMode::Cls], 5).unwrap();
    assert_eq!(sweep.rows.len(), 1);
    assert_eq!(sweep.to_csv().lines().count(), 2);
}
