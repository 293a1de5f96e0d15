//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::consistency::{rank_consistency, top1_agreement_f1, RankTable, SampleFilter};
use crate::container::naming::is_conventional;
use crate::container::{
    read_as, read_labels, read_snapshot_dir, write_container, write_snapshot_dir, ActivationSet,
    ContainerIndex, Kind, LabelTable, ParamSnapshotSeries, TensorEntry,
};
use crate::dynamics::{path_efficiency, GroupFilter};
use crate::error::{Error, Result};
use crate::probes::{
    concat_layers, knn_classify, knn_depth_sweep, pool_features, train_probe, FeatureMatrix,
    PoolMode, ProbeConfig, DEFAULT_K,
};
use crate::report::{
    digest_path, manifest_path, report_json, write_atomic, InputDigest, ManifestBuilder,
    ENGINE_VERSION,
};
use crate::similarity::{cka_matrix, layer_distance_profile, CkaConfig, DEFAULT_BATCH_SIZE};
use crate::synth;

#[derive(Debug, Parser)]
#[command(
    name = "repsim",
    version,
    about = "Representation similarity and probing over REPSIM01 containers"
)]
pub struct Cli {
    /// Worker threads (1 = bit-reproducible). Defaults to all cores.
    #[arg(long, global = true, env = "REPSIM_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Emit the JSON report ({manifest, result}).
    #[arg(long, conflicts_with = "csv")]
    pub json: bool,
    /// Emit the CSV table. With --out, the JSON report goes to <out>.manifest.json.
    #[arg(long)]
    pub csv: bool,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CkaArgs {
    #[arg(long)]
    pub a: PathBuf,
    /// Second model; defaults to the first (self-similarity).
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value = "flatten")]
    pub pool: PoolMode,
    /// Aligned samples to use; 0 uses all of them.
    #[arg(long, default_value_t = 1024)]
    pub samples: usize,
    /// Only layers whose name matches (substring, or glob with * and ?).
    #[arg(long)]
    pub layers: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub train_labels: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    pub eval_labels: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    OrthogonalPair,
    IndependentPair,
    Planted,
    LabelNoise,
    Trajectory,
    Ranks,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Container path. Pairs write <stem>.a.rs1 and <stem>.b.rs1; a
    /// trajectory whose path does not end in .rs1 becomes a snapshot directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub p: usize,
    /// Feature dimension of the second independent matrix; defaults to --p.
    #[arg(long)]
    pub p_b: Option<usize>,
    /// Layers per model for pair fixtures.
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, value_enum, default_value = "final")]
    pub placement: PlacementArg,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 6)]
    pub blocks: usize,
    #[arg(long, value_enum, default_value = "line")]
    pub trajectory: TrajectoryArg,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementArg {
    Final,
    Intermediate,
    Xor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryArg {
    Line,
    Return,
    #[value(alias = "right_angle")]
    RightAngle,
    #[value(alias = "random_walk")]
    RandomWalk,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minibatch CKA between every layer pair of two models. Default output: CSV.
    Cka {
        #[command(flatten)]
        args: CkaArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Mean CKA binned by normalized layer distance. Default output: CSV.
    CkaProfile {
        #[command(flatten)]
        args: CkaArgs,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// k-NN accuracy of one layer, or of every block output with --sweep. Default output: CSV.
    Knn {
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long, required_unless_present = "sweep")]
        layer: Option<String>,
        #[arg(long)]
        sweep: bool,
        /// Pooling modes, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "cls")]
        pool: Vec<PoolMode>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Linear or MLP probe sweep driven by a JSON config. Default output: JSON.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        /// Layers whose pooled features are concatenated, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<String>,
        #[arg(long, default_value = "cls")]
        pool: PoolMode,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Kendall tau between two models' top-k class orderings. Default output: JSON.
    Rankcorr {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Ground truth; needed by the both-correct and both-incorrect filters.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        #[arg(long, default_value = "all")]
        filter: SampleFilter,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Top-1 agreement F1 between two models. Default output: JSON.
    F1 {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Path efficiency of a parameter trajectory. Default output: JSON.
    Path {
        /// Directory of epoch_NNNN.rs1 files, or one params container.
        #[arg(long)]
        snapshots: PathBuf,
        /// attn, ln, fc, a name pattern, or all.
        #[arg(long, default_value = "all")]
        group: String,
        /// With --csv, emit per-step displacement norms instead of the summary.
        #[arg(long)]
        deltas: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Write a seeded synthetic fixture plus a <stem>.spec.json record.
    Synth(SynthArgs),
    /// Dump container metadata. Default output: JSON.
    Inspect {
        path: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

impl OutputArgs {
    fn format(&self, default: Format) -> Format {
        if self.json {
            Format::Json
        } else if self.csv {
            Format::Csv
        } else {
            default
        }
    }

    fn emit<T: Serialize>(
        &self,
        default: Format,
        manifest: &ManifestBuilder,
        result: &T,
        csv: String,
    ) -> Result<()> {
        let report = report_json(&manifest.finish(), result)?;
        match (self.format(default), &self.out) {
            (Format::Json, Some(out)) => write_atomic(out, report.as_bytes()),
            (Format::Json, None) => {
                print!("{report}");
                Ok(())
            }
            (Format::Csv, Some(out)) => {
                write_atomic(out, csv.as_bytes())?;
                write_atomic(&manifest_path(out), report.as_bytes())
            }
            (Format::Csv, None) => {
                print!("{csv}");
                Ok(())
            }
        }
    }
}

fn load_activations(path: &Path, m: &mut ManifestBuilder) -> Result<ActivationSet> {
    m.input(path)?;
    Ok(read_as(path)?)
}

fn load_ranks(path: &Path, m: &mut ManifestBuilder) -> Result<RankTable> {
    m.input(path)?;
    Ok(read_as(path)?)
}

fn load_labels(path: &Path, m: &mut ManifestBuilder) -> Result<LabelTable> {
    m.input(path)?;
    Ok(read_labels(path)?)
}

fn load_series(path: &Path, m: &mut ManifestBuilder) -> Result<ParamSnapshotSeries> {
    m.input(path)?;
    if path.is_dir() {
        Ok(read_snapshot_dir(path)?)
    } else {
        Ok(read_as(path)?)
    }
}

fn cka_config(args: &CkaArgs) -> CkaConfig {
    CkaConfig {
        pooling: args.pool,
        batch_size: args.batch_size,
        max_samples: (args.samples > 0).then_some(args.samples),
        layer_filter: args.layers.clone(),
    }
}

fn run_cka(args: &CkaArgs, m: &mut ManifestBuilder) -> Result<crate::similarity::CkaMatrix> {
    let config = cka_config(args);
    m.config(&config)?;
    let a = load_activations(&args.a, m)?;
    let b = match &args.b {
        Some(p) => load_activations(p, m)?,
        None => a.clone(),
    };
    Ok(cka_matrix(&a, &b, &config)?)
}

#[derive(Debug, Serialize)]
struct KnnReport {
    layer: String,
    pool: PoolMode,
    k: usize,
    accuracy: f64,
    correct: usize,
    total: usize,
    predictions: Vec<usize>,
}

fn pooled(set: &ActivationSet, layers: &[String], pool: PoolMode) -> Result<FeatureMatrix> {
    let parts = layers
        .iter()
        .map(|l| pool_features(set, l, pool))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(concat_layers(&parts)?)
}

#[derive(Debug, Serialize)]
struct InspectReport {
    path: String,
    file_len: u64,
    kind: Kind,
    model_id: String,
    schema: u64,
    num_samples: usize,
    tensors: Vec<TensorEntry>,
    /// Activation layers outside the `embed` / `block{i}.*` / `final_norm` convention.
    nonconventional_layers: Vec<String>,
}

#[derive(Debug, Serialize)]
struct FixtureRecord<'a> {
    kind: SynthKind,
    seed: u64,
    params: &'a SynthArgs,
    engine_version: &'a str,
    outputs: Vec<InputDigest>,
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn run_synth(args: &SynthArgs) -> Result<Vec<PathBuf>> {
    let mut outputs = Vec::new();
    match args.kind {
        SynthKind::OrthogonalPair | SynthKind::IndependentPair => {
            if args.p_b.is_some_and(|pb| pb != args.p) && args.kind == SynthKind::OrthogonalPair {
                return Err(Error::Usage(
                    "--p-b applies only to independent-pair".into(),
                ));
            }
            let orthogonal = args.kind == SynthKind::OrthogonalPair;
            let (a, mut b) = if orthogonal || args.p_b.is_none() {
                synth::gen_layered_pair(args.n, args.p, args.layers, orthogonal, args.seed)?
            } else {
                let names: Vec<String> = (0..args.layers)
                    .map(|i| format!("block{i}.mlp.fc2"))
                    .collect();
                let a = synth::gen_gaussian_set(
                    &format!("synth-a-{}", args.seed),
                    args.n,
                    &names,
                    &[args.p],
                    args.seed,
                );
                let b = synth::gen_gaussian_set(
                    &format!("synth-b-{}", args.seed),
                    args.n,
                    &names,
                    &[args.p_b.unwrap_or(args.p)],
                    args.seed.wrapping_add(1),
                );
                (a, b)
            };
            b.model_id = format!("{}-b", b.model_id.trim_end_matches("-b"));
            let (pa, pb) = (sibling(&args.out, ".a.rs1"), sibling(&args.out, ".b.rs1"));
            write_container(&a, &pa)?;
            write_container(&b, &pb)?;
            outputs.extend([pa, pb]);
        }
        SynthKind::Planted | SynthKind::LabelNoise => {
            let (set, labels) = if args.kind == SynthKind::Planted {
                let placement = match args.placement {
                    PlacementArg::Final => synth::Placement::Final,
                    PlacementArg::Intermediate => synth::Placement::Intermediate,
                    PlacementArg::Xor => synth::Placement::Xor,
                };
                let mut spec = synth::PlantedSpec::new(args.n, args.classes, placement, args.seed);
                spec.noise = args.noise;
                synth::gen_planted_probe_fixture(&spec)?
            } else {
                synth::gen_label_noise_depth_fixture(
                    args.n,
                    args.classes,
                    args.blocks,
                    0.6,
                    args.seed,
                )?
            };
            write_container(&set, &args.out)?;
            let lp = sibling(&args.out, ".labels.csv");
            write_atomic(&lp, labels.to_csv().as_bytes())?;
            outputs.extend([args.out.clone(), lp]);
        }
        SynthKind::Trajectory => {
            let kind = match args.trajectory {
                TrajectoryArg::Line => synth::TrajectoryKind::Line,
                TrajectoryArg::Return => synth::TrajectoryKind::Return,
                TrajectoryArg::RightAngle => synth::TrajectoryKind::RightAngle,
                TrajectoryArg::RandomWalk => synth::TrajectoryKind::RandomWalk,
            };
            let series = synth::gen_trajectory(kind, args.steps, args.dim, args.seed)?;
            if args.out.extension().is_some_and(|e| e == "rs1") {
                write_container(&series, &args.out)?;
                outputs.push(args.out.clone());
            } else {
                outputs.extend(write_snapshot_dir(&series, &args.out)?);
            }
        }
        SynthKind::Ranks => {
            let (a, b) = synth::gen_rank_pair(args.n, args.classes, args.noise, args.seed)?;
            let (pa, pb) = (sibling(&args.out, ".a.rs1"), sibling(&args.out, ".b.rs1"));
            write_container(&a, &pa)?;
            write_container(&b, &pb)?;
            outputs.extend([pa, pb]);
        }
    }
    let record = FixtureRecord {
        kind: args.kind,
        seed: args.seed,
        params: args,
        engine_version: ENGINE_VERSION,
        outputs: outputs
            .iter()
            .map(|p| digest_path(p))
            .collect::<Result<_>>()?,
    };
    let spec_path = if args.out.extension().is_some_and(|e| e == "rs1") {
        sibling(&args.out, ".spec.json")
    } else {
        let mut s = args.out.as_os_str().to_owned();
        s.push(".spec.json");
        PathBuf::from(s)
    };
    let mut json = serde_json::to_string_pretty(&record)?;
    json.push('\n');
    write_atomic(&spec_path, json.as_bytes())?;
    outputs.push(spec_path);
    Ok(outputs)
}

fn execute(command: &Command, threads: Option<usize>) -> Result<()> {
    match command {
        Command::Cka { args, output } => {
            let mut m = ManifestBuilder::new("cka", threads);
            let matrix = run_cka(args, &mut m)?;
            output.emit(Format::Csv, &m, &matrix, matrix.to_csv())
        }
        Command::CkaProfile { args, bins, output } => {
            let mut m = ManifestBuilder::new("cka-profile", threads);
            let matrix = run_cka(args, &mut m)?;
            let profile = layer_distance_profile(&matrix, *bins)?;
            m.config(&serde_json::json!({ "cka": cka_config(args), "bins": bins }))?;
            output.emit(Format::Csv, &m, &profile, profile.to_csv())
        }
        Command::Knn {
            split,
            layer,
            sweep,
            pool,
            k,
            output,
        } => {
            let mut m = ManifestBuilder::new("knn", threads);
            m.config(&serde_json::json!({ "layer": layer, "sweep": sweep, "pool": pool, "k": k }))?;
            let train = load_activations(&split.train, &mut m)?;
            let train_labels = load_labels(&split.train_labels, &mut m)?;
            let eval = load_activations(&split.eval, &mut m)?;
            let eval_labels = load_labels(&split.eval_labels, &mut m)?;
            if *sweep {
                let table = knn_depth_sweep(&train, &train_labels, &eval, &eval_labels, pool, *k)?;
                for w in &table.warnings {
                    eprintln!("warning: {w}");
                }
                return output.emit(Format::Csv, &m, &table, table.to_csv());
            }
            let [mode] = pool[..] else {
                return Err(Error::Usage(
                    "a single-layer k-NN run takes exactly one --pool mode".into(),
                ));
            };
            let layer = layer.clone().unwrap_or_default();
            let tr = pool_features(&train, &layer, mode)?;
            let ev = pool_features(&eval, &layer, mode)?;
            let r = knn_classify(&tr, &train_labels, &ev, &eval_labels, *k)?;
            let report = KnnReport {
                layer: layer.clone(),
                pool: mode,
                k: r.k,
                accuracy: r.accuracy,
                correct: r.correct,
                total: r.predictions.len(),
                predictions: r.predictions,
            };
            let csv = format!(
                "layer,pool,k,accuracy,correct,total\n{},{},{},{},{},{}\n",
                report.layer, mode, report.k, report.accuracy, report.correct, report.total
            );
            output.emit(Format::Csv, &m, &report, csv)
        }
        Command::Probe {
            config,
            split,
            layers,
            pool,
            output,
        } => {
            let mut m = ManifestBuilder::new("probe", threads);
            m.input(config)?;
            let text = std::fs::read_to_string(config).map_err(|source| Error::Io {
                path: config.clone(),
                source,
            })?;
            let cfg: ProbeConfig = serde_json::from_str(&text)?;
            m.config(&serde_json::json!({ "probe": cfg, "layers": layers, "pool": pool }))?;
            m.seeds(&cfg.seeds);
            let train = load_activations(&split.train, &mut m)?;
            let train_labels = load_labels(&split.train_labels, &mut m)?;
            let eval = load_activations(&split.eval, &mut m)?;
            let eval_labels = load_labels(&split.eval_labels, &mut m)?;
            let tr = pooled(&train, layers, *pool)?;
            let ev = pooled(&eval, layers, *pool)?;
            let result = train_probe(&tr, &train_labels, &ev, &eval_labels, &cfg)?;
            output.emit(Format::Json, &m, &result, result.to_csv())
        }
        Command::Rankcorr {
            a,
            b,
            labels,
            top_k,
            filter,
            output,
        } => {
            let mut m = ManifestBuilder::new("rankcorr", threads);
            m.config(&serde_json::json!({ "top_k": top_k, "filter": filter }))?;
            let ra = load_ranks(a, &mut m)?;
            let rb = load_ranks(b, &mut m)?;
            let lt = labels
                .as_deref()
                .map(|p| load_labels(p, &mut m))
                .transpose()?;
            let r = rank_consistency(&ra, &rb, lt.as_ref(), *top_k, *filter)?;
            output.emit(Format::Json, &m, &r, r.to_csv())
        }
        Command::F1 { a, b, output } => {
            let mut m = ManifestBuilder::new("f1", threads);
            let ra = load_ranks(a, &mut m)?;
            let rb = load_ranks(b, &mut m)?;
            let r = top1_agreement_f1(&ra, &rb)?;
            let csv = format!(
                "f1,agreeing,aligned\n{},{},{}\n",
                r.f1, r.agreeing, r.aligned
            );
            output.emit(Format::Json, &m, &r, csv)
        }
        Command::Path {
            snapshots,
            group,
            deltas,
            output,
        } => {
            let mut m = ManifestBuilder::new("path", threads);
            let filter = GroupFilter::parse(group);
            m.config(&serde_json::json!({ "group": filter.describe() }))?;
            let series = load_series(snapshots, &mut m)?;
            let r = path_efficiency(&series, &filter)?;
            let csv = if *deltas {
                r.deltas_csv()
            } else {
                r.summary_csv()
            };
            output.emit(Format::Json, &m, &r, csv)
        }
        Command::Synth(args) => {
            for p in run_synth(args)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Inspect { path, output } => {
            let mut m = ManifestBuilder::new("inspect", threads);
            m.input(path)?;
            let idx = ContainerIndex::open(path)?;
            let r = InspectReport {
                path: path.display().to_string(),
                file_len: idx.file_len,
                kind: idx.meta.kind,
                model_id: idx.meta.model_id.clone(),
                schema: idx.meta.schema,
                num_samples: idx.meta.sample_ids.len(),
                tensors: idx.meta.tensors.clone(),
                nonconventional_layers: match idx.meta.kind {
                    Kind::Activations => idx
                        .meta
                        .tensors
                        .iter()
                        .filter(|t| !is_conventional(&t.name))
                        .map(|t| t.name.clone())
                        .collect(),
                    _ => Vec::new(),
                },
            };
            for name in &r.nonconventional_layers {
                eprintln!("warning: layer {name:?} does not follow the block naming convention");
            }
            let mut csv = String::from("name,shape,offset,byte_len\n");
            for t in &r.tensors {
                let shape: Vec<String> = t.shape.iter().map(u64::to_string).collect();
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    t.name,
                    shape.join("x"),
                    t.offset,
                    t.byte_len
                ));
            }
            output.emit(Format::Json, &m, &r, csv)
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code: 0 success, 1 usage, 2 data, 3 numeric or undefined.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::Usage("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli.command, cli.threads)),
            Err(e) => Err(Error::Usage(format!("cannot start {n} threads: {e}"))),
        },
        None => execute(&cli.command, None),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
