//! Command-line front end.
//!
//! Every subcommand takes `--config <file.json>`; keys in the file use the
//! flag names with underscores (`--hidden-dim` is `hidden_dim`) and flags
//! given on the command line win. Outputs land under `--out-dir` in
//! `models/`, `verdicts/`, `tables/` and `plots/`, and each command appends
//! a line to `manifest.jsonl` there.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use gnnfp::extraction::{double_extract, run_extraction, AttackConfig, AttackType, HttpOracle, LocalOracle, QueryOracle};
use gnnfp::fingerprint::{
    build_robust_training_set, build_training_set, train_csim, verify, CsimConfig, NamedModel, SimilarityClassifier,
    Verdict, VerdictRecord,
};
use gnnfp::gnn::{train, Architecture, GnnConfig, GnnModel};
use gnnfp::graph_data::{
    generate_synthetic, load_dataset, save_dataset, split_dataset, DataSplit, GraphDataset, SyntheticGraphSpec,
    DEFAULT_FRACTIONS,
};
use gnnfp::harness::plot::{emit_distance_histogram, emit_projection_plot, Projection};
use gnnfp::harness::{accuracy, fidelity, run_experiment, ExperimentConfig, ManifestEntry, StageStatus};
use gnnfp::registry::{self, Registry, ResolveContext, ServerState, VerifierContext};
use gnnfp::seed::derive_seed;

#[derive(Parser)]
#[command(name = "gnnfp", version, about = "GNN extraction attacks and embedding fingerprints")]
struct Cli {
    /// Log filter, e.g. `info` or `gnnfp=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct With<T: Args> {
    /// JSON file with defaults for this command's flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    args: T,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or inspect datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a target model.
    TrainTarget(With<TrainTargetArgs>),
    /// Extract a surrogate from a target model or an embedding endpoint.
    Attack(With<AttackArgs>),
    /// Train the surrogate and independent models a similarity classifier
    /// learns from.
    Cohort(With<CohortArgs>),
    #[command(subcommand)]
    Fingerprint(FingerprintCommand),
    #[command(subcommand)]
    Registry(RegistryCommand),
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    #[command(subcommand)]
    Plot(PlotCommand),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Write a synthetic block-model dataset.
    Synth(With<SynthArgs>),
    /// Load a dataset directory and print its statistics.
    Load(With<LoadArgs>),
}

#[derive(Subcommand)]
enum FingerprintCommand {
    /// Build the distance training set and fit the similarity classifier.
    Train(With<FingerprintTrainArgs>),
    /// Decide whether a suspect was derived from the target.
    Verify(With<VerifyArgs>),
}

#[derive(Subcommand)]
enum RegistryCommand {
    /// Serve the registry over HTTP.
    Serve(With<ServeArgs>),
    /// Register a model file.
    Register(With<RegisterArgs>),
    /// Open a dispute and resolve it offline.
    Dispute(With<DisputeArgs>),
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Run or resume an experiment. `--config` takes an experiment
    /// configuration.
    Run(With<ExperimentArgs>),
}

#[derive(Subcommand)]
enum PlotCommand {
    /// 2-D projection of several models' embeddings of the verification set.
    Projection(With<ProjectionArgs>),
    /// Histogram of per-node distances to the target's embeddings.
    Distances(With<DistancesArgs>),
}

/// Which dataset to use and how to split it.
#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default)]
struct DataArgs {
    /// Dataset directory; the default synthetic dataset is used when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Seed of the default synthetic dataset.
    #[arg(long)]
    synthetic_seed: Option<u64>,
    /// Seed of the target / surrogate / test / verification split.
    #[arg(long)]
    split_seed: Option<u64>,
}

impl DataArgs {
    fn load(&self) -> anyhow::Result<(GraphDataset, DataSplit)> {
        let ds = match &self.dataset {
            Some(dir) => load_dataset(dir)?,
            None => generate_synthetic(&SyntheticGraphSpec {
                seed: self.synthetic_seed.unwrap_or(0),
                ..SyntheticGraphSpec::default()
            })?,
        };
        let split = split_dataset(ds.node_count(), DEFAULT_FRACTIONS, self.split_seed.unwrap_or(0))?;
        Ok((ds, split))
    }
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct SynthArgs {
    #[arg(long)]
    nodes_per_class: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    intra_edge_prob: Option<f64>,
    #[arg(long)]
    inter_edge_prob: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    feature_noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory to write the dataset to.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct LoadArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct TrainTargetArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    architecture: Option<Architecture>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct AttackArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Target model file to query in-process.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Embedding endpoint to query instead, e.g.
    /// `http://127.0.0.1:8080/models/m1/embed`.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    attack_type: Option<AttackType>,
    /// Surrogate architecture.
    #[arg(long)]
    architecture: Option<Architecture>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Extract a second surrogate from the first.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    double: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct CohortArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    target: Option<PathBuf>,
    /// Number of surrogates, cycling through Type I and Type II.
    #[arg(long)]
    surrogates: Option<usize>,
    #[arg(long)]
    independents_per_architecture: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct FingerprintTrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    target: Option<PathBuf>,
    /// Surrogate model files; defaults to the cohort under `--out-dir`.
    #[arg(long, value_delimiter = ',')]
    surrogates: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    independents: Vec<PathBuf>,
    /// Add pruned surrogates at these ratios (at most 0.4).
    #[arg(long, value_delimiter = ',')]
    robust_prune_ratios: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct VerifyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    csim: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    suspect: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct ServeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Registry directory.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    addr: Option<String>,
    /// Seed used when resolving disputes.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct RegisterArgs {
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    owner: Option<String>,
    /// Similarity classifier to store with the model.
    #[arg(long)]
    csim: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct DisputeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    accuser: Option<String>,
    #[arg(long)]
    responder: Option<String>,
    /// The accuser's model file.
    #[arg(long)]
    target_file: Option<PathBuf>,
    /// The responder's model file.
    #[arg(long)]
    suspect_file: Option<PathBuf>,
    /// Deployed endpoints to audit; the registered models are used when
    /// absent.
    #[arg(long)]
    target_endpoint: Option<String>,
    #[arg(long)]
    suspect_endpoint: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct ExperimentArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    parallel: Option<bool>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct ProjectionArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Model files; the first is labelled as the target.
    #[arg(long, value_delimiter = ',')]
    models: Vec<PathBuf>,
    #[arg(long)]
    method: Option<Projection>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct DistancesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    surrogates: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    independents: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Overlay the flags given on the command line onto the config file.
fn merged<T: Args + Serialize + DeserializeOwned>(w: &With<T>) -> anyhow::Result<T> {
    let Some(path) = &w.config else {
        return Ok(serde_json::from_value(serde_json::to_value(&w.args)?)?);
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut base: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    overlay(&mut base, serde_json::to_value(&w.args)?)?;
    Ok(serde_json::from_value(base)?)
}

fn overlay(base: &mut Value, flags: Value) -> anyhow::Result<()> {
    let Value::Object(map) = base else { bail!("config file must hold a JSON object") };
    let Value::Object(flags) = flags else { unreachable!("argument structs serialize to objects") };
    for (k, v) in flags {
        let unset = v.is_null() || v.as_array().is_some_and(Vec::is_empty);
        if !unset {
            map.insert(k, v);
        }
    }
    Ok(())
}

fn need<T: Clone>(v: &Option<T>, flag: &str) -> anyhow::Result<T> {
    v.clone().with_context(|| format!("--{flag} is required"))
}

fn out_dir(v: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let dir = v.clone().unwrap_or_else(|| PathBuf::from("gnnfp-out"));
    for sub in ["models", "verdicts", "tables", "plots"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    Ok(dir)
}

fn log_stage(dir: &Path, stage: &str, start: Instant, artifact: &str, detail: Value) -> anyhow::Result<()> {
    let entry = ManifestEntry {
        stage: stage.to_string(),
        status: StageStatus::Done,
        seconds: start.elapsed().as_secs_f64(),
        artifact: Some(artifact.to_string()),
        error: None,
        record: None,
        detail: Some(detail),
    };
    let mut f = OpenOptions::new().create(true).append(true).open(dir.join("manifest.jsonl"))?;
    writeln!(f, "{}", serde_json::to_string(&entry)?)?;
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<GnnModel> {
    GnnModel::load(path).with_context(|| format!("loading {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned())
}

fn print_json(v: &impl Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn dataset_synth(a: SynthArgs) -> anyhow::Result<()> {
    let d = SyntheticGraphSpec::default();
    let spec = SyntheticGraphSpec {
        nodes_per_class: a.nodes_per_class.unwrap_or(d.nodes_per_class),
        num_classes: a.num_classes.unwrap_or(d.num_classes),
        intra_edge_prob: a.intra_edge_prob.unwrap_or(d.intra_edge_prob),
        inter_edge_prob: a.inter_edge_prob.unwrap_or(d.inter_edge_prob),
        feature_dim: a.feature_dim.unwrap_or(d.feature_dim),
        feature_noise: a.feature_noise.unwrap_or(d.feature_noise),
        seed: a.seed.unwrap_or(d.seed),
    };
    let out = need(&a.out, "out")?;
    let ds = generate_synthetic(&spec)?;
    save_dataset(&ds, &out)?;
    fs::write(out.join("spec.json"), serde_json::to_string_pretty(&spec)?)?;
    println!("wrote {} nodes, {} edges to {}", ds.node_count(), ds.adjacency().edge_count(), out.display());
    Ok(())
}

fn dataset_load(a: LoadArgs) -> anyhow::Result<()> {
    let (ds, split) = a.data.load()?;
    print_json(&serde_json::json!({
        "nodes": ds.node_count(),
        "edges": ds.adjacency().edge_count(),
        "features": ds.feature_dim(),
        "classes": ds.num_classes(),
        "split_sizes": split.sizes(),
    }))
}

fn test_accuracy(model: &GnnModel, ds: &GraphDataset, split: &DataSplit) -> anyhow::Result<Vec<usize>> {
    Ok(model.predict(ds.graph(), &split.test, 0)?)
}

fn train_target(a: TrainTargetArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let (ds, split) = a.data.load()?;
    let dir = out_dir(&a.out_dir)?;
    let mut cfg = GnnConfig::new(a.architecture.unwrap_or(Architecture::GraphSage)).with_seed(a.seed.unwrap_or(0));
    if let Some(h) = a.hidden_dim {
        cfg.hidden_dim = h;
    }
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
    }
    let (model, report) = train(&cfg, &ds, &split.target_train)?;
    let path = dir.join("models/target.gnnfp");
    model.save(&path)?;
    let truth: Vec<usize> = split.test.iter().map(|&v| ds.labels()[v]).collect();
    let acc = accuracy(&test_accuracy(&model, &ds, &split)?, &truth)?;
    log_stage(&dir, "train-target", start, "models/target.gnnfp", serde_json::json!({"test_accuracy": acc, "report": report}))?;
    println!("target {} test accuracy {acc:.3} -> {}", cfg.architecture, path.display());
    Ok(())
}

fn attack(a: AttackArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let (ds, split) = a.data.load()?;
    let dir = out_dir(&a.out_dir)?;
    let oracle: Box<dyn QueryOracle> = match (&a.endpoint, &a.target) {
        (Some(url), _) => Box::new(HttpOracle::new(url.clone())),
        (None, Some(p)) => Box::new(LocalOracle::new(load_model(p)?)),
        (None, None) => bail!("give --target or --endpoint"),
    };
    let attacker = ds.induced(&split.surrogate_train)?;
    let at = a.attack_type.unwrap_or(AttackType::TypeI);
    let arch = a.architecture.unwrap_or(Architecture::GraphSage);
    let mut cfg = AttackConfig::new(at, arch, a.seed.unwrap_or(0));
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let mut sur = run_extraction(oracle.as_ref(), &attacker, &cfg)?;
    if a.double.unwrap_or(false) {
        let second = AttackConfig {
            seed: derive_seed(cfg.seed, "double"),
            ..cfg.clone()
        };
        sur = double_extract(&sur, &attacker, &second)?;
    }
    let name = format!("models/surrogate-{arch}-{at}.gnnfp");
    sur.model.save(dir.join(&name))?;
    let truth: Vec<usize> = split.test.iter().map(|&v| ds.labels()[v]).collect();
    let pred = test_accuracy(&sur.model, &ds, &split)?;
    let mut detail = serde_json::json!({"embedding_loss": sur.embedding_loss, "test_accuracy": accuracy(&pred, &truth)?});
    if let Some(p) = &a.target {
        let target_pred = test_accuracy(&load_model(p)?, &ds, &split)?;
        detail["fidelity"] = fidelity(&pred, &target_pred)?.into();
    }
    log_stage(&dir, "attack", start, &name, detail.clone())?;
    println!("{} -> {}", detail, dir.join(&name).display());
    Ok(())
}

fn cohort(a: CohortArgs) -> anyhow::Result<()> {
    let (ds, split) = a.data.load()?;
    let dir = out_dir(&a.out_dir)?;
    let target = load_model(&need(&a.target, "target")?)?;
    let oracle = LocalOracle::new(target.clone());
    let attacker = ds.induced(&split.surrogate_train)?;
    let seed = a.seed.unwrap_or(0);
    // Trained one after another so the logged times add up honestly.
    for k in 0..a.surrogates.unwrap_or(2) {
        let start = Instant::now();
        let at = AttackType::ALL[k % 2];
        let mut cfg = AttackConfig::new(at, target.config.architecture, derive_seed(seed, &format!("cohort/sur-{k}")));
        if let Some(e) = a.epochs {
            cfg.epochs = e;
        }
        let name = format!("models/cohort/sur-{k}.gnnfp");
        run_extraction(&oracle, &attacker, &cfg)?.model.save(dir.join(&name))?;
        log_stage(&dir, &format!("cohort/sur-{k}"), start, &name, serde_json::json!({"attack_type": at}))?;
        println!("{name}");
    }
    for arch in Architecture::ALL {
        for k in 0..a.independents_per_architecture.unwrap_or(1) {
            let start = Instant::now();
            let mut cfg = GnnConfig::new(arch)
                .with_hidden_dim(target.config.hidden_dim)
                .with_seed(derive_seed(seed, &format!("cohort/ind-{arch}-{k}")));
            if arch == Architecture::Gat && !cfg.hidden_dim.is_multiple_of(cfg.attention_heads) {
                cfg.attention_heads = 1;
            }
            if let Some(e) = a.epochs {
                cfg.max_epochs = e;
            }
            let name = format!("models/cohort/ind-{arch}-{k}.gnnfp");
            train(&cfg, &ds, &split.surrogate_train)?.0.save(dir.join(&name))?;
            log_stage(&dir, &format!("cohort/ind-{arch}-{k}"), start, &name, Value::Null)?;
            println!("{name}");
        }
    }
    Ok(())
}

fn cohort_files(dir: &Path, prefix: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir.join("models/cohort"))
        .context("no cohort found; run `gnnfp cohort` or pass model files")?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with(prefix)))
        .collect();
    files.sort();
    Ok(files)
}

fn fingerprint_train(a: FingerprintTrainArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let (ds, split) = a.data.load()?;
    let dir = out_dir(&a.out_dir)?;
    let target = load_model(&need(&a.target, "target")?)?;
    let sur_files = if a.surrogates.is_empty() { cohort_files(&dir, "sur-")? } else { a.surrogates.clone() };
    let ind_files = if a.independents.is_empty() { cohort_files(&dir, "ind-")? } else { a.independents.clone() };
    let load_all = |files: &[PathBuf]| -> anyhow::Result<Vec<(String, GnnModel)>> {
        files.iter().map(|p| Ok((stem(p), load_model(p)?))).collect()
    };
    let (surs, inds) = (load_all(&sur_files)?, load_all(&ind_files)?);
    let named = |v: &[(String, GnnModel)]| -> Vec<(String, GnnModel)> { v.to_vec() };
    let (surs, inds) = (named(&surs), named(&inds));
    let sn: Vec<NamedModel> = surs.iter().map(|(n, m)| NamedModel::new(n, m)).collect();
    let inn: Vec<NamedModel> = inds.iter().map(|(n, m)| NamedModel::new(n, m)).collect();
    let seed = a.seed.unwrap_or(0);
    let tn = NamedModel::new("target", &target);
    let g = ds.graph();
    let mut ts = build_training_set(tn, &sn, &inn, g, &split.verification, seed)?;
    if !a.robust_prune_ratios.is_empty() {
        ts = build_robust_training_set(&ts, tn, &sn, &a.robust_prune_ratios, g, &split.verification, seed)?;
    }
    ts.save(dir.join("tables/training_set.csv"))?;
    let csim = train_csim(&ts, &CsimConfig::default(), seed)?;
    fs::write(dir.join("models/csim.json"), csim.to_json())?;
    log_stage(
        &dir,
        "fingerprint-train",
        start,
        "models/csim.json",
        serde_json::json!({"cv_accuracy": csim.cv_accuracy, "rows": ts.len(), "hidden": csim.hidden}),
    )?;
    println!(
        "similarity classifier: hidden {} {:?}, cv accuracy {:.3} over {} rows",
        csim.hidden,
        csim.activation,
        csim.cv_accuracy,
        ts.len()
    );
    Ok(())
}

fn load_csim(path: &Path) -> anyhow::Result<SimilarityClassifier> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SimilarityClassifier::from_json(&text)?)
}

fn fingerprint_verify(a: VerifyArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let (ds, split) = a.data.load()?;
    let dir = out_dir(&a.out_dir)?;
    let csim = load_csim(&need(&a.csim, "csim")?)?;
    let target = load_model(&need(&a.target, "target")?)?;
    let suspect_path = need(&a.suspect, "suspect")?;
    let suspect = load_model(&suspect_path)?;
    let seed = a.seed.unwrap_or(0);
    let report = verify(&csim, &target, &suspect, ds.graph(), &split.verification, seed)?;
    let record = VerdictRecord::new(report, &target, &suspect, &split.verification, seed);
    let name = format!("verdicts/{}.json", stem(&suspect_path));
    fs::write(dir.join(&name), serde_json::to_string_pretty(&record)?)?;
    log_stage(&dir, "fingerprint-verify", start, &name, serde_json::json!({"similar_fraction": record.report.similar_fraction}))?;
    println!(
        "{}: {:?} (similar fraction {:.3} over {} nodes)",
        stem(&suspect_path),
        record.report.verdict,
        record.report.similar_fraction,
        record.report.pair_count
    );
    Ok(())
}

fn verifier(data: &DataArgs, seed: Option<u64>) -> anyhow::Result<VerifierContext> {
    let (ds, split) = data.load()?;
    Ok(VerifierContext {
        graph: ds.graph().clone(),
        d_v: split.verification,
        seed: seed.unwrap_or(0),
    })
}

fn registry_serve(a: ServeArgs) -> anyhow::Result<()> {
    let reg = Registry::open(need(&a.registry, "registry")?)?;
    let state = ServerState::new(reg, Some(verifier(&a.data, a.seed)?));
    let addr = a.addr.unwrap_or_else(|| "127.0.0.1:8080".into());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        eprintln!("registry listening on http://{}", listener.local_addr()?);
        registry::serve(state, listener).await?;
        anyhow::Ok(())
    })
}

fn registry_register(a: RegisterArgs) -> anyhow::Result<()> {
    let mut reg = Registry::open(need(&a.registry, "registry")?)?;
    let model = need(&a.model, "model")?;
    let bytes = fs::read(&model).with_context(|| format!("reading {}", model.display()))?;
    let record = reg.register(&bytes, &a.owner.unwrap_or_else(|| "anonymous".into()))?;
    if let Some(c) = &a.csim {
        reg.attach_csim(&record.model_id, &load_csim(c)?)?;
    }
    print_json(&record)
}

fn registry_dispute(a: DisputeArgs) -> anyhow::Result<()> {
    let mut reg = Registry::open(need(&a.registry, "registry")?)?;
    let read = |p: &Option<PathBuf>, flag: &str| -> anyhow::Result<Vec<u8>> {
        let p = need(p, flag)?;
        fs::read(&p).with_context(|| format!("reading {}", p.display()))
    };
    let (tb, sb) = (read(&a.target_file, "target-file")?, read(&a.suspect_file, "suspect-file")?);
    let dispute = reg.open_dispute(&need(&a.accuser, "accuser")?, &need(&a.responder, "responder")?, &tb, &sb)?;
    if dispute.status.is_terminal() {
        return print_json(&dispute);
    }
    let ctx = verifier(&a.data, a.seed)?;
    let target = reg.model(&dispute.accuser_record.model_id)?;
    let suspect = reg.model(&dispute.responder_record.model_id)?;
    let csim = reg.csim(&dispute.accuser_record.model_id)?.clone();
    let oracle = |url: &Option<String>, m: &GnnModel| -> Box<dyn QueryOracle> {
        match url {
            Some(u) => Box::new(HttpOracle::new(u.clone())),
            None => Box::new(LocalOracle::new(m.clone())),
        }
    };
    let (to, so) = (oracle(&a.target_endpoint, &target), oracle(&a.suspect_endpoint, &suspect));
    let rc = ResolveContext {
        csim: &csim,
        graph: &ctx.graph,
        d_v: &ctx.d_v,
        seed: ctx.seed,
        target_oracle: to.as_ref(),
        suspect_oracle: so.as_ref(),
    };
    let outcome = registry::resolve(&dispute, &target, &suspect, &rc, &mut |step| {
        tracing::info!(?step, "dispute gate");
    })?;
    print_json(&reg.record_resolution(outcome)?)
}

fn experiment_run(w: &With<ExperimentArgs>) -> anyhow::Result<()> {
    let mut base = match &w.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => serde_json::to_value(ExperimentConfig::default())?,
    };
    overlay(&mut base, serde_json::to_value(&w.args)?)?;
    let cfg: ExperimentConfig = serde_json::from_value(base).context("invalid experiment configuration")?;
    let table = run_experiment(&cfg)?;
    print!("{}", table.render());
    println!("results in {}", cfg.out_dir.display());
    Ok(())
}

fn plot_projection(a: ProjectionArgs) -> anyhow::Result<()> {
    let (ds, split) = a.data.load()?;
    let dir = out_dir(&a.out_dir)?;
    if a.models.is_empty() {
        bail!("--models needs at least one model file");
    }
    let seed = a.seed.unwrap_or(0);
    let mut sets = Vec::new();
    for (i, p) in a.models.iter().enumerate() {
        let name = if i == 0 { format!("target:{}", stem(p)) } else { stem(p) };
        sets.push((name, load_model(p)?.embed(ds.graph(), &split.verification, seed)?));
    }
    let method = a.method.unwrap_or(Projection::Pca);
    emit_projection_plot(&sets, method, &dir.join("plots/projection"))?;
    println!("wrote {}", dir.join("plots/projection.svg").display());
    Ok(())
}

fn plot_distances(a: DistancesArgs) -> anyhow::Result<()> {
    let (ds, split) = a.data.load()?;
    let dir = out_dir(&a.out_dir)?;
    let target = load_model(&need(&a.target, "target")?)?;
    let mut models = Vec::new();
    for (files, kind) in [(&a.surrogates, Verdict::Surrogate), (&a.independents, Verdict::Independent)] {
        for p in files {
            models.push((stem(p), kind, load_model(p)?));
        }
    }
    let others: Vec<(String, Verdict, &GnnModel)> = models.iter().map(|(n, k, m)| (n.clone(), *k, m)).collect();
    let hist = emit_distance_histogram(
        &target,
        &others,
        ds.graph(),
        &split.verification,
        a.seed.unwrap_or(0),
        &dir.join("plots/distances"),
    )?;
    print_json(&hist.summary())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log))
        .with_writer(std::io::stderr)
        .init();
    match cli.command {
        Command::Dataset(DatasetCommand::Synth(w)) => dataset_synth(merged(&w)?),
        Command::Dataset(DatasetCommand::Load(w)) => dataset_load(merged(&w)?),
        Command::TrainTarget(w) => train_target(merged(&w)?),
        Command::Attack(w) => attack(merged(&w)?),
        Command::Cohort(w) => cohort(merged(&w)?),
        Command::Fingerprint(FingerprintCommand::Train(w)) => fingerprint_train(merged(&w)?),
        Command::Fingerprint(FingerprintCommand::Verify(w)) => fingerprint_verify(merged(&w)?),
        Command::Registry(RegistryCommand::Serve(w)) => registry_serve(merged(&w)?),
        Command::Registry(RegistryCommand::Register(w)) => registry_register(merged(&w)?),
        Command::Registry(RegistryCommand::Dispute(w)) => registry_dispute(merged(&w)?),
        Command::Experiment(ExperimentCommand::Run(w)) => experiment_run(&w),
        Command::Plot(PlotCommand::Projection(w)) => plot_projection(merged(&w)?),
        Command::Plot(PlotCommand::Distances(w)) => plot_distances(merged(&w)?),
    }
}
