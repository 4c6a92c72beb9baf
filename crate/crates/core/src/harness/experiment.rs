//! Resumable end-to-end experiments.
//!
//! Output layout under `out_dir`:
//!
//! - `config.json`: the configuration the directory was produced with
//! - `manifest.jsonl`: one line per finished or failed stage
//! - `models/`: every trained model, plus similarity classifiers as JSON
//! - `verdicts/`: one `VerdictRecord` per suspect and classifier
//! - `tables/`: `metrics.json`, `metrics.csv`, `timings.csv`
//! - `plots/`: projection and distance-histogram SVGs with their CSVs
//!
//! Rerunning into the same directory skips every stage already recorded as
//! done and reloads its artifact, so an interrupted run resumes where it
//! stopped. Tables are assembled only from manifest records.
//!
//! Seeds: repeat `r` uses `derive_seed(seed, "repeat/<r>")`, and every stage
//! derives its own seed from the repeat seed and the stage name.

use std::cell::OnceCell;
use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::plot::{emit_distance_histogram, emit_projection_plot, Projection};
use super::{accuracy, fidelity, fpr_fnr, Summary};
use crate::error::{Error, Result};
use crate::extraction::{
    distribution_shift_attack, double_extract, run_extraction, AttackConfig, AttackType, LocalOracle, ShiftConfig,
    SurrogateModel,
};
use crate::fingerprint::{
    build_robust_training_set, build_training_set, train_csim, verify, CsimConfig, FingerprintTrainingSet, NamedModel, SimilarityClassifier,
    Verdict, VerdictRecord, MAX_ROBUST_PRUNE_RATIO,
};
use crate::gnn::{fine_tune, prune, train, Architecture, GnnConfig, GnnModel};
use crate::graph_data::{
    generate_synthetic, load_dataset, split_dataset, DataSplit, GraphDataset, SyntheticGraphSpec, DEFAULT_FRACTIONS,
};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticGraphSpec),
    /// Directory in the on-disk dataset format.
    Path(PathBuf),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticGraphSpec::default())
    }
}

impl DatasetSpec {
    pub fn load(&self) -> Result<GraphDataset> {
        match self {
            DatasetSpec::Synthetic(spec) => generate_synthetic(spec),
            DatasetSpec::Path(dir) => load_dataset(dir),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvasionConfig {
    pub fine_tune: bool,
    pub fine_tune_epochs: usize,
    pub double_extract: bool,
    /// Ratios at which every surrogate suspect is pruned and re-verified.
    pub prune_ratios: Vec<f64>,
    pub distribution_shift: bool,
}

impl Default for EvasionConfig {
    fn default() -> Self {
        Self {
            fine_tune: true,
            fine_tune_epochs: 10,
            double_extract: true,
            prune_ratios: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            distribution_shift: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub target_architectures: Vec<Architecture>,
    pub surrogate_architectures: Vec<Architecture>,
    pub independent_architectures: Vec<Architecture>,
    pub attack_types: Vec<AttackType>,
    /// Surrogates the similarity classifier is trained on, extracted with the
    /// target's architecture and cycling through `attack_types`.
    pub cohort_surrogates: usize,
    /// Independent models per architecture in the classifier's training set.
    pub cohort_independents_per_architecture: usize,
    /// Surrogate suspects per (architecture, attack type).
    pub surrogate_suspects: usize,
    /// Independent suspects per architecture, alternately trained on the
    /// surrogate and target splits.
    pub independent_suspects: usize,
    /// Prune ratios added to the robust classifier's training set; empty
    /// skips the robust classifier.
    pub robust_prune_ratios: Vec<f64>,
    pub evasion: EvasionConfig,
    pub hidden_dim: Option<usize>,
    pub target_epochs: Option<usize>,
    pub attack_epochs: Option<usize>,
    pub csim: CsimConfig,
    pub repeats: usize,
    pub seed: u64,
    /// Train cohort and suspect models concurrently.
    pub parallel: bool,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            target_architectures: vec![Architecture::GraphSage],
            surrogate_architectures: Architecture::ALL.to_vec(),
            independent_architectures: Architecture::ALL.to_vec(),
            attack_types: AttackType::ALL.to_vec(),
            cohort_surrogates: 2,
            cohort_independents_per_architecture: 1,
            surrogate_suspects: 2,
            independent_suspects: 4,
            robust_prune_ratios: vec![0.1, 0.2, 0.3, 0.4],
            evasion: EvasionConfig::default(),
            hidden_dim: None,
            target_epochs: None,
            attack_epochs: None,
            csim: CsimConfig::default(),
            repeats: 1,
            seed: 0,
            parallel: false,
            out_dir: PathBuf::from("experiment-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        if self.evasion.prune_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid("prune ratios must lie in [0, 1]"));
        }
        if self.robust_prune_ratios.iter().any(|&r| !(r > 0.0 && r <= MAX_ROBUST_PRUNE_RATIO)) {
            return Err(Error::invalid(format!(
                "robust prune ratios must lie in (0, {MAX_ROBUST_PRUNE_RATIO}]"
            )));
        }
        if self.target_architectures.is_empty()
            || self.surrogate_architectures.is_empty()
            || self.independent_architectures.is_empty()
            || self.attack_types.is_empty()
        {
            return Err(Error::invalid("architecture and attack type lists must be nonempty"));
        }
        if self.cohort_surrogates == 0 || self.cohort_independents_per_architecture == 0 {
            return Err(Error::invalid("the classifier cohort needs surrogates and independents"));
        }
        if self.evasion.fine_tune && self.evasion.fine_tune_epochs == 0 {
            return Err(Error::invalid("fine_tune_epochs must be positive"));
        }
        Ok(())
    }

    fn gnn_config(&self, arch: Architecture, seed: u64) -> GnnConfig {
        let mut cfg = GnnConfig::new(arch).with_seed(seed);
        if let Some(h) = self.hidden_dim {
            cfg.hidden_dim = h;
            if arch == Architecture::Gat && h % cfg.attention_heads != 0 {
                cfg.attention_heads = 1;
            }
        }
        if let Some(e) = self.target_epochs {
            cfg.max_epochs = e;
        }
        cfg
    }

    fn attack_config(&self, at: AttackType, arch: Architecture, seed: u64) -> AttackConfig {
        let mut cfg = AttackConfig::new(at, arch, seed);
        if let Some(e) = self.attack_epochs {
            cfg.epochs = e;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Done,
    Failed,
}

/// Verdict of one similarity classifier on one suspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// `basic` or `robust`.
    pub csim: String,
    pub similar_fraction: f64,
    pub verdict: Verdict,
}

/// Everything the metrics table needs about one evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspectRecord {
    pub repeat: usize,
    pub target_architecture: Architecture,
    pub condition: String,
    pub model: String,
    /// `None` for the target itself.
    pub truth: Option<Verdict>,
    /// Test-split accuracy.
    pub accuracy: f64,
    /// Test-split label agreement with the target.
    pub fidelity: f64,
    pub outcomes: Vec<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub status: StageStatus,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<SuspectRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub condition: String,
    pub csim: Option<String>,
    /// Evaluated models summed over repeats.
    pub models: usize,
    pub accuracy: Summary,
    pub fidelity: Summary,
    pub fpr: Summary,
    pub fnr: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub repeat: usize,
    pub target_architecture: Architecture,
    pub target_train_seconds: f64,
    /// Cohort training, training-set construction and classifier fitting.
    pub csim_pipeline_seconds: f64,
}

/// Summary over repeats, one row per (condition, classifier). Wall-clock
/// timings are kept apart from the rows because they differ between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub timings: Vec<TimingRow>,
}

impl MetricsTable {
    pub fn row(&self, condition: &str, csim: Option<&str>) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.condition == condition && r.csim.as_deref() == csim)
    }

    pub fn to_csv(&self) -> String {
        let cell = |s: &Summary| {
            let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
            format!("{},{}", f(s.mean), f(s.half_width))
        };
        let mut out = String::from(
            "condition,csim,models,accuracy,accuracy_ci,fidelity,fidelity_ci,fpr,fpr_ci,fnr,fnr_ci\n",
        );
        for r in &self.rows {
            out += &format!(
                "{},{},{},{},{},{},{}\n",
                r.condition,
                r.csim.as_deref().unwrap_or("-"),
                r.models,
                cell(&r.accuracy),
                cell(&r.fidelity),
                cell(&r.fpr),
                cell(&r.fnr)
            );
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("repeat,target_architecture,target_train_seconds,csim_pipeline_seconds\n");
        for t in &self.timings {
            out += &format!(
                "{},{},{:.3},{:.3}\n",
                t.repeat, t.target_architecture, t.target_train_seconds, t.csim_pipeline_seconds
            );
        }
        out
    }

    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<22} {:<7} {:>6} {:>15} {:>15} {:>15} {:>15}\n",
            "condition", "csim", "models", "accuracy", "fidelity", "fpr", "fnr"
        );
        for r in &self.rows {
            out += &format!(
                "{:<22} {:<7} {:>6} {:>15} {:>15} {:>15} {:>15}\n",
                r.condition,
                r.csim.as_deref().unwrap_or("-"),
                r.models,
                r.accuracy.display(),
                r.fidelity.display(),
                r.fpr.display(),
                r.fnr.display()
            );
        }
        out
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::parse(format!("manifest line {}", i + 1), e))?);
    }
    Ok(out)
}

fn condition_rank(condition: &str) -> (usize, u64) {
    const ORDER: [&str; 7] = [
        "target",
        "type1",
        "type2",
        "independent",
        "fine-tuned",
        "double-extraction",
        "distribution-shift",
    ];
    if let Some(ratio) = condition.strip_prefix("prune-") {
        let r: f64 = ratio.parse().unwrap_or(f64::INFINITY);
        return (ORDER.len(), (r * 1e6) as u64);
    }
    (ORDER.iter().position(|c| *c == condition).unwrap_or(ORDER.len() + 1), 0)
}

/// Build the metrics table from manifest entries. For each stage only its
/// last successful entry counts.
pub fn assemble_table(entries: &[ManifestEntry]) -> MetricsTable {
    let mut latest: BTreeMap<&str, &ManifestEntry> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.status == StageStatus::Done) {
        latest.insert(&e.stage, e);
    }
    let records: Vec<&SuspectRecord> = latest.values().filter_map(|e| e.record.as_ref()).collect();

    // (condition, csim) -> repeat -> records
    let mut groups: BTreeMap<(String, Option<String>), BTreeMap<usize, Vec<&SuspectRecord>>> = BTreeMap::new();
    for r in &records {
        let csims: Vec<Option<String>> = if r.outcomes.is_empty() {
            vec![None]
        } else {
            r.outcomes.iter().map(|o| Some(o.csim.clone())).collect()
        };
        for c in csims {
            groups
                .entry((r.condition.clone(), c))
                .or_default()
                .entry(r.repeat)
                .or_default()
                .push(r);
        }
    }
    let mut rows: Vec<MetricsRow> = groups
        .into_iter()
        .map(|((condition, csim), by_repeat)| {
            let mut acc = Vec::new();
            let mut fid = Vec::new();
            let mut fpr = Vec::new();
            let mut fnr = Vec::new();
            let mut models = 0;
            for recs in by_repeat.values() {
                models += recs.len();
                let n = recs.len() as f64;
                acc.push(recs.iter().map(|r| r.accuracy).sum::<f64>() / n);
                fid.push(recs.iter().map(|r| r.fidelity).sum::<f64>() / n);
                if let Some(c) = &csim {
                    let pairs: Vec<(Verdict, Verdict)> = recs
                        .iter()
                        .filter_map(|r| {
                            let o = r.outcomes.iter().find(|o| &o.csim == c)?;
                            Some((r.truth?, o.verdict))
                        })
                        .collect();
                    let rates = fpr_fnr(&pairs);
                    fpr.extend(rates.fpr);
                    fnr.extend(rates.fnr);
                }
            }
            MetricsRow {
                condition,
                csim,
                models,
                accuracy: Summary::of(&acc),
                fidelity: Summary::of(&fid),
                fpr: Summary::of(&fpr),
                fnr: Summary::of(&fnr),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        condition_rank(&a.condition)
            .cmp(&condition_rank(&b.condition))
            .then_with(|| a.condition.cmp(&b.condition))
            .then_with(|| a.csim.cmp(&b.csim))
    });

    let mut timings: BTreeMap<(usize, Architecture), TimingRow> = BTreeMap::new();
    for e in latest.values() {
        let mut parts = e.stage.splitn(3, '/');
        let (Some(r), Some(arch), Some(rest)) = (parts.next(), parts.next(), parts.next()) else {
            continue;
        };
        let (Some(repeat), Ok(arch)) = (r.strip_prefix('r').and_then(|x| x.parse().ok()), arch.parse()) else {
            continue;
        };
        let t = timings.entry((repeat, arch)).or_insert(TimingRow {
            repeat,
            target_architecture: arch,
            target_train_seconds: 0.0,
            csim_pipeline_seconds: 0.0,
        });
        if rest == "target" {
            t.target_train_seconds += e.seconds;
        } else if rest.starts_with("cohort/") || rest.starts_with("csim-") {
            t.csim_pipeline_seconds += e.seconds;
        }
    }
    MetricsTable {
        rows,
        timings: timings.into_values().collect(),
    }
}

struct Runner {
    dir: PathBuf,
    done: HashMap<String, ManifestEntry>,
    log: File,
    parallel: bool,
}

type Job<'a> = (String, Box<dyn Fn() -> Result<GnnModel> + Send + Sync + 'a>);

impl Runner {
    fn open(dir: &Path, parallel: bool) -> Result<Self> {
        let path = dir.join("manifest.jsonl");
        let done = read_manifest(&path)?
            .into_iter()
            .filter(|e| e.status == StageStatus::Done)
            .map(|e| (e.stage.clone(), e))
            .collect();
        let log = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            done,
            log,
            parallel,
        })
    }

    fn append(&mut self, entry: ManifestEntry) -> Result<()> {
        writeln!(self.log, "{}", serde_json::to_string(&entry)?)?;
        self.log.flush()?;
        if entry.status == StageStatus::Done {
            self.done.insert(entry.stage.clone(), entry);
        }
        Ok(())
    }

    fn fail(&mut self, stage: &str, seconds: f64, err: &Error) -> Result<()> {
        tracing::warn!(stage, "stage failed: {err}");
        self.append(ManifestEntry {
            stage: stage.to_string(),
            status: StageStatus::Failed,
            seconds,
            artifact: None,
            error: Some(err.to_string()),
            record: None,
            detail: None,
        })
    }

    fn model_artifact(stage: &str) -> String {
        format!("models/{stage}.gnnfp")
    }

    fn load_model(&self, stage: &str) -> Option<GnnModel> {
        self.done.get(stage)?;
        GnnModel::load(self.dir.join(Self::model_artifact(stage))).ok()
    }

    fn finish_model(&mut self, stage: &str, result: Result<GnnModel>, seconds: f64) -> Result<Option<GnnModel>> {
        match result.and_then(|m| {
            m.save(self.dir.join(Self::model_artifact(stage)))?;
            Ok(m)
        }) {
            Ok(m) => {
                tracing::info!(stage, seconds, "stage done");
                self.append(ManifestEntry {
                    stage: stage.to_string(),
                    status: StageStatus::Done,
                    seconds,
                    artifact: Some(Self::model_artifact(stage)),
                    error: None,
                    record: None,
                    detail: None,
                })?;
                Ok(Some(m))
            }
            Err(e) => {
                self.fail(stage, seconds, &e)?;
                Ok(None)
            }
        }
    }

    fn model(&mut self, stage: &str, compute: impl FnOnce() -> Result<GnnModel>) -> Result<Option<GnnModel>> {
        if let Some(m) = self.load_model(stage) {
            return Ok(Some(m));
        }
        let start = Instant::now();
        let result = compute();
        self.finish_model(stage, result, start.elapsed().as_secs_f64())
    }

    /// Run independent model stages, concurrently in parallel mode; results
    /// are logged in job order either way.
    fn models(&mut self, jobs: Vec<Job>) -> Result<Vec<Option<GnnModel>>> {
        let cached: Vec<Option<GnnModel>> = jobs.iter().map(|(s, _)| self.load_model(s)).collect();
        let run = |(i, (_, f)): (usize, &Job)| {
            if cached[i].is_some() {
                return None;
            }
            let start = Instant::now();
            Some((f(), start.elapsed().as_secs_f64()))
        };
        let fresh: Vec<Option<(Result<GnnModel>, f64)>> = if self.parallel {
            jobs.par_iter().enumerate().map(run).collect()
        } else {
            jobs.iter().enumerate().map(run).collect()
        };
        let mut out = Vec::with_capacity(jobs.len());
        for ((stage, _), (cached, fresh)) in jobs.iter().zip(cached.into_iter().zip(fresh)) {
            out.push(match (cached, fresh) {
                (Some(m), _) => Some(m),
                (None, Some((result, secs))) => self.finish_model(stage, result, secs)?,
                (None, None) => None,
            });
        }
        Ok(out)
    }

    fn csim(
        &mut self,
        stage: &str,
        compute: impl FnOnce() -> Result<(SimilarityClassifier, serde_json::Value)>,
    ) -> Result<Option<SimilarityClassifier>> {
        let artifact = format!("models/{stage}.json");
        if self.done.contains_key(stage) {
            if let Ok(text) = fs::read_to_string(self.dir.join(&artifact)) {
                if let Ok(c) = SimilarityClassifier::from_json(&text) {
                    return Ok(Some(c));
                }
            }
        }
        let start = Instant::now();
        let result = compute().and_then(|(c, detail)| {
            let path = self.dir.join(&artifact);
            fs::create_dir_all(path.parent().expect("artifact has a parent"))?;
            fs::write(path, c.to_json())?;
            Ok((c, detail))
        });
        let seconds = start.elapsed().as_secs_f64();
        match result {
            Ok((c, detail)) => {
                self.append(ManifestEntry {
                    stage: stage.to_string(),
                    status: StageStatus::Done,
                    seconds,
                    artifact: Some(artifact),
                    error: None,
                    record: None,
                    detail: Some(detail),
                })?;
                Ok(Some(c))
            }
            Err(e) => {
                self.fail(stage, seconds, &e)?;
                Ok(None)
            }
        }
    }

    fn record(&mut self, stage: &str, compute: impl FnOnce() -> Result<SuspectRecord>) -> Result<()> {
        if self.done.contains_key(stage) {
            return Ok(());
        }
        let start = Instant::now();
        let result = compute();
        let seconds = start.elapsed().as_secs_f64();
        match result {
            Ok(record) => self.append(ManifestEntry {
                stage: stage.to_string(),
                status: StageStatus::Done,
                seconds,
                artifact: None,
                error: None,
                record: Some(record),
                detail: None,
            }),
            Err(e) => self.fail(stage, seconds, &e),
        }
    }

    fn plain(&mut self, stage: &str, artifact: &str, compute: impl FnOnce() -> Result<serde_json::Value>) -> Result<()> {
        if self.done.contains_key(stage) {
            return Ok(());
        }
        let start = Instant::now();
        let result = compute();
        let seconds = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => self.append(ManifestEntry {
                stage: stage.to_string(),
                status: StageStatus::Done,
                seconds,
                artifact: Some(artifact.to_string()),
                error: None,
                record: None,
                detail: Some(detail),
            }),
            Err(e) => self.fail(stage, seconds, &e),
        }
    }
}

/// Shared inputs of one (repeat, target architecture) pass.
struct Pass<'a> {
    cfg: &'a ExperimentConfig,
    ds: &'a GraphDataset,
    attacker: &'a GraphDataset,
    split: &'a DataSplit,
    repeat: usize,
    arch: Architecture,
    seed: u64,
    dir: &'a Path,
}

impl Pass<'_> {
    fn stage(&self, name: &str) -> String {
        format!("r{}/{}/{name}", self.repeat, self.arch)
    }

    fn seed_for(&self, name: &str) -> u64 {
        derive_seed(self.seed, name)
    }

    fn eval_seed(&self) -> u64 {
        self.seed_for("evaluate")
    }

    fn test_labels(&self) -> Vec<usize> {
        self.split.test.iter().map(|&v| self.ds.labels()[v]).collect()
    }

    fn evaluate(
        &self,
        name: &str,
        condition: &str,
        truth: Option<Verdict>,
        model: &GnnModel,
        target: &GnnModel,
        csims: &[(&str, &SimilarityClassifier)],
    ) -> Result<SuspectRecord> {
        let g = self.ds.graph();
        let pred = model.predict(g, &self.split.test, self.eval_seed())?;
        let target_pred = target.predict(g, &self.split.test, self.eval_seed())?;
        let mut outcomes = Vec::new();
        for (label, csim) in csims {
            let verify_seed = self.seed_for("verify");
            let d_v = &self.split.verification;
            let report = verify(csim, target, model, g, d_v, verify_seed)?;
            outcomes.push(Outcome {
                csim: label.to_string(),
                similar_fraction: report.similar_fraction,
                verdict: report.verdict,
            });
            let path = self.dir.join("verdicts").join(format!("{}-{label}.json", self.stage(name)));
            fs::create_dir_all(path.parent().expect("verdict path has a parent"))?;
            let record = VerdictRecord::new(report, target, model, d_v, verify_seed);
            fs::write(path, serde_json::to_string_pretty(&record)?)?;
        }
        Ok(SuspectRecord {
            repeat: self.repeat,
            target_architecture: self.arch,
            condition: condition.to_string(),
            model: self.stage(name),
            truth,
            accuracy: accuracy(&pred, &self.test_labels())?,
            fidelity: fidelity(&pred, &target_pred)?,
            outcomes,
        })
    }
}

fn prune_label(ratio: f64) -> String {
    format!("prune-{ratio}")
}

fn run_pass(runner: &mut Runner, p: &Pass) -> Result<()> {
    let cfg = p.cfg;
    let Some(target) = runner.model(&p.stage("target"), || {
        Ok(train(&cfg.gnn_config(p.arch, p.seed_for("target")), p.ds, &p.split.target_train)?.0)
    })?
    else {
        return Ok(());
    };
    runner.record(&p.stage("target/eval"), || p.evaluate("target", "target", None, &target, &target, &[]))?;
    let oracle = LocalOracle::new(target.clone());

    // Classifier cohort.
    let mut jobs: Vec<Job> = Vec::new();
    for k in 0..cfg.cohort_surrogates {
        let name = format!("cohort/sur-{k}");
        let at = cfg.attack_types[k % cfg.attack_types.len()];
        let attack = cfg.attack_config(at, p.arch, p.seed_for(&name));
        let oracle = &oracle;
        jobs.push((p.stage(&name), Box::new(move || Ok(run_extraction(oracle, p.attacker, &attack)?.model))));
    }
    let n_sur = jobs.len();
    for &a in &cfg.independent_architectures {
        for k in 0..cfg.cohort_independents_per_architecture {
            let name = format!("cohort/ind-{a}-{k}");
            let gcfg = cfg.gnn_config(a, p.seed_for(&name));
            jobs.push((p.stage(&name), Box::new(move || Ok(train(&gcfg, p.ds, &p.split.surrogate_train)?.0))));
        }
    }
    let names: Vec<String> = jobs.iter().map(|(s, _)| s.clone()).collect();
    let cohort = runner.models(jobs)?;
    if cohort.iter().any(Option::is_none) {
        return Ok(());
    }
    let cohort: Vec<GnnModel> = cohort.into_iter().map(Option::unwrap).collect();
    let named: Vec<NamedModel> = names.iter().zip(&cohort).map(|(n, m)| NamedModel::new(n, m)).collect();
    let (sur_named, ind_named) = named.split_at(n_sur);
    let tn = NamedModel::new("target", &target);
    let g = p.ds.graph();
    let d_v = &p.split.verification;

    let ts_seed = p.seed_for("training-set");
    // Built on first use, so a resumed run with both classifiers on disk
    // skips it.
    let base_cell = OnceCell::new();
    let base = || -> Result<&FingerprintTrainingSet> {
        if let Some(ts) = base_cell.get() {
            return Ok(ts);
        }
        let ts = build_training_set(tn, sur_named, ind_named, g, d_v, ts_seed)?;
        Ok(base_cell.get_or_init(|| ts))
    };
    let detail = |c: &SimilarityClassifier, rows: usize| {
        json!({"cv_accuracy": c.cv_accuracy, "hidden": c.hidden, "activation": c.activation, "rows": rows})
    };
    let basic = runner.csim(&p.stage("csim-basic"), || {
        let ts = base()?;
        let c = train_csim(ts, &cfg.csim, p.seed_for("csim-basic"))?;
        let d = detail(&c, ts.len());
        Ok((c, d))
    })?;
    let robust = if cfg.robust_prune_ratios.is_empty() {
        None
    } else {
        runner.csim(&p.stage("csim-robust"), || {
            let ts = build_robust_training_set(base()?, tn, sur_named, &cfg.robust_prune_ratios, g, d_v, ts_seed)?;
            let c = train_csim(&ts, &cfg.csim, p.seed_for("csim-robust"))?;
            let d = detail(&c, ts.len());
            Ok((c, d))
        })?
    };
    let Some(basic) = basic else { return Ok(()) };
    let mut csims: Vec<(&str, &SimilarityClassifier)> = vec![("basic", &basic)];
    if let Some(r) = &robust {
        csims.push(("robust", r));
    }

    // Suspects.
    let mut jobs: Vec<Job> = Vec::new();
    let mut meta: Vec<(String, String, Verdict, Option<AttackType>, Architecture)> = Vec::new();
    for &a in &cfg.surrogate_architectures {
        for &at in &cfg.attack_types {
            for k in 0..cfg.surrogate_suspects {
                let name = format!("suspect/sur-{a}-{at}-{k}");
                let attack = cfg.attack_config(at, a, p.seed_for(&name));
                let oracle = &oracle;
                jobs.push((p.stage(&name), Box::new(move || Ok(run_extraction(oracle, p.attacker, &attack)?.model))));
                meta.push((name, at.name().to_string(), Verdict::Surrogate, Some(at), a));
            }
        }
    }
    for &a in &cfg.independent_architectures {
        for k in 0..cfg.independent_suspects {
            let name = format!("suspect/ind-{a}-{k}");
            let gcfg = cfg.gnn_config(a, p.seed_for(&name));
            let nodes = if k % 2 == 0 { &p.split.surrogate_train } else { &p.split.target_train };
            jobs.push((p.stage(&name), Box::new(move || Ok(train(&gcfg, p.ds, nodes)?.0))));
            meta.push((name, "independent".to_string(), Verdict::Independent, None, a));
        }
    }
    let suspects = runner.models(jobs)?;
    let mut evasion_sources: Vec<(String, AttackType, GnnModel)> = Vec::new();
    for ((name, condition, truth, at, a), model) in meta.into_iter().zip(suspects) {
        let Some(model) = model else { continue };
        runner.record(&p.stage(&format!("{name}/eval")), || {
            p.evaluate(&name, &condition, Some(truth), &model, &target, &csims)
        })?;
        if truth != Verdict::Surrogate {
            continue;
        }
        for &ratio in &cfg.evasion.prune_ratios {
            let pname = format!("{name}/{}", prune_label(ratio));
            if let Some(pruned) = runner.model(&p.stage(&pname), || prune(&model, ratio))? {
                runner.record(&p.stage(&format!("{pname}/eval")), || {
                    p.evaluate(&pname, &prune_label(ratio), Some(truth), &pruned, &target, &csims)
                })?;
            }
        }
        if a == p.arch && name.ends_with("-0") {
            evasion_sources.push((name, at.expect("surrogates have an attack type"), model));
        }
    }

    // Evasion attempts on the first surrogate of each attack type extracted
    // with the target's own architecture.
    for (name, at, model) in &evasion_sources {
        if cfg.evasion.fine_tune {
            let fname = format!("{name}/fine-tuned");
            let fitted = runner.model(&p.stage(&fname), || {
                fine_tune(model, p.attacker, &(0..p.attacker.node_count()).collect::<Vec<_>>(), cfg.evasion.fine_tune_epochs)
            })?;
            if let Some(m) = fitted {
                runner.record(&p.stage(&format!("{fname}/eval")), || {
                    p.evaluate(&fname, "fine-tuned", Some(Verdict::Surrogate), &m, &target, &csims)
                })?;
            }
        }
        if cfg.evasion.double_extract {
            let dname = format!("{name}/double-extracted");
            let second = runner.model(&p.stage(&dname), || {
                let first = SurrogateModel {
                    model: model.clone(),
                    attack_type: *at,
                    embedding_loss: f64::NAN,
                };
                Ok(double_extract(&first, p.attacker, &cfg.attack_config(*at, p.arch, p.seed_for(&dname)))?.model)
            })?;
            if let Some(m) = second {
                runner.record(&p.stage(&format!("{dname}/eval")), || {
                    p.evaluate(&dname, "double-extraction", Some(Verdict::Surrogate), &m, &target, &csims)
                })?;
            }
        }
    }
    if cfg.evasion.distribution_shift {
        for &at in &cfg.attack_types {
            let sname = format!("suspect/shift-{at}");
            let shifted = runner.model(&p.stage(&sname), || {
                let attack = cfg.attack_config(at, p.arch, p.seed_for(&sname));
                Ok(distribution_shift_attack(&oracle, p.attacker, &attack, &ShiftConfig::default())?.model)
            })?;
            if let Some(m) = shifted {
                runner.record(&p.stage(&format!("{sname}/eval")), || {
                    p.evaluate(&sname, "distribution-shift", Some(Verdict::Surrogate), &m, &target, &csims)
                })?;
            }
        }
    }

    if p.repeat == 0 {
        plots(runner, p, &target)?;
    }
    Ok(())
}

fn plots(runner: &mut Runner, p: &Pass, target: &GnnModel) -> Result<()> {
    let stage = p.stage("plots");
    let artifact = format!("plots/{}/{}", p.repeat, p.arch);
    let dir = p.dir.join(&artifact);
    let cfg = p.cfg;
    let surrogates: Vec<(String, GnnModel)> = (cfg.surrogate_architectures.iter())
        .flat_map(|a| cfg.attack_types.iter().map(move |at| format!("suspect/sur-{a}-{at}-0")))
        .filter_map(|n| runner.load_model(&p.stage(&n)).map(|m| (n, m)))
        .collect();
    let independents: Vec<(String, GnnModel)> = (cfg.independent_architectures.iter())
        .map(|a| format!("suspect/ind-{a}-0"))
        .filter_map(|n| runner.load_model(&p.stage(&n)).map(|m| (n, m)))
        .collect();
    runner.plain(&stage, &artifact, || {
        fs::create_dir_all(&dir)?;
        let g = p.ds.graph();
        let d_v = &p.split.verification;
        let s = p.seed_for("verify");
        let mut sets = vec![("target".to_string(), target.embed(g, d_v, s)?)];
        for (name, m) in surrogates.iter().take(1).chain(independents.iter().take(1)) {
            sets.push((name.clone(), m.embed(g, d_v, s)?));
        }
        emit_projection_plot(&sets, Projection::Pca, &dir.join("projection"))?;
        let mut others: Vec<(String, Verdict, &GnnModel)> = Vec::new();
        others.extend(surrogates.iter().map(|(n, m)| (n.clone(), Verdict::Surrogate, m)));
        others.extend(independents.iter().map(|(n, m)| (n.clone(), Verdict::Independent, m)));
        let hist = emit_distance_histogram(target, &others, g, d_v, s, &dir.join("distances"))?;
        Ok(serde_json::to_value(hist.summary())?)
    })
}

/// Run (or resume) an experiment and write its tables.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsTable> {
    cfg.validate()?;
    let dir = &cfg.out_dir;
    for sub in ["models", "verdicts", "tables", "plots"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let config_path = dir.join("config.json");
    let mut stored = cfg.clone();
    stored.out_dir = PathBuf::new();
    let text = serde_json::to_string_pretty(&stored)?;
    if config_path.exists() {
        let previous: ExperimentConfig = serde_json::from_str(&fs::read_to_string(&config_path)?)
            .map_err(|e| Error::parse("config.json", e))?;
        if previous != stored {
            return Err(Error::invalid(format!(
                "{} holds results of a different configuration",
                dir.display()
            )));
        }
    } else {
        fs::write(&config_path, text)?;
    }

    let mut runner = Runner::open(dir, cfg.parallel)?;
    let ds = cfg.dataset.load()?;
    runner.plain("dataset", "config.json", || {
        Ok(json!({"nodes": ds.node_count(), "edges": ds.adjacency().edge_count(), "features": ds.feature_dim(),
                  "classes": ds.num_classes(), "parallel": cfg.parallel}))
    })?;
    for repeat in 0..cfg.repeats {
        let seed = derive_seed(cfg.seed, &format!("repeat/{repeat}"));
        let split = split_dataset(ds.node_count(), DEFAULT_FRACTIONS, derive_seed(seed, "split"))?;
        let attacker = ds.induced(&split.surrogate_train)?;
        for &arch in &cfg.target_architectures {
            let pass = Pass {
                cfg,
                ds: &ds,
                attacker: &attacker,
                split: &split,
                repeat,
                arch,
                seed: derive_seed(seed, arch.name()),
                dir,
            };
            run_pass(&mut runner, &pass)?;
        }
    }

    let table = assemble_table(&read_manifest(dir.join("manifest.jsonl"))?);
    fs::write(dir.join("tables/metrics.json"), serde_json::to_string_pretty(&table)?)?;
    fs::write(dir.join("tables/metrics.csv"), table.to_csv())?;
    fs::write(dir.join("tables/timings.csv"), table.timings_csv())?;
    Ok(table)
}
