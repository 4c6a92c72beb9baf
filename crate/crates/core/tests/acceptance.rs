//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line
//! on the real stdout (so the line shows even when the harness captures
//! output) and the lines are also written to `acceptance.txt` in the cargo
//! test tmp dir. A FAIL does not fail the test; broken plumbing does.
//!
//! The default-scale experiment keeps its output under the cargo tmp dir
//! and resumes on later runs; delete `acceptance-default/` for a cold run.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;

use gnnfp::extraction::{row_21_loss, run_extraction, AttackConfig, AttackType, LocalOracle, QueryOracle};
use gnnfp::fingerprint::{build_training_set, train_csim, CsimConfig, NamedModel, Verdict};
use gnnfp::gnn::{layer_forward, train, Architecture, GnnConfig, GnnLayer, GnnModel};
use gnnfp::graph_data::{generate_synthetic, Graph, GraphDataset, SyntheticGraphSpec};
use gnnfp::harness::{read_manifest, run_experiment, ExperimentConfig, SuspectRecord};
use gnnfp::nn::{Dense, Mat};
use gnnfp::registry::{resolve, DisputeStatus, Registry, ResolveContext, ResolveStep};
use gnnfp::seed;

struct Report {
    lines: Vec<String>,
}

impl Report {
    fn line(&mut self, n: usize, ok: bool, detail: String) {
        let line = format!("criterion {n}: {} | {detail}", if ok { "PASS" } else { "FAIL" });
        let mut out = std::io::stdout();
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
        self.lines.push(line);
    }
}

fn tmp(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fraction(r: &SuspectRecord, csim: &str) -> f64 {
    r.outcomes.iter().find(|o| o.csim == csim).unwrap().similar_fraction
}

fn verdict(r: &SuspectRecord, csim: &str) -> Verdict {
    r.outcomes.iter().find(|o| o.csim == csim).unwrap().verdict
}

/// Share of records whose verdict differs from the truth.
fn error_rate(records: &[&SuspectRecord], csim: &str) -> f64 {
    let wrong = records.iter().filter(|r| Some(verdict(r, csim)) != r.truth).count();
    wrong as f64 / records.len() as f64
}

/// The default classifier's training cohort includes pruned surrogates;
/// "basic" is the ablation without them.
const DEFAULT_CSIM: &str = "robust";

fn experiment_criteria(rep: &mut Report) {
    let cfg = ExperimentConfig {
        out_dir: tmp("acceptance-default"),
        ..ExperimentConfig::default()
    };
    run_experiment(&cfg).unwrap();
    let manifest = read_manifest(cfg.out_dir.join("manifest.jsonl")).unwrap();
    let runtime: f64 = manifest.iter().map(|e| e.seconds).sum();
    let records: Vec<SuspectRecord> = manifest.into_iter().filter_map(|e| e.record).collect();
    let by = |cond: &str| -> Vec<&SuspectRecord> { records.iter().filter(|r| r.condition == cond).collect() };
    let target = by("target")[0];
    let surrogates: Vec<&SuspectRecord> = records.iter().filter(|r| r.condition == "type1" || r.condition == "type2").collect();
    let independents = by("independent");

    // 1. Effectiveness.
    let (fnr, fpr) = (error_rate(&surrogates, DEFAULT_CSIM), error_rate(&independents, DEFAULT_CSIM));
    let (bfnr, bfpr) = (error_rate(&surrogates, "basic"), error_rate(&independents, "basic"));
    rep.line(
        1,
        surrogates.len() >= 10 && independents.len() >= 10 && fnr == 0.0 && fpr <= 0.05 && runtime < 7200.0,
        format!(
            "{} surrogates, {} independents; FNR {fnr:.3} FPR {fpr:.3} (basic ablation FNR {bfnr:.3} FPR {bfpr:.3}); stage time {runtime:.0}s",
            surrogates.len(),
            independents.len()
        ),
    );

    // 2. Separation.
    let sf: Vec<f64> = surrogates.iter().map(|r| fraction(r, DEFAULT_CSIM)).collect();
    let inf: Vec<f64> = independents.iter().map(|r| fraction(r, DEFAULT_CSIM)).collect();
    let basic_max = independents.iter().map(|r| fraction(r, "basic")).fold(0.0, f64::max);
    let s_min = sf.iter().cloned().fold(f64::INFINITY, f64::min);
    let i_max = inf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    rep.line(
        2,
        mean(&sf) >= 0.7 && mean(&inf) <= 0.3 && s_min > i_max,
        format!(
            "similar fraction surrogates mean {:.3} min {s_min:.3}; independents mean {:.3} max {i_max:.3} (basic ablation max {basic_max:.3})",
            mean(&sf),
            mean(&inf)
        ),
    );

    // 3. Extraction quality. Surrogates and independents are paired by
    // architecture and index, which share nothing but the slot.
    let type1 = by("type1");
    let fid = mean(&type1.iter().map(|r| r.fidelity).collect::<Vec<_>>());
    let acc = mean(&type1.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let mut pairs = 0;
    let mut ordered = 0;
    let mut worst = String::new();
    for s in &type1 {
        let name = s.model.rsplit('/').next().unwrap();
        let slot = name.trim_start_matches("sur-").replace("-type1", "");
        if let Some(i) = independents.iter().find(|i| i.model.ends_with(&format!("/ind-{slot}"))) {
            pairs += 1;
            if i.fidelity < s.fidelity {
                ordered += 1;
            } else {
                worst = format!("; {slot}: independent {:.3} vs surrogate {:.3}", i.fidelity, s.fidelity);
            }
        }
    }
    rep.line(
        3,
        fid >= 0.85 && (target.accuracy - acc).abs() <= 0.05 && pairs > 0 && ordered == pairs,
        format!(
            "type1 fidelity {fid:.3}, accuracy {acc:.3} vs target {:.3}; independent below surrogate in {ordered}/{pairs} slots{worst}",
            target.accuracy
        ),
    );

    // 4. Double extraction and fine-tuning.
    let (ft, de) = (by("fine-tuned"), by("double-extraction"));
    let (ft_fnr, de_fnr) = (error_rate(&ft, DEFAULT_CSIM), error_rate(&de, DEFAULT_CSIM));
    rep.line(
        4,
        !ft.is_empty() && !de.is_empty() && ft_fnr == 0.0 && de_fnr == 0.0,
        format!(
            "fine-tuned FNR {ft_fnr:.3} (n={}), double-extraction FNR {de_fnr:.3} (n={}); basic ablation {:.3} / {:.3}",
            ft.len(),
            de.len(),
            error_rate(&ft, "basic"),
            error_rate(&de, "basic")
        ),
    );

    // 5. Pruning.
    let mut by_ratio: BTreeMap<String, Vec<&SuspectRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.condition.starts_with("prune-")) {
        by_ratio.entry(r.condition.clone()).or_default().push(r);
    }
    let low: Vec<(&String, &Vec<&SuspectRecord>)> = by_ratio
        .iter()
        .filter(|(c, _)| c.trim_start_matches("prune-").parse::<f64>().unwrap() <= 0.4 + 1e-9)
        .collect();
    let basic_max = low.iter().map(|(_, v)| error_rate(v, "basic")).fold(0.0, f64::max);
    let robust_max = low.iter().map(|(_, v)| error_rate(v, "robust")).fold(0.0, f64::max);
    let unpruned = mean(&surrogates.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let at_04 = mean(&by_ratio["prune-0.4"].iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let drop = unpruned - at_04;
    let per_ratio: Vec<String> = low
        .iter()
        .map(|(c, v)| format!("{c} {:.3}/{:.3}", error_rate(v, "basic"), error_rate(v, "robust")))
        .collect();
    rep.line(
        5,
        basic_max > 0.2 && robust_max <= 0.05 && drop <= 0.08,
        format!(
            "FNR basic/robust: {}; accuracy {unpruned:.3} -> {at_04:.3} at 0.4 (drop {:.1} points, {} 5)",
            per_ratio.join(", "),
            100.0 * drop,
            if drop <= 0.05 { "within" } else { "outside" }
        ),
    );
}

fn random_mat(rows: usize, cols: usize, s: u64) -> Mat {
    let mut rng = seed::rng(s);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Largest relative error of one layer's parameter and input gradients for
/// the loss `sum(out * r)`. Denominators are floored at 1e-6, so gradients
/// that are exactly zero are held to an absolute 1e-10 instead of turning
/// round-off into a huge relative error.
fn layer_gradient_error(layer: &GnnLayer, x: &Mat, nbrs: &[Vec<usize>]) -> f64 {
    let (out, cache) = layer.forward_cached(x, nbrs).unwrap();
    let r = random_mat(out.nrows(), out.ncols(), 99);
    let (grads, dx) = layer.backward(&cache, nbrs, &r);
    let loss = |l: &GnnLayer, x: &Mat| (layer_forward(l, x, nbrs).unwrap() * &r).sum();
    let rel = |n: f64, a: f64| (n - a).abs() / (n.abs() + a.abs()).max(1e-6);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = layer.clone();
    for (pi, g) in grads.iter().enumerate() {
        for ((i, j), &a) in g.indexed_iter() {
            let orig = probe.params()[pi][[i, j]];
            probe.params_mut()[pi][[i, j]] = orig + h;
            let up = loss(&probe, x);
            probe.params_mut()[pi][[i, j]] = orig - h;
            let down = loss(&probe, x);
            probe.params_mut()[pi][[i, j]] = orig;
            worst = worst.max(rel((up - down) / (2.0 * h), a));
        }
    }
    let mut xp = x.clone();
    for ((i, j), &a) in dx.indexed_iter() {
        let orig = xp[[i, j]];
        xp[[i, j]] = orig + h;
        let up = loss(layer, &xp);
        xp[[i, j]] = orig - h;
        let down = loss(layer, &xp);
        xp[[i, j]] = orig;
        worst = worst.max(rel((up - down) / (2.0 * h), a));
    }
    worst
}

fn numeric_criterion(rep: &mut Report) {
    // 6-node graph: a triangle, a path and an isolated node.
    let nbrs: Vec<Vec<usize>> = vec![vec![1, 2], vec![0, 2], vec![0, 1, 3], vec![2, 4], vec![3], vec![]];
    let x = random_mat(6, 4, 1);
    let mut grad_errors = Vec::new();
    for arch in Architecture::ALL {
        let heads = if arch == Architecture::Gat { 2 } else { 1 };
        let mut layer = GnnLayer::init(arch, 4, 6, heads, &mut seed::rng(2));
        for p in layer.params_mut() {
            p.mapv_inplace(|v| v + 0.05);
        }
        grad_errors.push((arch, layer_gradient_error(&layer, &x, &nbrs)));
    }
    let grad_ok = grad_errors.iter().all(|(_, e)| *e <= 1e-4);

    let gat = GnnLayer::init(Architecture::Gat, 4, 8, 4, &mut seed::rng(3));
    let mut attn_dev: f64 = 0.0;
    for s in 0..20 {
        let xs = random_mat(12, 4, 100 + s);
        let mut rng = seed::rng(200 + s);
        let lists: Vec<Vec<usize>> = (0..5).map(|_| (0..rng.random_range(1..9)).map(|_| rng.random_range(0..12)).collect()).collect();
        for heads in gat.attention(&xs, &lists).unwrap().unwrap() {
            for coeffs in heads {
                attn_dev = attn_dev.max((coeffs.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }

    let mut perm_dev: f64 = 0.0;
    for arch in [Architecture::GraphSage, Architecture::Gin] {
        let layer = GnnLayer::init(arch, 4, 6, 1, &mut seed::rng(4));
        for s in 0..20 {
            let xs = random_mat(10, 4, 300 + s);
            let mut rng = seed::rng(400 + s);
            let list: Vec<usize> = (0..rng.random_range(0..12)).map(|_| rng.random_range(0..10)).collect();
            let mut shuffled = list.clone();
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            let a = layer_forward(&layer, &xs, &[list]).unwrap();
            let b = layer_forward(&layer, &xs, &[shuffled]).unwrap();
            perm_dev = perm_dev.max((a - b).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v)));
        }
    }

    let mut loss_dev: f64 = 0.0;
    for s in 0..100u64 {
        let mut rng = seed::rng(500 + s);
        let (n, d) = (rng.random_range(1..20), rng.random_range(1..10));
        let (hs, ht) = (random_mat(n, d, 600 + s), random_mat(n, d, 700 + s));
        let oracle = hs.outer_iter().zip(ht.outer_iter()).map(|(a, b)| (&a - &b).mapv(|v| v * v).sum().sqrt()).sum::<f64>() / n as f64;
        loss_dev = loss_dev.max((row_21_loss(&hs, &ht).unwrap() - oracle).abs());
    }

    let grads: Vec<String> = grad_errors.iter().map(|(a, e)| format!("{a} {e:.1e}")).collect();
    rep.line(
        6,
        grad_ok && attn_dev <= 1e-6 && perm_dev <= 1e-6 && loss_dev <= 1e-9,
        format!(
            "gradient rel. error {}; attention row-sum dev {attn_dev:.1e}; permutation dev {perm_dev:.1e}; row-2,1 loss dev {loss_dev:.1e}",
            grads.join(", ")
        ),
    );
}

/// Deployment that rescales the registered model's answers.
struct PostProcessed(LocalOracle);

impl QueryOracle for PostProcessed {
    fn query(&self, graph: &Graph, seed: u64) -> gnnfp::error::Result<Mat> {
        Ok(self.0.query(graph, seed)? * 1.01)
    }
}

fn protocol_dataset() -> GraphDataset {
    generate_synthetic(&SyntheticGraphSpec {
        nodes_per_class: 60,
        num_classes: 2,
        intra_edge_prob: 0.08,
        inter_edge_prob: 0.01,
        feature_dim: 6,
        feature_noise: 0.7,
        seed: 8,
    })
    .unwrap()
}

fn protocol_criterion(rep: &mut Report) {
    let ds = protocol_dataset();
    let all: Vec<usize> = (0..ds.node_count()).collect();
    let (half_a, half_b): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&v| v % 2 == 0);
    let independent = |s: u64, arch: Architecture| {
        let mut cfg = GnnConfig::new(arch).with_hidden_dim(16).with_seed(s);
        cfg.attention_heads = 1;
        cfg.max_epochs = 40;
        train(&cfg, &ds, &half_a).unwrap().0
    };
    let target = {
        let mut cfg = GnnConfig::new(Architecture::GraphSage).with_hidden_dim(16).with_seed(1);
        cfg.max_epochs = 40;
        train(&cfg, &ds, &half_b).unwrap().0
    };
    let attacker = ds.induced(&half_a).unwrap();
    let oracle = LocalOracle::new(target.clone());
    let extract = |s: u64, at: AttackType| {
        let mut cfg = AttackConfig::new(at, Architecture::GraphSage, s);
        cfg.epochs = 60;
        run_extraction(&oracle, &attacker, &cfg).unwrap().model
    };
    let (surrogate, independent_suspect) = (extract(10, AttackType::TypeI), independent(20, Architecture::GraphSage));
    let cohort_s = [extract(11, AttackType::TypeI), extract(12, AttackType::TypeII)];
    let cohort_i = [independent(21, Architecture::GraphSage), independent(22, Architecture::Gin), independent(23, Architecture::Gat)];
    let named = |v: &[GnnModel]| -> Vec<(String, GnnModel)> { v.iter().enumerate().map(|(i, m)| (i.to_string(), m.clone())).collect() };
    let (sn, inn) = (named(&cohort_s), named(&cohort_i));
    let d_v: Vec<usize> = all.iter().copied().step_by(3).collect();
    let ts = build_training_set(
        NamedModel::new("t", &target),
        &sn.iter().map(|(n, m)| NamedModel::new(n, m)).collect::<Vec<_>>(),
        &inn.iter().map(|(n, m)| NamedModel::new(n, m)).collect::<Vec<_>>(),
        ds.graph(),
        &d_v,
        3,
    )
    .unwrap();
    let csim = train_csim(&ts, &CsimConfig::default(), 3).unwrap();

    let mut checks: Vec<(&str, bool)> = Vec::new();
    let mut reg = Registry::in_memory();
    let run = |reg: &mut Registry, t: &GnnModel, s: &GnnModel, deployed: &dyn QueryOracle| {
        let (tb, sb) = (t.to_bytes(), s.to_bytes());
        let a = reg.register(&tb, "owner").unwrap();
        let b = reg.register(&sb, "other").unwrap();
        let d = reg.open_dispute(&a.model_id, &b.model_id, &tb, &sb).unwrap();
        let t_oracle = LocalOracle::new(t.clone());
        let ctx = ResolveContext {
            csim: &csim,
            graph: ds.graph(),
            d_v: &d_v,
            seed: 4,
            target_oracle: &t_oracle,
            suspect_oracle: deployed,
        };
        let mut steps = Vec::new();
        let out = resolve(&d, t, s, &ctx, &mut |st| steps.push(st)).unwrap();
        (out.status, steps)
    };
    let gated = |steps: &[ResolveStep]| !steps.contains(&ResolveStep::Verify);

    // Timestamp order: the later registrant accuses the earlier one.
    let (tb, sb) = (target.to_bytes(), surrogate.to_bytes());
    let early = reg.register(&sb, "thief").unwrap();
    let late = reg.register(&tb, "owner").unwrap();
    let d = reg.open_dispute(&late.model_id, &early.model_id, &tb, &sb).unwrap();
    checks.push(("timestamp", d.status == DisputeStatus::RejectedTimestamp));

    // Commitment mismatch.
    let mut tampered = sb.clone();
    let last = tampered.len() - 1;
    tampered[last] ^= 0x10;
    let a = reg.register(&tb, "owner").unwrap();
    let b = reg.register(&sb, "thief").unwrap();
    let d = reg.open_dispute(&a.model_id, &b.model_id, &tb, &tampered).unwrap();
    checks.push(("commitment", d.status == DisputeStatus::RejectedCommitment));

    // Extra output layer on the suspect.
    let mut odd = surrogate.clone();
    let dim = odd.embedding_dim();
    odd.output_transform = Some(Dense::init(dim, dim, &mut seed::rng(5)));
    let (status, steps) = run(&mut reg, &target, &odd, &LocalOracle::new(odd.clone()));
    checks.push(("non-standard layer", status == DisputeStatus::RejectedMalformed && gated(&steps)));

    // Deployment post-processes the registered surrogate's outputs.
    let (status, steps) = run(&mut reg, &target, &surrogate, &PostProcessed(LocalOracle::new(surrogate.clone())));
    checks.push(("post-processing", status == DisputeStatus::RejectedFidelity && gated(&steps)));

    let (status, steps) = run(&mut reg, &target, &surrogate, &LocalOracle::new(surrogate.clone()));
    checks.push(("verified-surrogate", status == DisputeStatus::VerifiedSurrogate && steps.last() == Some(&ResolveStep::Verify)));
    let (status, _) = run(&mut reg, &target, &independent_suspect, &LocalOracle::new(independent_suspect.clone()));
    checks.push(("verified-independent", status == DisputeStatus::VerifiedIndependent));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    rep.line(
        7,
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} protocol checks with extracted and independent models", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    );
}

fn determinism_criterion(rep: &mut Report) {
    let cfg = |dir: PathBuf| ExperimentConfig {
        dataset: gnnfp::harness::DatasetSpec::Synthetic(SyntheticGraphSpec {
            nodes_per_class: 150,
            ..SyntheticGraphSpec::default()
        }),
        surrogate_suspects: 1,
        independent_suspects: 2,
        hidden_dim: Some(32),
        target_epochs: Some(40),
        attack_epochs: Some(40),
        seed: 3,
        out_dir: dir,
        ..ExperimentConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ta = run_experiment(&cfg(a.path().to_path_buf())).unwrap();
    let tb = run_experiment(&cfg(b.path().to_path_buf())).unwrap();
    let verdicts = |dir: &Path| -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.join("verdicts")];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read_to_string(&p).unwrap());
                }
            }
        }
        out
    };
    let (va, vb) = (verdicts(a.path()), verdicts(b.path()));
    rep.line(
        8,
        ta.rows == tb.rows && va == vb && !va.is_empty(),
        format!(
            "{} table rows and {} verdict files compared across two runs (reduced dataset, 300 nodes); timings excluded",
            ta.rows.len(),
            va.len()
        ),
    );
}

#[test]
fn acceptance() {
    let mut rep = Report { lines: Vec::new() };
    experiment_criteria(&mut rep);
    numeric_criterion(&mut rep);
    protocol_criterion(&mut rep);
    determinism_criterion(&mut rep);
    fs::write(tmp("acceptance.txt"), rep.lines.join("\n") + "\n").unwrap();
    assert_eq!(rep.lines.len(), 8);
}
