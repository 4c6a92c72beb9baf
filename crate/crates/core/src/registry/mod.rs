//! Model registration, commitments and dispute resolution.
//!
//! A dispute moves through fixed gates: commitments must match the registered
//! bytes and the accuser must have registered first (checked when the
//! dispute is opened), then both models must be well-formed and their
//! deployments must answer exactly like the registered bytes. Only then is
//! the fingerprint verdict computed.

mod server;
mod store;

use std::fmt;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use server::{router, serve, ServerState, VerifierContext};
pub use store::{Event, Registry};

use crate::error::{Error, Result};
use crate::extraction::QueryOracle;
use crate::fingerprint::{verify, SimilarityClassifier, Verdict, VerdictRecord};
use crate::gnn::GnnModel;
use crate::graph_data::Graph;
use crate::seed;

/// Number of verification nodes probed by the fidelity check.
pub const FIDELITY_PROBES: usize = 32;
/// Largest absolute difference tolerated between deployed and registered
/// embeddings.
pub const FIDELITY_TOLERANCE: f64 = 1e-6;

/// Hex SHA-256 of serialized model bytes.
pub fn commitment(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryRecord {
    pub model_id: String,
    /// Hex SHA-256 of the registered model file.
    pub commitment: String,
    /// Registration order within this registry, starting at 1.
    pub sequence: u64,
    /// Wall-clock registration time, RFC 3339.
    pub registered_at: String,
    pub owner_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisputeStatus {
    Opened,
    RejectedTimestamp,
    RejectedCommitment,
    RejectedMalformed,
    RejectedFidelity,
    VerifiedSurrogate,
    VerifiedIndependent,
}

impl DisputeStatus {
    pub fn is_terminal(self) -> bool {
        self != DisputeStatus::Opened
    }

    pub fn name(self) -> &'static str {
        match self {
            DisputeStatus::Opened => "opened",
            DisputeStatus::RejectedTimestamp => "rejected-timestamp",
            DisputeStatus::RejectedCommitment => "rejected-commitment",
            DisputeStatus::RejectedMalformed => "rejected-malformed",
            DisputeStatus::RejectedFidelity => "rejected-fidelity",
            DisputeStatus::VerifiedSurrogate => "verified-surrogate",
            DisputeStatus::VerifiedIndependent => "verified-independent",
        }
    }
}

impl fmt::Display for DisputeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WellFormednessReport {
    pub passed: bool,
    pub findings: Vec<(usize, String)>,
}

/// An ownership claim of `accuser_record` (the target) against
/// `responder_record` (the suspect).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispute {
    pub id: String,
    pub accuser_record: RegistryRecord,
    pub responder_record: RegistryRecord,
    pub status: DisputeStatus,
    /// Why the dispute was rejected, if it was.
    pub reason: Option<String>,
    /// Present exactly when the status is `verified-*`.
    pub verdict: Option<VerdictRecord>,
}

impl Dispute {
    fn reject(mut self, status: DisputeStatus, reason: impl Into<String>) -> Self {
        self.status = status;
        self.reason = Some(reason.into());
        self
    }
}

/// Gate reached while resolving a dispute, reported to instrumentation hooks
/// in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolveStep {
    Commitment,
    WellFormedness,
    Fidelity,
    Verify,
}

/// Steps 1 and 2: check both submitted model files against their
/// registrations and that the accuser registered first.
pub fn open_dispute(
    id: impl Into<String>,
    accuser: &RegistryRecord,
    responder: &RegistryRecord,
    target_bytes: &[u8],
    suspect_bytes: &[u8],
) -> Dispute {
    let dispute = Dispute {
        id: id.into(),
        accuser_record: accuser.clone(),
        responder_record: responder.clone(),
        status: DisputeStatus::Opened,
        reason: None,
        verdict: None,
    };
    for (record, bytes, role) in [(accuser, target_bytes, "target"), (responder, suspect_bytes, "suspect")] {
        if commitment(bytes) != record.commitment {
            let reason = format!("commitment mismatch: {role} bytes do not match {}", record.model_id);
            return dispute.reject(DisputeStatus::RejectedCommitment, reason);
        }
    }
    if accuser.sequence >= responder.sequence {
        let reason = format!(
            "accuser registered at #{} but responder at #{}",
            accuser.sequence, responder.sequence
        );
        return dispute.reject(DisputeStatus::RejectedTimestamp, reason);
    }
    dispute
}

/// Passes iff every layer is a stock layer of the configured architecture
/// with consistent shapes and nothing sits between the last layer and the
/// classifier head.
pub fn check_well_formed(model: &GnnModel) -> WellFormednessReport {
    let cfg = &model.config;
    let mut findings = Vec::new();
    if model.layers.len() != cfg.num_layers {
        findings.push((
            model.layers.len(),
            format!("config declares {} layers, model has {}", cfg.num_layers, model.layers.len()),
        ));
    }
    for (i, layer) in model.layers.iter().enumerate() {
        if layer.architecture() != cfg.architecture {
            findings.push((
                i,
                format!("non-standard layer: {} layer in a {} model", layer.architecture(), cfg.architecture),
            ));
        }
        if layer.output_dim() != cfg.hidden_dim {
            findings.push((
                i,
                format!("shape mismatch: {} outputs, config says {}", layer.output_dim(), cfg.hidden_dim),
            ));
        }
    }
    findings.extend(model.shape_findings());
    if model.output_transform.is_some() {
        findings.push((model.layers.len(), "unrecognized output layer".to_string()));
    }
    findings.sort();
    findings.dedup();
    WellFormednessReport {
        passed: findings.is_empty(),
        findings,
    }
}

/// Seeded sample of up to [`FIDELITY_PROBES`] nodes of `d_v`.
pub fn fidelity_probes(d_v: &[usize], seed: u64) -> Vec<usize> {
    let n = FIDELITY_PROBES.min(d_v.len());
    let mut rng = seed::rng(seed::derive_seed(seed, "registry/probes"));
    let mut picked: Vec<usize> = sample(&mut rng, d_v.len(), n).into_iter().map(|i| d_v[i]).collect();
    picked.sort_unstable();
    picked
}

/// Whether the deployment behind `deployed` reproduces `registered`'s
/// embeddings on the probe nodes.
pub fn fidelity_check(
    registered: &GnnModel,
    deployed: &dyn QueryOracle,
    graph: &Graph,
    probe_nodes: &[usize],
    seed: u64,
) -> Result<bool> {
    if probe_nodes.is_empty() {
        return Err(Error::Empty("fidelity probe set".into()));
    }
    let expected = registered.embed(graph, probe_nodes, seed)?;
    let answered = deployed.query(graph, seed)?;
    if answered.nrows() != graph.node_count() || answered.ncols() != expected.ncols() {
        return Ok(false);
    }
    let ok = probe_nodes.iter().zip(expected.outer_iter()).all(|(&v, want)| {
        answered
            .row(v)
            .iter()
            .zip(want)
            .all(|(a, b)| (a - b).abs() <= FIDELITY_TOLERANCE)
    });
    Ok(ok)
}

/// What resolving a dispute needs besides the two models.
pub struct ResolveContext<'a> {
    /// The similarity classifier trained for the accuser's model.
    pub csim: &'a SimilarityClassifier,
    pub graph: &'a Graph,
    pub d_v: &'a [usize],
    pub seed: u64,
    /// Deployments of the accuser's and responder's models.
    pub target_oracle: &'a dyn QueryOracle,
    pub suspect_oracle: &'a dyn QueryOracle,
}

/// Steps 3 to 5. Terminal disputes come back unchanged; otherwise each gate
/// is reported to `hook` before it runs and the first failing gate decides
/// the rejection. The fingerprint runs only after every gate passed.
pub fn resolve(
    dispute: &Dispute,
    target: &GnnModel,
    suspect: &GnnModel,
    ctx: &ResolveContext,
    hook: &mut dyn FnMut(ResolveStep),
) -> Result<Dispute> {
    if dispute.status.is_terminal() {
        return Ok(dispute.clone());
    }
    let d = dispute.clone();
    let (accuser, responder) = (d.accuser_record.clone(), d.responder_record.clone());

    hook(ResolveStep::Commitment);
    for (model, record) in [(target, &accuser), (suspect, &responder)] {
        if commitment(&model.to_bytes()) != record.commitment {
            let reason = format!("commitment mismatch for {}", record.model_id);
            return Ok(d.reject(DisputeStatus::RejectedCommitment, reason));
        }
    }

    hook(ResolveStep::WellFormedness);
    for (model, record) in [(target, &accuser), (suspect, &responder)] {
        let report = check_well_formed(model);
        if !report.passed {
            let detail: Vec<String> = report.findings.iter().map(|(i, m)| format!("layer {i}: {m}")).collect();
            let reason = format!("{} is malformed: {}", record.model_id, detail.join("; "));
            return Ok(d.reject(DisputeStatus::RejectedMalformed, reason));
        }
    }

    hook(ResolveStep::Fidelity);
    let probes = fidelity_probes(ctx.d_v, ctx.seed);
    for (model, oracle, record) in [
        (target, ctx.target_oracle, &accuser),
        (suspect, ctx.suspect_oracle, &responder),
    ] {
        if !fidelity_check(model, oracle, ctx.graph, &probes, ctx.seed)? {
            let reason = format!("deployment of {} does not match its registered model", record.model_id);
            return Ok(d.reject(DisputeStatus::RejectedFidelity, reason));
        }
    }

    hook(ResolveStep::Verify);
    let report = verify(ctx.csim, target, suspect, ctx.graph, ctx.d_v, ctx.seed)?;
    let mut d = d;
    d.status = match report.verdict {
        Verdict::Surrogate => DisputeStatus::VerifiedSurrogate,
        Verdict::Independent => DisputeStatus::VerifiedIndependent,
    };
    d.verdict = Some(VerdictRecord::new(report, target, suspect, ctx.d_v, ctx.seed));
    Ok(d)
}
