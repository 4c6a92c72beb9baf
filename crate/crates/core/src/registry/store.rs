//! Append-only registry state.
//!
//! On disk a registry directory holds `events.jsonl` (the source of truth),
//! `models/<commitment>.gnnfp` and `csim/<model_id>.json` blobs, and
//! `index.json`, a snapshot rewritten after every event and never read back.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{commitment, open_dispute, Dispute, DisputeStatus, RegistryRecord};
use crate::error::{Error, Result};
use crate::fingerprint::SimilarityClassifier;
use crate::gnn::GnnModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Registered { record: RegistryRecord },
    CsimAttached { model_id: String, csim_sha256: String },
    DisputeOpened { dispute: Dispute },
    DisputeResolved { dispute: Dispute },
}

#[derive(Serialize)]
struct Index<'a> {
    records: &'a [RegistryRecord],
    disputes: &'a [Dispute],
    csims: Vec<&'a String>,
}

#[derive(Debug, Default)]
pub struct Registry {
    dir: Option<PathBuf>,
    events: Vec<Event>,
    records: Vec<RegistryRecord>,
    disputes: Vec<Dispute>,
    blobs: HashMap<String, Vec<u8>>,
    csims: HashMap<String, SimilarityClassifier>,
}

impl Registry {
    /// A registry that keeps everything in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a registry directory and replay its event log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join("models"))?;
        fs::create_dir_all(dir.join("csim"))?;
        let mut reg = Self {
            dir: Some(dir.clone()),
            ..Self::default()
        };
        let log = dir.join("events.jsonl");
        if log.exists() {
            for (i, line) in fs::read_to_string(&log)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event =
                    serde_json::from_str(line).map_err(|e| Error::parse(format!("events.jsonl line {}", i + 1), e))?;
                reg.apply(&event)?;
                reg.events.push(event);
            }
        }
        Ok(reg)
    }

    fn apply(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::Registered { record } => {
                if self.dir.is_some() {
                    let bytes = fs::read(self.blob_path(&record.commitment))?;
                    if commitment(&bytes) != record.commitment {
                        return Err(Error::Registry(format!("stored bytes of {} do not match", record.model_id)));
                    }
                    self.blobs.insert(record.commitment.clone(), bytes);
                }
                self.records.push(record.clone());
            }
            Event::CsimAttached { model_id, csim_sha256 } => {
                if let Some(dir) = &self.dir {
                    let text = fs::read_to_string(dir.join("csim").join(format!("{model_id}.json")))?;
                    if commitment(text.as_bytes()) != *csim_sha256 {
                        return Err(Error::Registry(format!("stored classifier of {model_id} does not match")));
                    }
                    self.csims.insert(model_id.clone(), SimilarityClassifier::from_json(&text)?);
                }
            }
            Event::DisputeOpened { dispute } => self.disputes.push(dispute.clone()),
            Event::DisputeResolved { dispute } => {
                let slot = self
                    .disputes
                    .iter_mut()
                    .find(|d| d.id == dispute.id)
                    .ok_or_else(|| Error::NotFound(format!("dispute {}", dispute.id)))?;
                if slot.status.is_terminal() {
                    return Err(Error::Registry(format!("dispute {} is already {}", dispute.id, slot.status)));
                }
                *slot = dispute.clone();
            }
        }
        Ok(())
    }

    fn blob_path(&self, commitment: &str) -> PathBuf {
        self.dir.as_ref().expect("on-disk registry").join("models").join(format!("{commitment}.gnnfp"))
    }

    fn append(&mut self, event: Event) -> Result<()> {
        self.apply(&event)?;
        if let Some(dir) = &self.dir {
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join("events.jsonl"))?;
            writeln!(f, "{}", serde_json::to_string(&event)?)?;
            f.sync_data()?;
            let mut csims: Vec<&String> = self.csims.keys().collect();
            csims.sort();
            let index = Index {
                records: &self.records,
                disputes: &self.disputes,
                csims,
            };
            fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
        }
        self.events.push(event);
        Ok(())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn records(&self) -> &[RegistryRecord] {
        &self.records
    }

    pub fn disputes(&self) -> &[Dispute] {
        &self.disputes
    }

    /// Timestamp a model. The bytes must parse as a model file.
    pub fn register(&mut self, model_bytes: &[u8], owner_id: &str) -> Result<RegistryRecord> {
        GnnModel::from_bytes(model_bytes)?;
        let sequence = self.records.last().map_or(1, |r| r.sequence + 1);
        let record = RegistryRecord {
            model_id: format!("m{sequence}"),
            commitment: commitment(model_bytes),
            sequence,
            registered_at: chrono::Utc::now().to_rfc3339(),
            owner_id: owner_id.to_string(),
        };
        if self.dir.is_some() {
            fs::write(self.blob_path(&record.commitment), model_bytes)?;
        } else {
            self.blobs.insert(record.commitment.clone(), model_bytes.to_vec());
        }
        self.append(Event::Registered { record: record.clone() })?;
        Ok(record)
    }

    pub fn record(&self, model_id: &str) -> Result<&RegistryRecord> {
        self.records
            .iter()
            .find(|r| r.model_id == model_id)
            .ok_or_else(|| Error::NotFound(format!("model {model_id}")))
    }

    pub fn model_bytes(&self, model_id: &str) -> Result<&[u8]> {
        let c = &self.record(model_id)?.commitment;
        Ok(self.blobs.get(c).expect("blob of a registered model"))
    }

    pub fn model(&self, model_id: &str) -> Result<GnnModel> {
        GnnModel::from_bytes(self.model_bytes(model_id)?)
    }

    /// Store the similarity classifier that verifies claims about `model_id`.
    pub fn attach_csim(&mut self, model_id: &str, csim: &SimilarityClassifier) -> Result<()> {
        self.record(model_id)?;
        let text = csim.to_json();
        if let Some(dir) = &self.dir {
            fs::write(dir.join("csim").join(format!("{model_id}.json")), &text)?;
        } else {
            self.csims.insert(model_id.to_string(), csim.clone());
        }
        self.append(Event::CsimAttached {
            model_id: model_id.to_string(),
            csim_sha256: commitment(text.as_bytes()),
        })
    }

    pub fn csim(&self, model_id: &str) -> Result<&SimilarityClassifier> {
        self.csims
            .get(model_id)
            .ok_or_else(|| Error::NotFound(format!("similarity classifier for {model_id}")))
    }

    pub fn open_dispute(
        &mut self,
        accuser_id: &str,
        responder_id: &str,
        target_bytes: &[u8],
        suspect_bytes: &[u8],
    ) -> Result<Dispute> {
        let accuser = self.record(accuser_id)?;
        let responder = self.record(responder_id)?;
        let id = format!("d{}", self.disputes.len() + 1);
        let dispute = open_dispute(id, accuser, responder, target_bytes, suspect_bytes);
        self.append(Event::DisputeOpened { dispute: dispute.clone() })?;
        Ok(dispute)
    }

    pub fn dispute(&self, id: &str) -> Result<&Dispute> {
        self.disputes
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::NotFound(format!("dispute {id}")))
    }

    /// Record the outcome of [`super::resolve`]. Outcomes that leave the
    /// dispute unchanged are not logged.
    pub fn record_resolution(&mut self, dispute: Dispute) -> Result<Dispute> {
        let current = self.dispute(&dispute.id)?;
        if *current == dispute {
            return Ok(dispute);
        }
        if dispute.status == DisputeStatus::Opened {
            return Err(Error::Registry(format!("dispute {} was not resolved", dispute.id)));
        }
        self.append(Event::DisputeResolved { dispute: dispute.clone() })?;
        Ok(dispute)
    }
}
