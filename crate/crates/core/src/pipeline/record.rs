//! Output records and where they are written.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consensus::{LabelSchema, RouteReason, Vote, VoteOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Consensus,
    LlmReview,
    HumanReview,
    UnresolvedFallback,
}

impl Source {
    pub const ALL: [Source; 4] = [
        Source::Consensus,
        Source::LlmReview,
        Source::HumanReview,
        Source::UnresolvedFallback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Source::Consensus => "consensus",
            Source::LlmReview => "llm_review",
            Source::HumanReview => "human_review",
            Source::UnresolvedFallback => "unresolved_fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputVote {
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_version: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One line of the output file. `step` is the sample's position in the
/// dataset and `cycle` the number of refinement cycles completed before it
/// was labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub sample_id: String,
    pub final_label: String,
    pub source: Source,
    pub uncertainty: f64,
    pub route_reason: RouteReason,
    pub votes: Vec<OutputVote>,
    pub step: usize,
    pub cycle: usize,
}

impl OutputRecord {
    pub fn new(outcome: &VoteOutcome, final_label: String, source: Source, schema: &LabelSchema, step: usize, cycle: usize) -> Self {
        let votes = outcome
            .votes
            .iter()
            .map(|v| match v {
                Vote::Predicted(p) => OutputVote {
                    backend_id: p.backend_id.clone(),
                    label: Some(schema.name_of(p.label).to_string()),
                    confidence: Some(p.confidence),
                    model_version: Some(p.model_version),
                    error: None,
                },
                Vote::Failed { backend_id, reason } => OutputVote {
                    backend_id: backend_id.clone(),
                    label: None,
                    confidence: None,
                    model_version: None,
                    error: Some(reason.clone()),
                },
            })
            .collect();
        Self {
            sample_id: outcome.sample_id.clone(),
            final_label,
            source,
            uncertainty: outcome.uncertainty,
            route_reason: outcome.route_reason,
            votes,
            step,
            cycle,
        }
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("record serializes");
        line.push('\n');
        line
    }
}

pub trait RecordSink {
    fn write(&mut self, record: &OutputRecord) -> Result<()>;
    /// Makes everything written so far durable and returns the byte length
    /// of the output, which a checkpoint stores.
    fn commit(&mut self) -> Result<u64>;
}

#[derive(Debug, Default)]
pub struct VecSink {
    pub records: Vec<OutputRecord>,
    bytes: u64,
}

impl VecSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(OutputRecord::to_line).collect()
    }
}

impl RecordSink for VecSink {
    fn write(&mut self, record: &OutputRecord) -> Result<()> {
        self.bytes += record.to_line().len() as u64;
        self.records.push(record.clone());
        Ok(())
    }

    fn commit(&mut self) -> Result<u64> {
        Ok(self.bytes)
    }
}

/// Appends JSONL to a file.
pub struct JsonlSink {
    out: BufWriter<File>,
    bytes: u64,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
            bytes: 0,
        })
    }

    /// Reopens an output file at the length recorded in a checkpoint,
    /// dropping anything written after that checkpoint.
    pub fn resume(path: &Path, committed: u64) -> Result<Self> {
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        let len = file.metadata()?.len();
        if len < committed {
            return Err(Error::Checksum(format!(
                "{} is {len} bytes but the checkpoint recorded {committed}",
                path.display()
            )));
        }
        file.set_len(committed)?;
        file.seek(SeekFrom::Start(committed))?;
        Ok(Self {
            out: BufWriter::new(file),
            bytes: committed,
        })
    }
}

impl RecordSink for JsonlSink {
    fn write(&mut self, record: &OutputRecord) -> Result<()> {
        let line = record.to_line();
        self.out.write_all(line.as_bytes())?;
        self.bytes += line.len() as u64;
        Ok(())
    }

    fn commit(&mut self) -> Result<u64> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(self.bytes)
    }
}

pub fn read_records(path: &Path) -> Result<Vec<OutputRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Ingest {
            row: i + 1,
            reason: format!("bad output record: {e}"),
        })?);
    }
    Ok(out)
}

/// Writes records as CSV: id, label, source, uncertainty, route reason.
pub fn write_csv(path: &Path, records: &[OutputRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    w.write_record(["sample_id", "final_label", "source", "uncertainty", "route_reason"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for r in records {
        let reason = serde_json::to_value(r.route_reason).expect("reason serializes");
        w.write_record([
            r.sample_id.as_str(),
            r.final_label.as_str(),
            r.source.name(),
            &r.uncertainty.to_string(),
            reason.as_str().unwrap_or_default(),
        ])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}
