//! Resolution of hard samples by an LLM, a human, or a human with LLM fallback.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::consensus::{LabelId, LabelSchema, Sample, Vote, VoteOutcome};
use crate::error::{Error, Result};
use crate::meta::llm::LlmSession;
use crate::meta::review::{review_sample, ExpertLabel, Resolver};

pub trait Reviewer: Send + Sync {
    /// Returns the expert label, [`Error::UnresolvedSample`] when the sample
    /// could not be resolved, or another error when reviewing is impossible.
    fn review(&self, sample: &Sample, outcome: &VoteOutcome, schema: &LabelSchema) -> Result<ExpertLabel>;
}

pub struct LlmReviewer {
    session: LlmSession,
    attempts: u32,
}

impl LlmReviewer {
    pub fn new(session: LlmSession, attempts: u32) -> Self {
        Self { session, attempts }
    }
}

impl Reviewer for LlmReviewer {
    fn review(&self, sample: &Sample, _outcome: &VoteOutcome, schema: &LabelSchema) -> Result<ExpertLabel> {
        review_sample(sample, schema, &self.session, self.attempts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueVote {
    pub backend_id: String,
    pub label: Option<String>,
    pub confidence: Option<f64>,
}

/// What a human reviewer is shown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub sample_id: String,
    pub text: String,
    pub votes: Vec<QueueVote>,
    pub uncertainty: f64,
}

impl QueueItem {
    pub fn new(sample: &Sample, outcome: &VoteOutcome, schema: &LabelSchema) -> Self {
        Self {
            sample_id: sample.id.clone(),
            text: sample.text.clone(),
            votes: outcome
                .votes
                .iter()
                .map(|v| match v {
                    Vote::Predicted(p) => QueueVote {
                        backend_id: p.backend_id.clone(),
                        label: Some(schema.name_of(p.label).to_string()),
                        confidence: Some(p.confidence),
                    },
                    Vote::Failed { backend_id, .. } => QueueVote {
                        backend_id: backend_id.clone(),
                        label: None,
                        confidence: None,
                    },
                })
                .collect(),
            uncertainty: outcome.uncertainty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubmitError {
    UnknownItem,
    InvalidLabel,
}

#[derive(Default)]
struct QueueState {
    pending: VecDeque<QueueItem>,
    answers: HashMap<String, LabelId>,
}

/// Hand-off point between the run loop and human reviewers.
pub struct ReviewQueue {
    schema: LabelSchema,
    state: Mutex<QueueState>,
    ready: Condvar,
}

impl ReviewQueue {
    pub fn new(schema: LabelSchema) -> Arc<Self> {
        Arc::new(Self {
            schema,
            state: Mutex::new(QueueState::default()),
            ready: Condvar::new(),
        })
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn peek(&self) -> Option<QueueItem> {
        self.state.lock().expect("review queue").pending.front().cloned()
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("review queue").pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Resolves a queued item with a label from the schema.
    pub fn submit(&self, sample_id: &str, label: &str) -> Result<LabelId, SubmitError> {
        let mut state = self.state.lock().expect("review queue");
        let pos = state
            .pending
            .iter()
            .position(|i| i.sample_id == sample_id)
            .ok_or(SubmitError::UnknownItem)?;
        let label = self.schema.index_of(label).ok_or(SubmitError::InvalidLabel)?;
        state.pending.remove(pos);
        state.answers.insert(sample_id.to_string(), label);
        self.ready.notify_all();
        Ok(label)
    }

    /// Enqueues `item` and blocks until it is answered or `wait` elapses.
    /// On timeout the item is withdrawn.
    pub fn ask(&self, item: QueueItem, wait: Option<Duration>) -> Option<LabelId> {
        let id = item.sample_id.clone();
        let deadline = wait.map(|w| Instant::now() + w);
        let mut state = self.state.lock().expect("review queue");
        state.pending.push_back(item);
        loop {
            if let Some(label) = state.answers.remove(&id) {
                return Some(label);
            }
            match deadline {
                None => state = self.ready.wait(state).expect("review queue"),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        state.pending.retain(|i| i.sample_id != id);
                        return None;
                    }
                    state = self.ready.wait_timeout(state, deadline - now).expect("review queue").0;
                }
            }
        }
    }
}

pub struct HumanReviewer {
    queue: Arc<ReviewQueue>,
    wait: Option<Duration>,
}

impl HumanReviewer {
    pub fn new(queue: Arc<ReviewQueue>, wait: Option<Duration>) -> Self {
        Self { queue, wait }
    }
}

impl Reviewer for HumanReviewer {
    fn review(&self, sample: &Sample, outcome: &VoteOutcome, schema: &LabelSchema) -> Result<ExpertLabel> {
        match self.queue.ask(QueueItem::new(sample, outcome, schema), self.wait) {
            Some(label) => Ok(ExpertLabel {
                sample_id: sample.id.clone(),
                label,
                resolver: Resolver::Human,
                raw_response: schema.name_of(label).to_string(),
                attempts: 1,
            }),
            None => Err(Error::UnresolvedSample {
                sample_id: sample.id.clone(),
                attempts: 1,
                last_response: None,
            }),
        }
    }
}

/// Human first, LLM when the human does not answer in time.
pub struct HumanThenLlm {
    pub human: HumanReviewer,
    pub llm: LlmReviewer,
}

impl Reviewer for HumanThenLlm {
    fn review(&self, sample: &Sample, outcome: &VoteOutcome, schema: &LabelSchema) -> Result<ExpertLabel> {
        match self.human.review(sample, outcome, schema) {
            Err(Error::UnresolvedSample { .. }) => {
                tracing::info!(sample = %sample.id, "no human answer, asking the LLM");
                self.llm.review(sample, outcome, schema)
            }
            other => other,
        }
    }
}

/// A reviewer that answers from a fixed table; unknown samples are unresolved.
pub struct TableReviewer {
    pub answers: HashMap<String, LabelId>,
    pub resolver: Resolver,
}

impl Reviewer for TableReviewer {
    fn review(&self, sample: &Sample, _outcome: &VoteOutcome, schema: &LabelSchema) -> Result<ExpertLabel> {
        match self.answers.get(&sample.id) {
            Some(&label) => Ok(ExpertLabel {
                sample_id: sample.id.clone(),
                label,
                resolver: self.resolver,
                raw_response: schema.name_of(label).to_string(),
                attempts: 1,
            }),
            None => Err(Error::UnresolvedSample {
                sample_id: sample.id.clone(),
                attempts: 1,
                last_response: None,
            }),
        }
    }
}
