//! Label schema, samples, and the count-based consensus rules.
//!
//! A sample is labeled by `k` specialist backends. The plurality label wins,
//! the uncertainty is one minus the normalized size of the largest voting
//! block, and the routing rule sends a sample to expert review whenever that
//! uncertainty reaches the threshold `epsilon` or the vote is tied.
//!
//! Everything here is a pure function of its arguments.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a label inside a [`LabelSchema`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub usize);

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Closed, ordered label set for one annotation task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct LabelSchema {
    task_name: String,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    task: String,
    labels: Vec<String>,
}

impl TryFrom<RawSchema> for LabelSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        LabelSchema::new(raw.task, raw.labels)
    }
}

impl From<LabelSchema> for RawSchema {
    fn from(schema: LabelSchema) -> Self {
        RawSchema {
            task: schema.task_name,
            labels: schema.labels,
        }
    }
}

/// Canonical label form: trimmed and lowercased.
pub fn canonical_label(raw: &str) -> String {
    raw.trim().to_lowercase()
}

impl LabelSchema {
    pub fn new<S: Into<String>>(task_name: impl Into<String>, labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let task_name = task_name.into().trim().to_string();
        if task_name.is_empty() {
            return Err(Error::invalid("task name is empty"));
        }
        let labels: Vec<String> = labels.into_iter().map(|l| canonical_label(&l.into())).collect();
        if labels.is_empty() {
            return Err(Error::invalid("label schema has no labels"));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() {
                return Err(Error::invalid("empty label in schema"));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::invalid(format!("duplicate label `{label}` in schema")));
            }
        }
        Ok(Self { task_name, labels })
    }

    /// Three-way sentiment task.
    pub fn sentiment() -> Self {
        Self::new("sentiment", ["positive", "negative", "neutral"]).expect("valid preset")
    }

    /// Binary toxicity task.
    pub fn toxicity() -> Self {
        Self::new("toxicity", ["toxic", "non-toxic"]).expect("valid preset")
    }

    /// Built-in schema for a known task name.
    pub fn preset(task: &str) -> Option<Self> {
        match canonical_label(task).as_str() {
            "sentiment" => Some(Self::sentiment()),
            "toxicity" | "toxic" => Some(Self::toxicity()),
            _ => None,
        }
    }

    pub fn task_name(&self) -> &str {
        &self.task_name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, id: LabelId) -> bool {
        id.0 < self.labels.len()
    }

    /// Looks a label up by its canonical form.
    pub fn index_of(&self, label: &str) -> Option<LabelId> {
        let wanted = canonical_label(label);
        self.labels.iter().position(|l| *l == wanted).map(LabelId)
    }

    pub fn label(&self, id: LabelId) -> Option<&str> {
        self.labels.get(id.0).map(String::as_str)
    }

    pub fn name_of(&self, id: LabelId) -> &str {
        self.label(id).unwrap_or(UNRESOLVED_LABEL)
    }
}

/// Sentinel label for samples nobody could resolve.
pub const UNRESOLVED_LABEL: &str = "unresolved";

/// A unit of text to annotate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<LabelId>,
}

impl Sample {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let text = text.into();
        if id.is_empty() {
            return Err(Error::invalid("sample id is empty"));
        }
        if text.trim().is_empty() {
            return Err(Error::invalid(format!("sample `{id}` has empty text")));
        }
        Ok(Self {
            id,
            text,
            gold_label: None,
        })
    }

    pub fn with_gold(mut self, gold: LabelId) -> Self {
        self.gold_label = Some(gold);
        self
    }
}

/// One backend's label for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub backend_id: String,
    pub label: LabelId,
    pub confidence: f64,
    pub model_version: u64,
}

/// A backend's contribution to a sample's vote: a prediction, or a marker
/// recording that the backend failed to answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Vote {
    Predicted(Prediction),
    Failed { backend_id: String, reason: String },
}

impl Vote {
    pub fn backend_id(&self) -> &str {
        match self {
            Vote::Predicted(p) => &p.backend_id,
            Vote::Failed { backend_id, .. } => backend_id,
        }
    }

    pub fn prediction(&self) -> Option<&Prediction> {
        match self {
            Vote::Predicted(p) => Some(p),
            Vote::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Direct,
    Review,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteReason {
    Consensus,
    Disagreement,
    Tie,
    BackendFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub route: Route,
    pub reason: RouteReason,
}

/// Plurality vote. Returns the unique most frequent label and its count, or
/// `None` for the label when two or more labels share the top count.
pub fn majority_vote(predictions: &[LabelId], schema: &LabelSchema) -> Result<(Option<LabelId>, usize)> {
    if predictions.is_empty() {
        return Err(Error::invalid("majority vote over an empty prediction list"));
    }
    let mut counts = vec![0usize; schema.len()];
    for &label in predictions {
        let slot = counts
            .get_mut(label.0)
            .ok_or_else(|| Error::invalid(format!("label index {label} outside schema of {}", schema.len())))?;
        *slot += 1;
    }
    Ok(plurality(&counts))
}

fn plurality(counts: &[usize]) -> (Option<LabelId>, usize) {
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut leaders = counts.iter().enumerate().filter(|(_, &c)| c == max);
    let first = leaders.next().map(|(i, _)| LabelId(i));
    if leaders.next().is_some() {
        (None, max)
    } else {
        (first, max)
    }
}

/// `1 - max_multiplicity / k` over exactly `k` predictions.
pub fn uncertainty(predictions: &[LabelId], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if predictions.len() != k {
        return Err(Error::invalid(format!(
            "uncertainty needs exactly k={k} predictions, got {}",
            predictions.len()
        )));
    }
    Ok(uncertainty_from_max(max_multiplicity(predictions), k))
}

fn max_multiplicity(labels: &[LabelId]) -> usize {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    sorted
        .chunk_by(|a, b| a == b)
        .map(<[LabelId]>::len)
        .max()
        .unwrap_or(0)
}

fn uncertainty_from_max(max: usize, k: usize) -> f64 {
    1.0 - max as f64 / k as f64
}

/// Direct iff a plurality winner exists and `uncertainty < epsilon`.
pub fn route(uncertainty: f64, winner_present: bool, epsilon: f64) -> RouteDecision {
    if !winner_present {
        RouteDecision {
            route: Route::Review,
            reason: RouteReason::Tie,
        }
    } else if uncertainty >= epsilon {
        RouteDecision {
            route: Route::Review,
            reason: RouteReason::Disagreement,
        }
    } else {
        RouteDecision {
            route: Route::Direct,
            reason: RouteReason::Consensus,
        }
    }
}

/// Votes, plurality, uncertainty and routing for a single sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub sample_id: String,
    pub votes: Vec<Vote>,
    pub winner: Option<LabelId>,
    pub winner_count: usize,
    pub uncertainty: f64,
    pub route: Route,
    pub route_reason: RouteReason,
}

impl VoteOutcome {
    /// Builds the outcome for one sample from the votes of all `k` backends.
    ///
    /// A sample missing any of the `k` predictions is never labeled directly:
    /// it goes to review with [`RouteReason::BackendFailure`]. Its uncertainty
    /// is still computed against `k`, so an incomplete quorum can only look
    /// less certain than a full one.
    pub fn evaluate(
        sample_id: impl Into<String>,
        votes: Vec<Vote>,
        k: usize,
        epsilon: f64,
        schema: &LabelSchema,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if votes.len() != k {
            return Err(Error::invalid(format!(
                "sample `{sample_id}` has {} vote slots, expected {k}",
                votes.len()
            )));
        }
        let labels: Vec<LabelId> = votes.iter().filter_map(Vote::prediction).map(|p| p.label).collect();

        if labels.len() == k {
            let (winner, winner_count) = majority_vote(&labels, schema)?;
            let u = uncertainty(&labels, k)?;
            let decision = route(u, winner.is_some(), epsilon);
            return Ok(Self {
                sample_id,
                votes,
                winner,
                winner_count,
                uncertainty: u,
                route: decision.route,
                route_reason: decision.reason,
            });
        }

        let (winner, winner_count) = if labels.is_empty() {
            (None, 0)
        } else {
            majority_vote(&labels, schema)?
        };
        Ok(Self {
            sample_id,
            votes,
            winner,
            winner_count,
            uncertainty: uncertainty_from_max(winner_count, k),
            route: Route::Review,
            route_reason: RouteReason::BackendFailure,
        })
    }

    pub fn labels(&self) -> Vec<LabelId> {
        self.votes.iter().filter_map(Vote::prediction).map(|p| p.label).collect()
    }
}
