//! Candidate search over a model index and LLM-ranked top-k selection.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::consensus::LabelSchema;
use crate::error::{Error, Result};
use crate::ledger::Purpose;
use crate::meta::llm::{ChatMessage, LlmSession};
use crate::meta::prompts::{PromptTemplate, MODEL_RANKING};

/// Hub search pre-filter size.
pub const DEFAULT_MAX_CANDIDATES: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub model_id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub downloads: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_count: Option<String>,
    #[serde(default)]
    pub task_tag: String,
}

/// Somewhere candidate models can be looked up.
pub trait ModelIndex {
    fn search(&self, task: &LabelSchema, limit: usize) -> Result<Vec<ModelCandidate>>;
}

/// JSON file holding an array of [`ModelCandidate`]s.
#[derive(Debug, Clone)]
pub struct LocalCatalog {
    path: PathBuf,
}

impl LocalCatalog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn load(path: &Path) -> Result<Vec<ModelCandidate>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::SelectionSourceUnavailable(format!("catalog {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::SelectionSourceUnavailable(format!("catalog {} is malformed: {e}", path.display())))
    }
}

fn matches_task(candidate: &ModelCandidate, task: &str) -> bool {
    let task = task.to_lowercase();
    let tag = candidate.task_tag.to_lowercase();
    // "toxicity" should also match models tagged "toxic"
    let stem = task.trim_end_matches("ity");
    tag == task
        || tag.contains(stem)
        || candidate.description.to_lowercase().contains(stem)
        || candidate.model_id.to_lowercase().contains(stem)
}

impl ModelIndex for LocalCatalog {
    fn search(&self, task: &LabelSchema, _limit: usize) -> Result<Vec<ModelCandidate>> {
        Ok(Self::load(&self.path)?
            .into_iter()
            .filter(|c| matches_task(c, task.task_name()))
            .collect())
    }
}

/// Model hub reachable over HTTP: `GET {base}/api/models?search=..&limit=..`
/// returning objects with `id`/`modelId`, `downloads`, `pipeline_tag`, `tags`.
pub struct HubIndex {
    base_url: String,
    agent: ureq::Agent,
}

impl HubIndex {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(20)).build(),
        }
    }
}

impl ModelIndex for HubIndex {
    fn search(&self, task: &LabelSchema, limit: usize) -> Result<Vec<ModelCandidate>> {
        let url = format!("{}/api/models", self.base_url.trim_end_matches('/'));
        let unavailable = |e: String| Error::SelectionSourceUnavailable(format!("hub {url}: {e}"));
        let body: Value = self
            .agent
            .get(&url)
            .query("search", task.task_name())
            .query("limit", &limit.to_string())
            .call()
            .map_err(|e| unavailable(e.to_string()))?
            .into_json()
            .map_err(|e| unavailable(e.to_string()))?;
        let items = body.as_array().ok_or_else(|| unavailable("expected a JSON array".into()))?;
        Ok(items.iter().filter_map(|item| hub_item(item, task.task_name())).collect())
    }
}

fn hub_item(item: &Value, task: &str) -> Option<ModelCandidate> {
    let id = item.get("id").or_else(|| item.get("modelId"))?.as_str()?.to_string();
    let pipeline = item.get("pipeline_tag").and_then(Value::as_str).unwrap_or("");
    let tags: Vec<&str> = item
        .get("tags")
        .and_then(Value::as_array)
        .map(|t| t.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    let description = item
        .get("description")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| {
            let mut parts = vec![pipeline];
            parts.extend(tags.iter().take(8));
            parts.into_iter().filter(|p| !p.is_empty()).collect::<Vec<_>>().join(", ")
        });
    Some(ModelCandidate {
        model_id: id,
        description,
        downloads: item.get("downloads").and_then(Value::as_u64).unwrap_or(0),
        parameter_count: None,
        task_tag: task.to_string(),
    })
}

/// Tries the hub first, then the local catalog.
#[derive(Default)]
pub struct CandidateSources {
    pub hub: Option<HubIndex>,
    pub catalog: Option<LocalCatalog>,
}

impl ModelIndex for CandidateSources {
    fn search(&self, task: &LabelSchema, limit: usize) -> Result<Vec<ModelCandidate>> {
        let mut last_error = None;
        if let Some(hub) = &self.hub {
            match hub.search(task, limit) {
                Ok(found) => return Ok(found),
                Err(e) => {
                    tracing::warn!(error = %e, "hub search failed, falling back to local catalog");
                    last_error = Some(e);
                }
            }
        }
        if let Some(catalog) = &self.catalog {
            return catalog.search(task, limit);
        }
        Err(last_error.unwrap_or_else(|| Error::SelectionSourceUnavailable("no hub or catalog configured".into())))
    }
}

/// Up to `max_candidates` task-relevant models, deduplicated by id and sorted
/// by downloads (descending, ties by id).
pub fn search_candidates(task: &LabelSchema, index: &dyn ModelIndex, max_candidates: usize) -> Result<Vec<ModelCandidate>> {
    let mut found = index.search(task, max_candidates)?;
    found.retain(|c| !c.model_id.trim().is_empty());
    found.sort_by(|a, b| b.downloads.cmp(&a.downloads).then_with(|| a.model_id.cmp(&b.model_id)));
    let mut seen = HashSet::new();
    found.retain(|c| seen.insert(c.model_id.clone()));
    found.truncate(max_candidates);
    Ok(found)
}

/// Asks the LLM to rank `candidates` for `task` and keeps the top `k`.
/// An unusable ranking is re-requested once before giving up.
pub fn select_models(
    task: &LabelSchema,
    candidates: &[ModelCandidate],
    llm: &LlmSession,
    k: usize,
) -> Result<Vec<ModelCandidate>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if candidates.len() < k {
        return Err(Error::InsufficientCandidates {
            needed: k,
            available: candidates.len(),
        });
    }
    let mut ids = HashSet::new();
    for c in candidates {
        if !ids.insert(c.model_id.as_str()) {
            return Err(Error::invalid(format!("duplicate candidate `{}`", c.model_id)));
        }
    }
    let listing = candidates
        .iter()
        .map(|c| format!("{}: {}", c.model_id, c.description.replace('\n', " ")))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = PromptTemplate::builtin(MODEL_RANKING)
        .expect("ranking template")
        .render_with(&[
            ("task", task.task_name()),
            ("labels", &task.labels().join(", ")),
            ("candidates", &listing),
            ("k", &k.to_string()),
        ])?;

    let mut last = String::new();
    for _ in 0..2 {
        let reply = llm.chat(Purpose::Selection, vec![ChatMessage::user(prompt.clone())])?;
        match parse_ranking(&reply.content, candidates, k) {
            Some(picked) => return Ok(picked),
            None => last = reply.content,
        }
    }
    Err(Error::SelectionParseError(format!(
        "ranking reply did not name {k} known candidates: {:?}",
        truncate(&last, 200)
    )))
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Parses an ordered id list. Every entry must be a known candidate id and at
/// least `k` distinct ids must be named.
fn parse_ranking(reply: &str, candidates: &[ModelCandidate], k: usize) -> Option<Vec<ModelCandidate>> {
    let mut picked: Vec<ModelCandidate> = Vec::new();
    for raw in reply.split(['\n', ',']) {
        let token = clean_token(raw);
        if token.is_empty() {
            continue;
        }
        let candidate = candidates.iter().find(|c| c.model_id == token)?;
        if !picked.iter().any(|p| p.model_id == candidate.model_id) {
            picked.push(candidate.clone());
        }
    }
    if picked.len() < k {
        return None;
    }
    picked.truncate(k);
    Some(picked)
}

fn clean_token(raw: &str) -> &str {
    let mut t = raw.trim();
    // "1." / "2)" / "-" / "*" list markers
    let without_number = t.trim_start_matches(|c: char| c.is_ascii_digit());
    if without_number.len() < t.len() && (without_number.starts_with('.') || without_number.starts_with(')')) {
        t = &without_number[1..];
    }
    t = t.trim_start_matches(['-', '*', ' ']);
    t.trim().trim_matches(|c| matches!(c, '"' | '\'' | '`' | '[' | ']'))
}
