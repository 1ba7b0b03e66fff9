//! Run configuration: the knobs of a single run plus the TOML/JSON file that
//! describes schema, backends, the reviewing LLM and prices.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::consensus::{LabelSchema, Sample};
use crate::error::{Error, Result, TransportError};
use crate::gateway::wire::RefineHyperparams;
use crate::gateway::{Backend, BackendSpec, FanoutOptions, HttpBackend, NoisyBackend, Registry, ScriptedBackend};
use crate::ledger::{usd_f64_to_micros, CostLedger, Price};
use crate::meta::llm::{ChatClient, HttpChatClient, LlmEndpointConfig, LlmSession, ScriptedChat};
use crate::meta::selection::{CandidateSources, HubIndex, LocalCatalog, DEFAULT_MAX_CANDIDATES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewMode {
    #[default]
    Llm,
    Human,
    /// Offer each hard sample to a human first and fall back to the LLM when
    /// nobody answers in time.
    HumanOverridesLlm,
}

impl ReviewMode {
    pub fn needs_human(self) -> bool {
        matches!(self, ReviewMode::Human | ReviewMode::HumanOverridesLlm)
    }

    pub fn needs_llm(self) -> bool {
        matches!(self, ReviewMode::Llm | ReviewMode::HumanOverridesLlm)
    }
}

impl FromStr for ReviewMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "llm" => Ok(ReviewMode::Llm),
            "human" => Ok(ReviewMode::Human),
            "human_overrides_llm" | "human+llm" => Ok(ReviewMode::HumanOverridesLlm),
            other => Err(Error::Config(format!("unknown review mode `{other}`"))),
        }
    }
}

impl fmt::Display for ReviewMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReviewMode::Llm => "llm",
            ReviewMode::Human => "human",
            ReviewMode::HumanOverridesLlm => "human_overrides_llm",
        })
    }
}

/// Everything that changes the outcome of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k: usize,
    pub epsilon: f64,
    pub beta: usize,
    pub review_mode: ReviewMode,
    pub batch_size: usize,
    pub seed: u64,
    pub backend_timeout_ms: u64,
    pub backend_retries: u32,
    pub parallelism: usize,
    pub review_attempts: u32,
    pub llm_retries: u32,
    pub llm_backoff_ms: u64,
    /// How long a hard sample waits for a human. Unset means forever in
    /// `human` mode and 30 s in `human_overrides_llm` mode.
    pub human_timeout_ms: Option<u64>,
    /// Extra attempts at a failing refinement cycle before the run pauses.
    pub refine_retries: u32,
    pub refine: RefineHyperparams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 3,
            epsilon: 0.3,
            beta: 2000,
            review_mode: ReviewMode::Llm,
            batch_size: 32,
            seed: 0,
            backend_timeout_ms: 30_000,
            backend_retries: 2,
            parallelism: 8,
            review_attempts: 3,
            llm_retries: 2,
            llm_backoff_ms: 250,
            human_timeout_ms: None,
            refine_retries: 1,
            refine: RefineHyperparams::default(),
        }
    }
}

pub const OVERRIDE_FALLBACK_MS: u64 = 30_000;

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return fail("run.k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail(format!("run.epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if self.beta == 0 {
            return fail("run.beta must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("run.batch_size must be at least 1".into());
        }
        if self.parallelism == 0 {
            return fail("run.parallelism must be at least 1".into());
        }
        if self.review_attempts == 0 {
            return fail("run.review_attempts must be at least 1".into());
        }
        let h = &self.refine;
        if !(h.learning_rate.is_finite() && h.learning_rate >= 0.0) || !(h.weight_decay.is_finite() && h.weight_decay >= 0.0) {
            return fail("run.refine learning_rate and weight_decay must be non-negative".into());
        }
        Ok(())
    }

    /// `None` waits forever.
    pub fn human_wait(&self) -> Option<Duration> {
        match self.review_mode {
            ReviewMode::Human => self.human_timeout_ms.map(Duration::from_millis),
            _ => Some(Duration::from_millis(self.human_timeout_ms.unwrap_or(OVERRIDE_FALLBACK_MS))),
        }
    }

    pub fn fanout_options(&self) -> FanoutOptions {
        FanoutOptions {
            retries: self.backend_retries,
            parallelism: self.parallelism,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub task: String,
    /// Defaults to the built-in label set for `sentiment` and `toxicity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Scripted,
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub id: String,
    pub kind: BackendKind,
    /// Backend-native label -> schema label.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub label_map: BTreeMap<String, String>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,

    /// JSON object file mapping sample id -> label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_labels: Option<Vec<String>>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    Http,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMode {
    /// Answer with the gold label of the sample whose text is being reviewed.
    #[default]
    Gold,
    Fixed,
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub kind: LlmKind,
    #[serde(default = "default_provider")]
    pub provider: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default)]
    pub script: ScriptMode,
    /// Fixed reply, or the fallback when `gold` mode has no gold label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replies: Vec<String>,
}

fn default_provider() -> String {
    "llm".to_string()
}

fn default_model() -> String {
    "scripted".to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceConfig {
    pub input_per_1m_usd: f64,
    pub output_per_1m_usd: f64,
}

impl PriceConfig {
    pub fn to_price(self) -> Result<Price> {
        Ok(Price::from_micros(
            usd_f64_to_micros(self.input_per_1m_usd)?,
            usd_f64_to_micros(self.output_per_1m_usd)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub catalog: Option<PathBuf>,
    pub hub_url: Option<String>,
    pub max_candidates: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            catalog: None,
            hub_url: None,
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }
}

/// The whole config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunConfig,
    pub schema: SchemaConfig,
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmConfig>,
    #[serde(default)]
    pub prices: BTreeMap<String, PriceConfig>,
    #[serde(default)]
    pub selection: SelectionConfig,
    /// Relative paths inside the document resolve against this directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl FileConfig {
    /// Reads a `.toml` or `.json` document and applies `key=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value = parse_document(path, &text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut config: FileConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: FileConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        self.schema()?;
        let mut ids = std::collections::HashSet::new();
        for b in &self.backends {
            if !ids.insert(b.id.as_str()) {
                return Err(Error::Config(format!("backend id `{}` appears twice", b.id)));
            }
            match b.kind {
                BackendKind::Http if b.url.is_none() => {
                    return Err(Error::Config(format!("backend `{}`: http backends need `url`", b.id)))
                }
                BackendKind::Noisy if b.accuracy.is_none() => {
                    return Err(Error::Config(format!("backend `{}`: noisy backends need `accuracy`", b.id)))
                }
                _ => {}
            }
        }
        for (provider, price) in &self.prices {
            price
                .to_price()
                .map_err(|e| Error::Config(format!("price for `{provider}`: {e}")))?;
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn schema(&self) -> Result<LabelSchema> {
        match &self.schema.labels {
            Some(labels) => LabelSchema::new(self.schema.task.clone(), labels.iter().cloned())
                .map_err(|e| Error::Config(format!("schema: {e}"))),
            None => LabelSchema::preset(&self.schema.task).ok_or_else(|| {
                Error::Config(format!(
                    "task `{}` has no built-in labels; set schema.labels",
                    self.schema.task
                ))
            }),
        }
    }

    pub fn ledger(&self) -> Result<CostLedger> {
        let mut prices = BTreeMap::new();
        for (provider, p) in &self.prices {
            prices.insert(provider.clone(), p.to_price()?);
        }
        Ok(CostLedger::with_prices(prices))
    }

    /// Instantiates the first `count` configured backends.
    pub fn backend_clients(&self, schema: &LabelSchema, count: usize, run: &RunConfig) -> Result<Vec<(BackendSpec, Arc<dyn Backend>)>> {
        if self.backends.len() < count {
            return Err(Error::Config(format!(
                "run needs {count} backends but the config lists {}",
                self.backends.len()
            )));
        }
        self.backends[..count]
            .iter()
            .map(|b| {
                let client = self.backend_client(b, schema, run)?;
                let spec = BackendSpec {
                    backend_id: b.id.clone(),
                    label_map: b.label_map.clone(),
                };
                Ok((spec, client))
            })
            .collect()
    }

    fn backend_client(&self, b: &BackendConfig, schema: &LabelSchema, run: &RunConfig) -> Result<Arc<dyn Backend>> {
        Ok(match b.kind {
            BackendKind::Http => Arc::new(HttpBackend::new(
                b.url.clone().expect("validated"),
                Duration::from_millis(b.timeout_ms.unwrap_or(run.backend_timeout_ms)),
            )),
            BackendKind::Scripted => {
                let declared = b.declared_labels.clone().unwrap_or_else(|| schema.labels().to_vec());
                let mut stub = ScriptedBackend::new(b.id.clone(), declared)
                    .with_confidence(b.confidence.unwrap_or(1.0))
                    .with_table(b.labels.clone());
                if let Some(path) = &b.table {
                    stub = stub.with_table(load_label_table(&self.resolve(path))?);
                }
                if let Some(d) = &b.default {
                    stub = stub.with_default(d.clone());
                }
                Arc::new(stub)
            }
            BackendKind::Noisy => Arc::new(
                NoisyBackend::new(
                    b.id.clone(),
                    schema.clone(),
                    b.accuracy.expect("validated"),
                    b.seed.unwrap_or(run.seed),
                )
                .with_gain(b.gain.unwrap_or(0.0)),
            ),
        })
    }

    /// A registry holding the first `run.k` backends, each health-checked.
    pub fn build_registry(&self, schema: &LabelSchema, run: &RunConfig) -> Result<Registry> {
        let mut registry = Registry::new(schema.clone(), run.fanout_options());
        for (spec, client) in self.backend_clients(schema, run.k, run)? {
            registry.register(spec, client)?;
        }
        Ok(registry)
    }

    /// The reviewing LLM, if one is configured. `samples` feeds the `gold`
    /// script mode.
    pub fn build_llm(&self, samples: &[Sample], schema: &LabelSchema, ledger: crate::ledger::SharedLedger) -> Result<Option<LlmSession>> {
        let Some(cfg) = &self.llm else {
            return Ok(None);
        };
        let client: Arc<dyn ChatClient> = match cfg.kind {
            LlmKind::Http => {
                let mut endpoint = match &cfg.base_url {
                    Some(url) => LlmEndpointConfig::new(url.clone(), cfg.model.clone()),
                    None => LlmEndpointConfig::from_env(cfg.model.clone()),
                };
                endpoint.provider = cfg.provider.clone();
                if let Some(env) = &cfg.api_key_env {
                    endpoint.api_key_env = env.clone();
                }
                if let Some(t) = cfg.timeout_ms {
                    endpoint.timeout_ms = t;
                }
                Arc::new(HttpChatClient::new(endpoint))
            }
            LlmKind::Scripted => Arc::new(scripted_chat(cfg, samples, schema)?),
        };
        let session = LlmSession::new(client, cfg.model.clone(), cfg.provider.clone(), ledger)
            .with_retries(self.run.llm_retries)
            .with_backoff(Duration::from_millis(self.run.llm_backoff_ms));
        Ok(Some(session))
    }

    pub fn candidate_sources(&self) -> CandidateSources {
        CandidateSources {
            hub: self.selection.hub_url.as_ref().map(HubIndex::new),
            catalog: self
                .selection
                .catalog
                .as_ref()
                .map(|p| LocalCatalog::new(self.resolve(p))),
        }
    }
}

fn scripted_chat(cfg: &LlmConfig, samples: &[Sample], schema: &LabelSchema) -> Result<ScriptedChat> {
    Ok(match cfg.script {
        ScriptMode::Fixed => ScriptedChat::fixed(
            cfg.reply
                .clone()
                .ok_or_else(|| Error::Config("llm.script = \"fixed\" needs `reply`".into()))?,
        ),
        ScriptMode::Sequence => {
            if cfg.replies.is_empty() {
                return Err(Error::Config("llm.script = \"sequence\" needs `replies`".into()));
            }
            ScriptedChat::sequence(cfg.replies.clone())
        }
        ScriptMode::Gold => {
            let by_text: HashMap<String, String> = samples
                .iter()
                .filter_map(|s| s.gold_label.map(|g| (s.text.clone(), schema.name_of(g).to_string())))
                .collect();
            let fallback = cfg.reply.clone();
            ScriptedChat::from_fn(move |request| {
                by_text
                    .get(request.user_text())
                    .or(fallback.as_ref())
                    .cloned()
                    .ok_or_else(|| TransportError::protocol("scripted reviewer has no answer for this text"))
            })
        }
    })
}

/// A JSON object mapping sample id to label.
pub fn load_label_table(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read label table {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("label table {}: {e}", path.display())))
}

/// Reads a standalone price table (`provider -> {input_per_1m_usd, output_per_1m_usd}`).
pub fn load_price_table(path: &Path) -> Result<BTreeMap<String, Price>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read price table {}: {e}", path.display())))?;
    let raw: BTreeMap<String, PriceConfig> = parse_document(path, &text)?
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    raw.into_iter().map(|(k, v)| Ok((k, v.to_price()?))).collect()
}

fn parse_document(path: &Path, text: &str) -> Result<toml::Value> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let json: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::Value::try_from(json).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }
}

/// Applies one `dotted.key=value` override. The value is read as a TOML
/// literal when it parses as one and as a plain string otherwise.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{assignment}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("override `{key}`: `{part}` is not an index")))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("override `{key}`: index {idx} out of {len}")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("override `{key}`: `{part}` is not a table"))),
        };
    }
    unreachable!("loop returns on the last segment")
}
