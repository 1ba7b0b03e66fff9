use std::fmt;

/// Failure talking to a remote endpoint (specialist backend, chat model, model hub).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub kind: TransportErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportErrorKind {
    Timeout,
    Connect,
    Status(u16),
    Protocol,
    Injected,
}

impl TransportError {
    pub fn new(kind: TransportErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn protocol(message: impl Into<String>) -> Self {
        Self::new(TransportErrorKind::Protocol, message)
    }

    /// Transient failures are worth retrying; protocol violations are not.
    pub fn is_retriable(&self) -> bool {
        match self.kind {
            TransportErrorKind::Timeout | TransportErrorKind::Connect | TransportErrorKind::Injected => true,
            TransportErrorKind::Status(code) => code == 429 || code >= 500,
            TransportErrorKind::Protocol => false,
        }
    }
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TransportErrorKind::Status(code) => write!(f, "HTTP {code}: {}", self.message),
            kind => write!(f, "{kind:?}: {}", self.message),
        }
    }
}

impl std::error::Error for TransportError {}

impl From<ureq::Error> for TransportError {
    fn from(err: ureq::Error) -> Self {
        match err {
            ureq::Error::Status(code, resp) => {
                let body = resp.into_string().unwrap_or_default();
                TransportError::new(TransportErrorKind::Status(code), body)
            }
            ureq::Error::Transport(t) => {
                let message = t.to_string();
                let kind = if message.contains("timed out") || message.contains("Timeout") {
                    TransportErrorKind::Timeout
                } else {
                    TransportErrorKind::Connect
                };
                TransportError::new(kind, message)
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no model source available: {0}")]
    SelectionSourceUnavailable(String),

    #[error("could not parse model ranking: {0}")]
    SelectionParseError(String),

    #[error("need {needed} candidates but only {available} available")]
    InsufficientCandidates { needed: usize, available: usize },

    #[error("template `{template}` is missing values for: {}", missing.join(", "))]
    Template { template: String, missing: Vec<String> },

    #[error("sample `{sample_id}` unresolved after {attempts} attempt(s)")]
    UnresolvedSample {
        sample_id: String,
        attempts: u32,
        last_response: Option<String>,
    },

    #[error("LLM unavailable: {0}")]
    LlmUnavailable(TransportError),

    #[error("backend `{0}` is already registered")]
    DuplicateBackend(String),

    #[error("backend `{backend_id}` declares labels with no schema mapping: {}", labels.join(", "))]
    LabelMap { backend_id: String, labels: Vec<String> },

    #[error("backend `{backend_id}` unreachable: {source}")]
    Backend {
        backend_id: String,
        source: TransportError,
    },

    #[error("every backend failed for this batch: {0}")]
    FanoutFailed(String),

    #[error("refinement failed on backend `{backend_id}`: {reason}")]
    RefineFailed { backend_id: String, reason: String },

    #[error("illegal scheduler state: {0}")]
    IllegalState(String),

    #[error("row {row}: {reason}")]
    Ingest { row: usize, reason: String },

    #[error("checkpoint integrity check failed: {0}")]
    Checksum(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("run paused at sample {cursor}: {cause}")]
    RunPaused { cursor: usize, cause: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
