use std::time::Duration;

use crate::consensus::Sample;
use crate::error::{TransportError, TransportErrorKind};
use crate::gateway::wire::{HealthResponse, PredictRequest, PredictResponse, RefineRequest, RefineResponse};
use crate::gateway::Backend;

/// A specialist worker reachable over the HTTP protocol.
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
    refine_agent: ureq::Agent,
}

impl HttpBackend {
    /// `timeout` bounds health and predict calls. Refinement trains a model
    /// and gets a longer budget.
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            refine_agent: ureq::AgentBuilder::new().timeout(timeout.max(Duration::from_secs(3600))).build(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url)
    }
}

fn decode<T: serde::de::DeserializeOwned>(resp: ureq::Response) -> Result<T, TransportError> {
    resp.into_json()
        .map_err(|e| TransportError::protocol(format!("malformed response body: {e}")))
}

impl Backend for HttpBackend {
    fn endpoint(&self) -> String {
        self.base_url.clone()
    }

    fn health(&self) -> Result<HealthResponse, TransportError> {
        let health: HealthResponse = decode(self.agent.get(&self.url("/v1/health")).call()?)?;
        if health.status != "ok" {
            return Err(TransportError::new(
                TransportErrorKind::Status(503),
                format!("worker reports status `{}`", health.status),
            ));
        }
        Ok(health)
    }

    fn predict(&self, batch: &[Sample]) -> Result<PredictResponse, TransportError> {
        let body = PredictRequest {
            texts: batch.iter().map(|s| s.text.clone()).collect(),
        };
        decode(self.agent.post(&self.url("/v1/predict")).send_json(&body)?)
    }

    fn refine(&self, request: &RefineRequest) -> Result<RefineResponse, TransportError> {
        decode(self.refine_agent.post(&self.url("/v1/refine")).send_json(request)?)
    }

    fn restore_version(&self, version: u64) -> Result<(), TransportError> {
        let health = self.health()?;
        if health.model_version == version {
            Ok(())
        } else {
            Err(TransportError::protocol(format!(
                "worker is at version {}, cannot move it to {version}",
                health.model_version
            )))
        }
    }
}
