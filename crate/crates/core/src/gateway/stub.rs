//! Deterministic in-process backends for offline runs and tests.
//!
//! [`ScriptedBackend`] answers from a per-sample lookup table.
//! [`NoisyBackend`] returns the gold label with a configured accuracy and
//! otherwise a wrong label; each draw is a pure function of
//! `(seed, backend id, sample id)`, so results do not depend on batching,
//! call order, or whether a run was resumed.

use std::collections::HashMap;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::consensus::{LabelSchema, Sample};
use crate::error::{TransportError, TransportErrorKind};
use crate::gateway::wire::{HealthResponse, PredictResponse, RefineRequest, RefineResponse, WirePrediction};
use crate::gateway::Backend;

/// Injected failures. A negative budget fails forever.
#[derive(Debug, Default)]
pub struct Faults {
    predict: AtomicI64,
    refine: AtomicI64,
}

impl Faults {
    fn take(counter: &AtomicI64) -> bool {
        let left = counter.load(Ordering::SeqCst);
        if left < 0 {
            return true;
        }
        if left > 0 {
            counter.fetch_sub(1, Ordering::SeqCst);
            return true;
        }
        false
    }

    pub fn fail_predict(&self, times: i64) {
        self.predict.store(times, Ordering::SeqCst);
    }

    pub fn fail_refine(&self, times: i64) {
        self.refine.store(times, Ordering::SeqCst);
    }

    fn predict_error(&self, id: &str) -> Result<(), TransportError> {
        if Self::take(&self.predict) {
            return Err(TransportError::new(TransportErrorKind::Timeout, format!("{id}: injected predict timeout")));
        }
        Ok(())
    }

    fn refine_error(&self, id: &str) -> Result<(), TransportError> {
        if Self::take(&self.refine) {
            return Err(TransportError::new(TransportErrorKind::Injected, format!("{id}: injected refine failure")));
        }
        Ok(())
    }
}

/// Shared bookkeeping for the stubs.
#[derive(Debug, Default)]
struct StubState {
    version: AtomicU64,
    predict_calls: AtomicU64,
    refine_log: Mutex<Vec<RefineRequest>>,
    faults: Faults,
}

impl StubState {
    /// Synthetic losses that shrink with each version.
    fn refine(&self, id: &str, request: &RefineRequest) -> Result<RefineResponse, TransportError> {
        self.faults.refine_error(id)?;
        if request.samples.is_empty() {
            return Err(TransportError::protocol("refine with no samples"));
        }
        self.refine_log.lock().expect("refine log").push(request.clone());
        let before = self.version.fetch_add(1, Ordering::SeqCst);
        Ok(RefineResponse {
            model_version: before + 1,
            train_loss_before: 1.0 / (before as f64 + 1.0),
            train_loss_after: 1.0 / (before as f64 + 2.0),
        })
    }
}

pub struct ScriptedBackend {
    id: String,
    labels: Vec<String>,
    table: HashMap<String, String>,
    default_label: Option<String>,
    confidence: f64,
    state: StubState,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>, labels: Vec<String>) -> Self {
        Self {
            id: id.into(),
            labels,
            table: HashMap::new(),
            default_label: None,
            confidence: 1.0,
            state: StubState::default(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_table<I, K, V>(mut self, entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        self.table.extend(entries.into_iter().map(|(k, v)| (k.into(), v.into())));
        self
    }

    pub fn with_default(mut self, label: impl Into<String>) -> Self {
        self.default_label = Some(label.into());
        self
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    pub fn set(&mut self, sample_id: impl Into<String>, label: impl Into<String>) {
        self.table.insert(sample_id.into(), label.into());
    }

    pub fn faults(&self) -> &Faults {
        &self.state.faults
    }

    pub fn predict_calls(&self) -> u64 {
        self.state.predict_calls.load(Ordering::SeqCst)
    }

    pub fn refine_requests(&self) -> Vec<RefineRequest> {
        self.state.refine_log.lock().expect("refine log").clone()
    }

    pub fn version(&self) -> u64 {
        self.state.version.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn endpoint(&self) -> String {
        format!("stub://scripted/{}", self.id)
    }

    fn health(&self) -> Result<HealthResponse, TransportError> {
        Ok(HealthResponse {
            status: "ok".into(),
            model_id: self.id.clone(),
            model_version: self.version(),
            labels: self.labels.clone(),
        })
    }

    fn predict(&self, batch: &[Sample]) -> Result<PredictResponse, TransportError> {
        self.state.predict_calls.fetch_add(1, Ordering::SeqCst);
        self.state.faults.predict_error(&self.id)?;
        let predictions = batch
            .iter()
            .map(|s| {
                self.table
                    .get(&s.id)
                    .or(self.default_label.as_ref())
                    .map(|label| WirePrediction {
                        label: label.clone(),
                        confidence: self.confidence,
                    })
                    .ok_or_else(|| TransportError::protocol(format!("{}: no scripted label for `{}`", self.id, s.id)))
            })
            .collect::<Result<_, _>>()?;
        Ok(PredictResponse {
            model_version: self.version(),
            predictions,
        })
    }

    fn refine(&self, request: &RefineRequest) -> Result<RefineResponse, TransportError> {
        self.state.refine(&self.id, request)
    }

    fn restore_version(&self, version: u64) -> Result<(), TransportError> {
        self.state.version.store(version, Ordering::SeqCst);
        Ok(())
    }
}

/// Annotator that is right with probability `accuracy + gain_per_version * version`
/// (capped at 1) on samples carrying a gold label.
pub struct NoisyBackend {
    id: String,
    schema: LabelSchema,
    accuracy: f64,
    gain_per_version: f64,
    seed: u64,
    state: StubState,
}

impl NoisyBackend {
    pub fn new(id: impl Into<String>, schema: LabelSchema, accuracy: f64, seed: u64) -> Self {
        Self {
            id: id.into(),
            schema,
            accuracy: accuracy.clamp(0.0, 1.0),
            gain_per_version: 0.0,
            seed,
            state: StubState::default(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_gain(mut self, gain_per_version: f64) -> Self {
        self.gain_per_version = gain_per_version;
        self
    }

    pub fn faults(&self) -> &Faults {
        &self.state.faults
    }

    pub fn version(&self) -> u64 {
        self.state.version.load(Ordering::SeqCst)
    }

    pub fn effective_accuracy(&self) -> f64 {
        (self.accuracy + self.gain_per_version * self.version() as f64).clamp(0.0, 1.0)
    }

    fn rng_for(&self, sample_id: &str) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(draw_seed(self.seed, &self.id, sample_id))
    }

    fn label_for(&self, sample: &Sample) -> WirePrediction {
        let mut rng = self.rng_for(&sample.id);
        let hit: f64 = rng.gen();
        let pick: f64 = rng.gen();
        let confidence = 0.5 + 0.5 * rng.gen::<f64>();
        let n = self.schema.len();
        let label = match sample.gold_label {
            Some(gold) if hit < self.effective_accuracy() || n == 1 => gold.0,
            Some(gold) => {
                // uniform over the other n-1 labels
                let offset = 1 + ((pick * (n - 1) as f64) as usize).min(n - 2);
                (gold.0 + offset) % n
            }
            None => ((pick * n as f64) as usize).min(n - 1),
        };
        WirePrediction {
            label: self.schema.labels()[label].clone(),
            confidence,
        }
    }
}

/// 32-byte ChaCha seed from the run seed and the two identifiers.
pub fn draw_seed(seed: u64, backend_id: &str, sample_id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((backend_id.len() as u64).to_le_bytes());
    h.update(backend_id.as_bytes());
    h.update(sample_id.as_bytes());
    h.finalize().into()
}

impl Backend for NoisyBackend {
    fn endpoint(&self) -> String {
        format!("stub://noisy/{}", self.id)
    }

    fn health(&self) -> Result<HealthResponse, TransportError> {
        Ok(HealthResponse {
            status: "ok".into(),
            model_id: self.id.clone(),
            model_version: self.version(),
            labels: self.schema.labels().to_vec(),
        })
    }

    fn predict(&self, batch: &[Sample]) -> Result<PredictResponse, TransportError> {
        self.state.predict_calls.fetch_add(1, Ordering::SeqCst);
        self.state.faults.predict_error(&self.id)?;
        Ok(PredictResponse {
            model_version: self.version(),
            predictions: batch.iter().map(|s| self.label_for(s)).collect(),
        })
    }

    fn refine(&self, request: &RefineRequest) -> Result<RefineResponse, TransportError> {
        self.state.refine(&self.id, request)
    }

    fn restore_version(&self, version: u64) -> Result<(), TransportError> {
        self.state.version.store(version, Ordering::SeqCst);
        Ok(())
    }
}
