//! Specialist backends: registration, label mapping, parallel prediction
//! fan-out and all-or-nothing refinement.

pub mod http;
pub mod stub;
pub mod wire;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::consensus::{canonical_label, LabelId, LabelSchema, Prediction, Sample, Vote};
use crate::error::{Error, Result, TransportError};
use wire::{HealthResponse, PredictResponse, RefineHyperparams, RefineRequest, RefineResponse, RefineSample};

pub use http::HttpBackend;
pub use stub::{NoisyBackend, ScriptedBackend};

/// One specialist annotator speaking the backend protocol.
pub trait Backend: Send + Sync {
    fn endpoint(&self) -> String;
    fn health(&self) -> Result<HealthResponse, TransportError>;
    fn predict(&self, batch: &[Sample]) -> Result<PredictResponse, TransportError>;
    fn refine(&self, request: &RefineRequest) -> Result<RefineResponse, TransportError>;
    /// Moves the backend to `version`, used when resuming a run or undoing a
    /// partially applied refinement. Remote workers can only confirm they are
    /// already there.
    fn restore_version(&self, version: u64) -> Result<(), TransportError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub endpoint: String,
    pub declared_labels: Vec<String>,
    pub label_map: BTreeMap<String, LabelId>,
    pub model_version: u64,
    pub healthy: bool,
}

/// What the operator supplies when registering a backend.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub backend_id: String,
    /// Backend-native label -> schema label. Labels absent here must match a
    /// schema label after canonicalization.
    #[serde(default)]
    pub label_map: BTreeMap<String, String>,
}

impl BackendSpec {
    pub fn new(backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            label_map: BTreeMap::new(),
        }
    }

    pub fn map(mut self, native: impl Into<String>, schema_label: impl Into<String>) -> Self {
        self.label_map.insert(native.into(), schema_label.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FanoutOptions {
    /// Extra attempts per backend after the first one fails.
    pub retries: u32,
    /// Maximum backends queried at once.
    pub parallelism: usize,
}

impl Default for FanoutOptions {
    fn default() -> Self {
        Self {
            retries: 2,
            parallelism: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendVersion {
    pub backend_id: String,
    pub model_version: u64,
}

/// Per-backend result of one refinement cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRefinement {
    pub backend_id: String,
    pub version_before: u64,
    pub version_after: u64,
    pub loss_before: f64,
    pub loss_after: f64,
}

struct Entry {
    descriptor: BackendDescriptor,
    client: Arc<dyn Backend>,
    /// schema label index -> label string this backend understands
    native: Vec<Option<String>>,
}

/// Registered backends in registration order. That order fixes the order of
/// votes for every sample.
pub struct Registry {
    schema: LabelSchema,
    entries: Vec<Entry>,
    options: FanoutOptions,
}

impl Registry {
    pub fn new(schema: LabelSchema, options: FanoutOptions) -> Self {
        Self {
            schema,
            entries: Vec::new(),
            options,
        }
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &BackendDescriptor> {
        self.entries.iter().map(|e| &e.descriptor)
    }

    pub fn versions(&self) -> Vec<BackendVersion> {
        self.entries
            .iter()
            .map(|e| BackendVersion {
                backend_id: e.descriptor.backend_id.clone(),
                model_version: e.descriptor.model_version,
            })
            .collect()
    }

    /// Probes the backend and adds it after validating its label set.
    pub fn register(&mut self, spec: BackendSpec, client: Arc<dyn Backend>) -> Result<()> {
        if self.entries.iter().any(|e| e.descriptor.backend_id == spec.backend_id) {
            return Err(Error::DuplicateBackend(spec.backend_id));
        }
        let health = client.health().map_err(|source| Error::Backend {
            backend_id: spec.backend_id.clone(),
            source,
        })?;

        let overrides: BTreeMap<String, &String> =
            spec.label_map.iter().map(|(k, v)| (canonical_label(k), v)).collect();
        let mut label_map = BTreeMap::new();
        let mut unmappable = Vec::new();
        for declared in &health.labels {
            let target = match overrides.get(&canonical_label(declared)) {
                Some(schema_label) => self.schema.index_of(schema_label),
                None => self.schema.index_of(declared),
            };
            match target {
                Some(id) => {
                    label_map.insert(declared.clone(), id);
                }
                None => unmappable.push(declared.clone()),
            }
        }
        if !unmappable.is_empty() || health.labels.is_empty() {
            return Err(Error::LabelMap {
                backend_id: spec.backend_id,
                labels: unmappable,
            });
        }

        let mut native = vec![None; self.schema.len()];
        for declared in &health.labels {
            let slot = &mut native[label_map[declared].0];
            if slot.is_none() {
                *slot = Some(declared.clone());
            }
        }

        tracing::info!(backend = %spec.backend_id, version = health.model_version, "registered backend");
        self.entries.push(Entry {
            descriptor: BackendDescriptor {
                backend_id: spec.backend_id,
                endpoint: client.endpoint(),
                declared_labels: health.labels,
                label_map,
                model_version: health.model_version,
                healthy: true,
            },
            client,
            native,
        });
        Ok(())
    }

    /// Brings every backend to the versions recorded in a checkpoint.
    pub fn restore_versions(&mut self, versions: &[BackendVersion]) -> Result<()> {
        if versions.len() != self.entries.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} backends, registry has {}",
                versions.len(),
                self.entries.len()
            )));
        }
        for (entry, saved) in self.entries.iter_mut().zip(versions) {
            if entry.descriptor.backend_id != saved.backend_id {
                return Err(Error::invalid(format!(
                    "checkpoint backend `{}` does not match registered `{}`",
                    saved.backend_id, entry.descriptor.backend_id
                )));
            }
            if let Err(e) = entry.client.restore_version(saved.model_version) {
                tracing::warn!(backend = %saved.backend_id, error = %e, "backend version differs from checkpoint");
            }
            entry.descriptor.model_version = saved.model_version;
        }
        Ok(())
    }

    /// Predictions from every backend for every sample, in registry order. A
    /// backend that fails all attempts contributes a [`Vote::Failed`] marker
    /// to each sample of the batch.
    pub fn predict_fanout(&mut self, batch: &[Sample]) -> Result<Vec<Vec<Vote>>> {
        if self.entries.is_empty() {
            return Err(Error::invalid("no backends registered"));
        }
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let attempts = self.options.retries + 1;
        let mut results: Vec<Result<Vec<Prediction>, String>> = Vec::with_capacity(self.entries.len());
        let schema = &self.schema;
        for chunk in self.entries.chunks(self.options.parallelism.max(1)) {
            let chunk_results: Vec<_> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|entry| scope.spawn(move || predict_one(entry, schema, batch, attempts)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err("backend worker panicked".to_string())))
                    .collect()
            });
            results.extend(chunk_results);
        }

        for (entry, result) in self.entries.iter_mut().zip(&results) {
            entry.descriptor.healthy = result.is_ok();
        }
        if results.iter().all(Result::is_err) {
            let reasons: Vec<String> = self
                .entries
                .iter()
                .zip(&results)
                .filter_map(|(e, r)| r.as_ref().err().map(|m| format!("{}: {m}", e.descriptor.backend_id)))
                .collect();
            return Err(Error::FanoutFailed(reasons.join("; ")));
        }

        let mut per_sample: Vec<Vec<Vote>> = (0..batch.len()).map(|_| Vec::with_capacity(self.entries.len())).collect();
        for (entry, result) in self.entries.iter().zip(results) {
            match result {
                Ok(predictions) => {
                    for (votes, p) in per_sample.iter_mut().zip(predictions) {
                        votes.push(Vote::Predicted(p));
                    }
                }
                Err(reason) => {
                    for votes in per_sample.iter_mut() {
                        votes.push(Vote::Failed {
                            backend_id: entry.descriptor.backend_id.clone(),
                            reason: reason.clone(),
                        });
                    }
                }
            }
        }
        Ok(per_sample)
    }

    /// Fine-tunes every backend on the same snapshot. Either all backends
    /// advance one version or none does: on any failure the backends that
    /// already succeeded are asked to roll back and the registry is left
    /// unchanged.
    pub fn refine_all(&mut self, snapshot: &[(String, LabelId)], hparams: RefineHyperparams) -> Result<Vec<BackendRefinement>> {
        if snapshot.is_empty() {
            return Err(Error::invalid("refinement snapshot is empty"));
        }
        if let Some((_, bad)) = snapshot.iter().find(|(_, l)| !self.schema.contains(*l)) {
            return Err(Error::invalid(format!("snapshot label {bad} outside schema")));
        }
        let requests: Vec<RefineRequest> = self
            .entries
            .iter()
            .map(|entry| {
                let samples: Vec<RefineSample> = snapshot
                    .iter()
                    .filter_map(|(text, label)| {
                        entry.native[label.0].as_ref().map(|native| RefineSample {
                            text: text.clone(),
                            label: native.clone(),
                        })
                    })
                    .collect();
                if samples.len() < snapshot.len() {
                    tracing::warn!(
                        backend = %entry.descriptor.backend_id,
                        skipped = snapshot.len() - samples.len(),
                        "backend has no native label for some pool samples"
                    );
                }
                RefineRequest { samples, hyperparams: hparams }
            })
            .collect();

        let responses: Vec<Result<RefineResponse, TransportError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .entries
                .iter()
                .zip(&requests)
                .map(|(entry, request)| scope.spawn(move || entry.client.refine(request)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(TransportError::protocol("refine worker panicked")))
                })
                .collect()
        });

        if let Some((failed, err)) = self
            .entries
            .iter()
            .zip(&responses)
            .find_map(|(e, r)| r.as_ref().err().map(|err| (e, err)))
        {
            for (entry, response) in self.entries.iter().zip(&responses) {
                if response.is_ok() {
                    if let Err(e) = entry.client.restore_version(entry.descriptor.model_version) {
                        tracing::warn!(backend = %entry.descriptor.backend_id, error = %e, "could not roll back refined backend");
                    }
                }
            }
            return Err(Error::RefineFailed {
                backend_id: failed.descriptor.backend_id.clone(),
                reason: err.to_string(),
            });
        }

        let mut outcomes = Vec::with_capacity(self.entries.len());
        for (entry, response) in self.entries.iter_mut().zip(responses) {
            let response = response.expect("checked above");
            let before = entry.descriptor.model_version;
            if response.model_version != before + 1 {
                tracing::warn!(
                    backend = %entry.descriptor.backend_id,
                    reported = response.model_version,
                    expected = before + 1,
                    "backend reported an unexpected version after refinement"
                );
            }
            entry.descriptor.model_version = before + 1;
            outcomes.push(BackendRefinement {
                backend_id: entry.descriptor.backend_id.clone(),
                version_before: before,
                version_after: before + 1,
                loss_before: response.train_loss_before,
                loss_after: response.train_loss_after,
            });
        }
        Ok(outcomes)
    }
}

fn predict_one(entry: &Entry, schema: &LabelSchema, batch: &[Sample], attempts: u32) -> Result<Vec<Prediction>, String> {
    let id = &entry.descriptor.backend_id;
    let mut last = String::new();
    for attempt in 1..=attempts {
        match entry.client.predict(batch) {
            Ok(response) => return convert(entry, schema, batch.len(), response),
            Err(e) => {
                tracing::warn!(backend = %id, attempt, error = %e, "predict failed");
                last = e.to_string();
                if !e.is_retriable() {
                    break;
                }
            }
        }
    }
    Err(last)
}

fn convert(entry: &Entry, schema: &LabelSchema, expected: usize, response: PredictResponse) -> Result<Vec<Prediction>, String> {
    if response.predictions.len() != expected {
        return Err(format!(
            "returned {} predictions for {expected} texts",
            response.predictions.len()
        ));
    }
    response
        .predictions
        .into_iter()
        .map(|p| {
            let label = entry
                .descriptor
                .label_map
                .get(&p.label)
                .copied()
                .or_else(|| {
                    entry
                        .descriptor
                        .label_map
                        .iter()
                        .find(|(k, _)| canonical_label(k) == canonical_label(&p.label))
                        .map(|(_, v)| *v)
                })
                .filter(|l| schema.contains(*l))
                .ok_or_else(|| format!("undeclared label `{}`", p.label))?;
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(format!("confidence {} outside [0, 1]", p.confidence));
            }
            Ok(Prediction {
                backend_id: entry.descriptor.backend_id.clone(),
                label,
                confidence: p.confidence,
                model_version: response.model_version,
            })
        })
        .collect()
}
