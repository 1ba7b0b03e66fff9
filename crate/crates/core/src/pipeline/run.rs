//! The annotation loop: fan-out, vote, route, review, pool, refine.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::consensus::{LabelSchema, Route, RouteReason, Sample, VoteOutcome, UNRESOLVED_LABEL};
use crate::error::{Error, Result};
use crate::gateway::{BackendRefinement, BackendVersion, Registry};
use crate::ledger::{CostLedger, SharedLedger};
use crate::meta::Resolver;
use crate::pipeline::checkpoint;
use crate::pipeline::record::{OutputRecord, RecordSink, Source};
use crate::pipeline::reviewer::Reviewer;
use crate::refinement::{HardPool, HardSample, SchedulerState};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub processed: usize,
    pub direct: usize,
    pub reviewed_llm: usize,
    pub reviewed_human: usize,
    pub unresolved: usize,
    pub ties: usize,
    pub disagreements: usize,
    pub backend_failures: usize,
}

impl Counters {
    pub fn reviewed(&self) -> usize {
        self.reviewed_llm + self.reviewed_human + self.unresolved
    }

    fn count(&mut self, reason: RouteReason, source: Source) {
        self.processed += 1;
        match reason {
            RouteReason::Tie => self.ties += 1,
            RouteReason::Disagreement => self.disagreements += 1,
            RouteReason::BackendFailure => self.backend_failures += 1,
            RouteReason::Consensus => {}
        }
        match source {
            Source::Consensus => self.direct += 1,
            Source::LlmReview => self.reviewed_llm += 1,
            Source::HumanReview => self.reviewed_human += 1,
            Source::UnresolvedFallback => self.unresolved += 1,
        }
    }
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub config: RunConfig,
    pub schema: LabelSchema,
    pub dataset_len: usize,
    pub dataset_fingerprint: String,
    /// Index of the next unprocessed sample.
    pub cursor: usize,
    pub versions: Vec<BackendVersion>,
    pub pool: HardPool,
    pub ledger: CostLedger,
    pub counters: Counters,
    /// Byte length of the output file at this checkpoint.
    pub output_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paused: Option<String>,
}

impl RunState {
    pub fn is_complete(&self) -> bool {
        self.cursor == self.dataset_len && self.paused.is_none()
    }
}

pub fn dataset_fingerprint(samples: &[Sample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.id.as_bytes());
        h.update([0]);
        h.update(s.text.as_bytes());
        h.update([0]);
        if let Some(g) = s.gold_label {
            h.update(g.0.to_le_bytes());
        }
        h.update([0xff]);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStatus {
    pub cycle_index: usize,
    pub snapshot_size: usize,
    pub backends: Vec<BackendRefinement>,
    pub wall_time_ms: u64,
}

/// What the status endpoint reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub run_id: String,
    pub review_mode: crate::config::ReviewMode,
    pub scheduler_state: SchedulerState,
    pub cursor: usize,
    pub total: usize,
    pub counters: Counters,
    pub pool_size: usize,
    pub beta: usize,
    pub cycles: Vec<CycleStatus>,
    pub versions: Vec<BackendVersion>,
    pub done: bool,
    pub paused: Option<String>,
}

pub type StatusBoard = Arc<Mutex<StatusSnapshot>>;

pub struct Pipeline {
    registry: Registry,
    reviewer: Arc<dyn Reviewer>,
    ledger: SharedLedger,
    state: RunState,
    checkpoint: Option<PathBuf>,
    status: Option<StatusBoard>,
}

impl Pipeline {
    pub fn new(config: RunConfig, registry: Registry, reviewer: Arc<dyn Reviewer>, ledger: SharedLedger, samples: &[Sample]) -> Result<Self> {
        config.validate()?;
        if registry.len() != config.k {
            return Err(Error::Config(format!(
                "k = {} but {} backends are registered",
                config.k,
                registry.len()
            )));
        }
        let fingerprint = dataset_fingerprint(samples);
        let run_id = {
            let mut h = Sha256::new();
            h.update(serde_json::to_vec(&config)?);
            h.update(fingerprint.as_bytes());
            hex::encode(&h.finalize()[..8])
        };
        let state = RunState {
            run_id,
            schema: registry.schema().clone(),
            dataset_len: samples.len(),
            dataset_fingerprint: fingerprint,
            cursor: 0,
            versions: registry.versions(),
            pool: HardPool::new(config.beta)?,
            ledger: ledger.lock().expect("ledger").clone(),
            counters: Counters::default(),
            output_bytes: 0,
            paused: None,
            config,
        };
        Ok(Self {
            registry,
            reviewer,
            ledger,
            state,
            checkpoint: None,
            status: None,
        })
    }

    /// Continues from a checkpointed state. The dataset, schema and backend
    /// list must match the ones the state was created with.
    pub fn resume(state: RunState, mut registry: Registry, reviewer: Arc<dyn Reviewer>, ledger: SharedLedger, samples: &[Sample]) -> Result<Self> {
        if state.dataset_len != samples.len() || state.dataset_fingerprint != dataset_fingerprint(samples) {
            return Err(Error::Config("input dataset differs from the checkpointed run".into()));
        }
        if &state.schema != registry.schema() {
            return Err(Error::Config("label schema differs from the checkpointed run".into()));
        }
        registry.restore_versions(&state.versions)?;
        *ledger.lock().expect("ledger") = state.ledger.clone();
        Ok(Self {
            registry,
            reviewer,
            ledger,
            state,
            checkpoint: None,
            status: None,
        })
    }

    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint = Some(path.into());
        self
    }

    pub fn status_board(&mut self) -> StatusBoard {
        let board = Arc::new(Mutex::new(self.snapshot()));
        self.status = Some(board.clone());
        board
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn into_state(self) -> RunState {
        self.state
    }

    fn snapshot(&self) -> StatusSnapshot {
        let s = &self.state;
        StatusSnapshot {
            run_id: s.run_id.clone(),
            review_mode: s.config.review_mode,
            scheduler_state: s.pool.state(),
            cursor: s.cursor,
            total: s.dataset_len,
            counters: s.counters,
            pool_size: s.pool.len(),
            beta: s.pool.beta(),
            cycles: s
                .pool
                .cycles()
                .iter()
                .map(|c| CycleStatus {
                    cycle_index: c.cycle_index,
                    snapshot_size: c.snapshot_size,
                    backends: c.backends.clone(),
                    wall_time_ms: c.wall_time_ms,
                })
                .collect(),
            versions: s.versions.clone(),
            done: s.is_complete(),
            paused: s.paused.clone(),
        }
    }

    fn publish(&self, full: bool) {
        let Some(board) = &self.status else { return };
        if full {
            *board.lock().expect("status") = self.snapshot();
            return;
        }
        let mut snap = board.lock().expect("status");
        snap.cursor = self.state.cursor;
        snap.counters = self.state.counters;
        snap.pool_size = self.state.pool.len();
        snap.scheduler_state = self.state.pool.state();
    }

    fn save(&mut self, sink: &mut dyn RecordSink) -> Result<()> {
        self.state.output_bytes = sink.commit()?;
        self.state.ledger = self.ledger.lock().expect("ledger").clone();
        self.state.versions = self.registry.versions();
        if let Some(path) = &self.checkpoint {
            checkpoint::save(path, &self.state)?;
        }
        Ok(())
    }

    fn pause(&mut self, sink: &mut dyn RecordSink, cause: Error) -> Error {
        tracing::error!(cursor = self.state.cursor, error = %cause, "run paused");
        self.state.paused = Some(cause.to_string());
        if let Err(e) = self.save(sink) {
            return e;
        }
        self.publish(true);
        Error::RunPaused {
            cursor: self.state.cursor,
            cause: Box::new(cause),
        }
    }

    /// Runs a pending refinement cycle, retrying up to `refine_retries` times.
    fn refine(&mut self) -> Result<()> {
        let attempts = self.state.config.refine_retries + 1;
        let hparams = self.state.config.refine;
        let mut last = None;
        for attempt in 1..=attempts {
            match self.state.pool.run_cycle(&mut self.registry, hparams) {
                Ok(_) => {
                    self.state.versions = self.registry.versions();
                    self.publish(true);
                    return Ok(());
                }
                Err(e @ Error::RefineFailed { .. }) => {
                    tracing::warn!(attempt, error = %e, "refinement cycle failed");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Processes samples from the cursor onward, stopping early once `limit`
    /// samples in total have been processed. Samples must be the same list
    /// the run was created with.
    pub fn run(&mut self, samples: &[Sample], sink: &mut dyn RecordSink, limit: Option<usize>) -> Result<()> {
        if samples.len() != self.state.dataset_len {
            return Err(Error::invalid("sample list differs from the one the run was created with"));
        }
        self.state.paused = None;
        let stop = limit.map_or(samples.len(), |l| l.min(samples.len()));
        let schema = self.state.schema.clone();
        let k = self.state.config.k;
        let epsilon = self.state.config.epsilon;

        if self.state.pool.state() == SchedulerState::RefinePending {
            if let Err(e) = self.refine() {
                return Err(self.pause(sink, e));
            }
        }

        while self.state.cursor < stop {
            let start = self.state.cursor;
            let end = (start + self.state.config.batch_size).min(stop);
            let batch = &samples[start..end];
            let votes = match self.registry.predict_fanout(batch) {
                Ok(v) => v,
                Err(e @ Error::FanoutFailed(_)) => return Err(self.pause(sink, e)),
                Err(e) => return Err(e),
            };

            for (sample, votes) in batch.iter().zip(votes) {
                let outcome = VoteOutcome::evaluate(sample.id.clone(), votes, k, epsilon, &schema)?;
                let cycle = self.state.pool.cycles().len();
                let step = self.state.cursor;
                let mut hard = None;
                let (label, source) = match outcome.route {
                    Route::Direct => (
                        schema.name_of(outcome.winner.expect("direct route has a winner")).to_string(),
                        Source::Consensus,
                    ),
                    Route::Review => match self.reviewer.review(sample, &outcome, &schema) {
                        Ok(expert) => {
                            let source = match expert.resolver {
                                Resolver::Llm => Source::LlmReview,
                                Resolver::Human => Source::HumanReview,
                            };
                            hard = Some(HardSample {
                                sample_id: sample.id.clone(),
                                text: sample.text.clone(),
                                outcome: outcome.clone(),
                                expert_label: Some(expert.label),
                                resolver: expert.resolver,
                            });
                            (schema.name_of(expert.label).to_string(), source)
                        }
                        Err(Error::UnresolvedSample { attempts, .. }) => {
                            tracing::warn!(sample = %sample.id, attempts, "review unresolved, using fallback label");
                            let label = outcome
                                .winner
                                .map_or(UNRESOLVED_LABEL.to_string(), |w| schema.name_of(w).to_string());
                            (label, Source::UnresolvedFallback)
                        }
                        Err(e) => return Err(self.pause(sink, e)),
                    },
                };
                sink.write(&OutputRecord::new(&outcome, label, source, &schema, step, cycle))?;
                self.state.counters.count(outcome.route_reason, source);
                self.state.cursor += 1;

                let triggered = match hard {
                    Some(h) => self.state.pool.push(h)?.1,
                    None => false,
                };
                self.publish(false);
                if triggered {
                    if let Err(e) = self.refine() {
                        return Err(self.pause(sink, e));
                    }
                    // the rest of this batch was predicted by the old models
                    break;
                }
            }
            self.save(sink)?;
        }
        self.save(sink)?;
        self.publish(true);
        Ok(())
    }
}

/// Runs a whole dataset in memory.
pub fn run_to_end(
    config: RunConfig,
    registry: Registry,
    reviewer: Arc<dyn Reviewer>,
    ledger: SharedLedger,
    samples: &[Sample],
) -> Result<(Vec<OutputRecord>, RunState)> {
    let mut pipeline = Pipeline::new(config, registry, reviewer, ledger, samples)?;
    let mut sink = crate::pipeline::record::VecSink::new();
    pipeline.run(samples, &mut sink, None)?;
    Ok((sink.records, pipeline.into_state()))
}

/// Layout of a run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn outputs(&self) -> PathBuf {
        self.root.join("outputs.jsonl")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }

    pub fn ledger(&self) -> PathBuf {
        self.root.join("ledger.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn exists(path: &Path) -> bool {
        path.join("checkpoint.json").is_file()
    }
}
