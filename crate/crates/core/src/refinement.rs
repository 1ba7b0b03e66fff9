//! The hard-sample pool and the refinement scheduler.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::consensus::{LabelId, VoteOutcome};
use crate::error::{Error, Result};
use crate::gateway::wire::RefineHyperparams;
use crate::gateway::{BackendRefinement, Registry};
use crate::meta::Resolver;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerState {
    Annotating,
    RefinePending,
    Refining,
}

/// A reviewed sample waiting to be used for fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardSample {
    pub sample_id: String,
    pub text: String,
    pub outcome: VoteOutcome,
    pub expert_label: Option<LabelId>,
    pub resolver: Resolver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementCycle {
    /// 1-based.
    pub cycle_index: usize,
    pub snapshot_size: usize,
    pub backends: Vec<BackendRefinement>,
    pub sample_ids: Vec<String>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardPool {
    beta: usize,
    live: Vec<HardSample>,
    state: SchedulerState,
    transitions: Vec<SchedulerState>,
    cycles: Vec<RefinementCycle>,
}

impl HardPool {
    pub fn new(beta: usize) -> Result<Self> {
        if beta == 0 {
            return Err(Error::invalid("beta must be at least 1"));
        }
        Ok(Self {
            beta,
            live: Vec::new(),
            state: SchedulerState::Annotating,
            transitions: vec![SchedulerState::Annotating],
            cycles: Vec::new(),
        })
    }

    pub fn beta(&self) -> usize {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn state(&self) -> SchedulerState {
        self.state
    }

    pub fn live(&self) -> &[HardSample] {
        &self.live
    }

    /// Number of samples drained into completed cycles.
    pub fn archived(&self) -> usize {
        self.cycles.iter().map(|c| c.snapshot_size).sum()
    }

    pub fn cycles(&self) -> &[RefinementCycle] {
        &self.cycles
    }

    /// Every state the scheduler has entered, starting with the initial one.
    pub fn transitions(&self) -> &[SchedulerState] {
        &self.transitions
    }

    fn enter(&mut self, next: SchedulerState) {
        self.state = next;
        self.transitions.push(next);
        tracing::debug!(state = ?next, pool = self.live.len(), "scheduler state");
    }

    /// Adds a resolved sample. Returns the new size and whether the pool just
    /// reached `beta`, in which case the scheduler moves to `RefinePending`.
    pub fn push(&mut self, entry: HardSample) -> Result<(usize, bool)> {
        if self.state != SchedulerState::Annotating {
            return Err(Error::IllegalState(format!(
                "cannot add `{}` to the pool while {:?}",
                entry.sample_id, self.state
            )));
        }
        if entry.expert_label.is_none() {
            return Err(Error::invalid(format!(
                "hard sample `{}` has no expert label",
                entry.sample_id
            )));
        }
        self.live.push(entry);
        let trigger = self.live.len() == self.beta;
        if trigger {
            self.enter(SchedulerState::RefinePending);
        }
        Ok((self.live.len(), trigger))
    }

    /// Fine-tunes every backend on the full pool, then drains it into the
    /// cycle record. On failure the pool is left intact and the cycle can be
    /// retried.
    pub fn run_cycle(&mut self, registry: &mut Registry, hparams: RefineHyperparams) -> Result<RefinementCycle> {
        if self.state != SchedulerState::RefinePending {
            return Err(Error::IllegalState(format!("run_cycle called while {:?}", self.state)));
        }
        if self.live.len() != self.beta {
            return Err(Error::IllegalState(format!(
                "pool holds {} samples, expected {}",
                self.live.len(),
                self.beta
            )));
        }
        self.enter(SchedulerState::Refining);
        let snapshot: Vec<(String, LabelId)> = self
            .live
            .iter()
            .map(|h| (h.text.clone(), h.expert_label.expect("checked on push")))
            .collect();
        let started = Instant::now();
        let backends = match registry.refine_all(&snapshot, hparams) {
            Ok(b) => b,
            Err(e) => {
                self.enter(SchedulerState::RefinePending);
                return Err(e);
            }
        };
        let cycle = RefinementCycle {
            cycle_index: self.cycles.len() + 1,
            snapshot_size: snapshot.len(),
            backends,
            sample_ids: self.live.iter().map(|h| h.sample_id.clone()).collect(),
            wall_time_ms: started.elapsed().as_millis() as u64,
        };
        self.live.clear();
        self.cycles.push(cycle.clone());
        self.enter(SchedulerState::Annotating);
        tracing::info!(cycle = cycle.cycle_index, samples = cycle.snapshot_size, "refinement cycle complete");
        Ok(cycle)
    }
}

/// True when `states` is a word of `(Annotating RefinePending Refining)* Annotating`.
pub fn is_legal_transition_log(states: &[SchedulerState]) -> bool {
    use SchedulerState::*;
    let Some((last, cycle_part)) = states.split_last() else {
        return false;
    };
    *last == Annotating
        && cycle_part.len() % 3 == 0
        && cycle_part
            .chunks(3)
            .all(|c| c == [Annotating, RefinePending, Refining])
}
