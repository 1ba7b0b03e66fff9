//! A run bound to a run directory: config, dataset, reviewer, sink and
//! checkpoint wired together the way `annotator annotate` uses them.

use std::path::Path;
use std::sync::Arc;

use serde_json::json;

use crate::config::{FileConfig, ReviewMode, RunConfig};
use crate::consensus::{LabelSchema, Sample};
use crate::error::{Error, Result};
use crate::ledger::SharedLedger;
use crate::meta::llm::LlmSession;
use crate::pipeline::checkpoint;
use crate::pipeline::record::{read_records, JsonlSink};
use crate::pipeline::report::{gold_map, Report};
use crate::pipeline::reviewer::{HumanReviewer, HumanThenLlm, LlmReviewer, ReviewQueue, Reviewer};
use crate::pipeline::run::{Pipeline, RunDir, RunState, StatusBoard};
use crate::pipeline::service::ServiceState;

pub type ReviewerParts = (Arc<dyn Reviewer>, Option<Arc<ReviewQueue>>);

/// The reviewer for `run.review_mode`, plus the queue human answers arrive on.
pub fn build_reviewer(run: &RunConfig, schema: &LabelSchema, llm: Option<LlmSession>) -> Result<ReviewerParts> {
    let llm_reviewer = |llm: Option<LlmSession>| -> Result<LlmReviewer> {
        let session = llm.ok_or_else(|| Error::Config(format!("review_mode = \"{}\" needs an [llm] section", run.review_mode)))?;
        Ok(LlmReviewer::new(session, run.review_attempts))
    };
    Ok(match run.review_mode {
        ReviewMode::Llm => (Arc::new(llm_reviewer(llm)?), None),
        ReviewMode::Human => {
            let queue = ReviewQueue::new(schema.clone());
            (Arc::new(HumanReviewer::new(queue.clone(), run.human_wait())), Some(queue))
        }
        ReviewMode::HumanOverridesLlm => {
            let queue = ReviewQueue::new(schema.clone());
            let reviewer = HumanThenLlm {
                human: HumanReviewer::new(queue.clone(), run.human_wait()),
                llm: llm_reviewer(llm)?,
            };
            (Arc::new(reviewer), Some(queue))
        }
    })
}

pub struct Job {
    pub dir: RunDir,
    pub schema: LabelSchema,
    pub samples: Vec<Sample>,
    pub ledger: SharedLedger,
    pub queue: Option<Arc<ReviewQueue>>,
    pipeline: Pipeline,
    sink: Option<JsonlSink>,
}

impl Job {
    /// Starts a fresh run in `out_dir`, or continues the one checkpointed
    /// there when `resume` is set. A fresh start refuses a directory that
    /// already holds a run; a resume refuses changed run settings.
    pub fn open(cfg: &FileConfig, samples: Vec<Sample>, out_dir: &Path, resume: bool) -> Result<Self> {
        let schema = cfg.schema()?;
        let dir = RunDir::new(out_dir);
        let previous = if resume {
            if !RunDir::exists(&dir.root) {
                return Err(Error::Config(format!("nothing to resume in {}", dir.root.display())));
            }
            let state = checkpoint::load(&dir.checkpoint())?;
            if state.config != cfg.run {
                return Err(Error::Config("run settings differ from the checkpointed run".into()));
            }
            Some(state)
        } else {
            if RunDir::exists(&dir.root) {
                return Err(Error::Config(format!(
                    "{} already holds a run; pass --resume or choose another --out-dir",
                    dir.root.display()
                )));
            }
            std::fs::create_dir_all(&dir.root)?;
            None
        };

        let ledger = cfg.ledger()?.shared();
        let registry = cfg.build_registry(&schema, &cfg.run)?;
        let llm = if cfg.run.review_mode.needs_llm() {
            cfg.build_llm(&samples, &schema, ledger.clone())?
        } else {
            None
        };
        let (reviewer, queue) = build_reviewer(&cfg.run, &schema, llm)?;

        let (pipeline, sink) = match previous {
            Some(state) => {
                let sink = JsonlSink::resume(&dir.outputs(), state.output_bytes)?;
                (Pipeline::resume(state, registry, reviewer, ledger.clone(), &samples)?, sink)
            }
            None => {
                std::fs::write(dir.config(), cfg.to_toml())?;
                let sink = JsonlSink::create(&dir.outputs())?;
                (Pipeline::new(cfg.run.clone(), registry, reviewer, ledger.clone(), &samples)?, sink)
            }
        };
        Ok(Self {
            pipeline: pipeline.with_checkpoint(dir.checkpoint()),
            sink: Some(sink),
            dir,
            schema,
            samples,
            ledger,
            queue,
        })
    }

    pub fn state(&self) -> &RunState {
        self.pipeline.state()
    }

    pub fn status_board(&mut self) -> StatusBoard {
        self.pipeline.status_board()
    }

    /// Everything the HTTP service needs for this run.
    pub fn service_state(&mut self) -> ServiceState {
        ServiceState {
            schema: self.schema.clone(),
            status: self.status_board(),
            ledger: self.ledger.clone(),
            queue: self.queue.clone(),
        }
    }

    /// Processes samples until the dataset (or `limit` samples in total) is
    /// done. Artifacts are refreshed whether or not the run paused.
    pub fn run(&mut self, limit: Option<usize>) -> Result<Report> {
        let sink = self.sink.as_mut().ok_or_else(|| Error::IllegalState("job sink closed".into()))?;
        let outcome = self.pipeline.run(&self.samples, sink, limit);
        let report = self.write_artifacts()?;
        outcome.map(|()| report)
    }

    /// Rebuilds the report from the output file and writes `ledger.json` and
    /// `report.json`.
    pub fn write_artifacts(&self) -> Result<Report> {
        let state = self.pipeline.state();
        let records = read_records(&self.dir.outputs())?;
        let report = Report::build(state, &records, &gold_map(&self.samples, &self.schema));
        let ledger = json!({"ledger": state.ledger, "summary": state.ledger.summary()});
        std::fs::write(self.dir.ledger(), serde_json::to_string_pretty(&ledger)? + "\n")?;
        std::fs::write(self.dir.report(), serde_json::to_string_pretty(&report)? + "\n")?;
        Ok(report)
    }
}
