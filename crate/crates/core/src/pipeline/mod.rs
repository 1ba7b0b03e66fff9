//! Ingestion, the annotation loop, checkpoints, reports, sweeps and the HTTP
//! service.

pub mod checkpoint;
pub mod ingest;
pub mod job;
pub mod record;
pub mod report;
pub mod reviewer;
pub mod run;
pub mod service;
pub mod sweep;

pub use ingest::{ingest, Format};
pub use job::{build_reviewer, Job};
pub use record::{JsonlSink, OutputRecord, OutputVote, RecordSink, Source, VecSink};
pub use report::Report;
pub use reviewer::{HumanReviewer, HumanThenLlm, LlmReviewer, QueueItem, ReviewQueue, Reviewer, TableReviewer};
pub use run::{run_to_end, Counters, Pipeline, RunDir, RunState, StatusBoard, StatusSnapshot};
