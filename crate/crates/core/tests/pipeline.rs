mod common;

use std::path::Path;
use std::sync::Arc;

use annotator_core::consensus::{LabelId, Sample};
use annotator_core::gateway::ScriptedBackend;
use annotator_core::meta::llm::ScriptedChat;
use annotator_core::meta::review::Resolver;
use annotator_core::pipeline::checkpoint;
use annotator_core::pipeline::record::read_records;
use annotator_core::pipeline::reviewer::{HumanReviewer, HumanThenLlm, LlmReviewer, ReviewQueue, TableReviewer};
use annotator_core::pipeline::{run_to_end, JsonlSink, Pipeline, RunState, Source, VecSink};
use annotator_core::refinement::SchedulerState;
use annotator_core::meta::llm::LlmSession;
use annotator_core::Error;

use common::*;

fn every_third(i: usize) -> bool {
    i % 3 == 1
}

fn open(dir: &Path, stubs: &[Arc<ScriptedBackend>], data: &[Sample], beta: usize) -> (Pipeline, JsonlSink) {
    let ledger = ledger();
    let p = Pipeline::new(config(beta), registry(stubs), llm_reviewer(gold_chat(data), ledger.clone()), ledger, data)
        .unwrap()
        .with_checkpoint(dir.join("checkpoint.json"));
    (p, JsonlSink::create(&dir.join("outputs.jsonl")).unwrap())
}

fn reopen(dir: &Path, stubs: &[Arc<ScriptedBackend>], data: &[Sample]) -> (Pipeline, JsonlSink) {
    let state = checkpoint::load(&dir.join("checkpoint.json")).unwrap();
    let sink = JsonlSink::resume(&dir.join("outputs.jsonl"), state.output_bytes).unwrap();
    let ledger = ledger();
    let p = Pipeline::resume(state, registry(stubs), llm_reviewer(gold_chat(data), ledger.clone()), ledger, data)
        .unwrap()
        .with_checkpoint(dir.join("checkpoint.json"));
    (p, sink)
}

fn straight(data: &[Sample], beta: usize) -> (Vec<u8>, RunState) {
    let tmp = tempfile::tempdir().unwrap();
    let stubs = stubs(data, &tables_with_disagreements(data, &every_third));
    let (mut p, mut sink) = open(tmp.path(), &stubs, data, beta);
    p.run(data, &mut sink, None).unwrap();
    drop(sink);
    (std::fs::read(tmp.path().join("outputs.jsonl")).unwrap(), p.into_state())
}

#[test]
fn unanimous_stubs_need_no_review() {
    let data = samples(10);
    let stubs = stubs(&data, &tables_with_disagreements(&data, &|_| false));
    let chat = gold_chat(&data);
    let ledger = ledger();
    let (records, state) = run_to_end(config(5), registry(&stubs), llm_reviewer(chat.clone(), ledger.clone()), ledger, &data).unwrap();
    assert_eq!(records.len(), 10);
    assert!(records.iter().all(|r| r.source == Source::Consensus));
    assert_eq!(chat.request_count(), 0);
    assert_eq!(state.ledger.entries().len(), 0);
}

#[test]
fn records_come_out_in_input_order_once_each() {
    let data = samples(97);
    let stubs = stubs(&data, &tables_with_disagreements(&data, &every_third));
    let ledger = ledger();
    let (records, state) = run_to_end(config(7), registry(&stubs), llm_reviewer(gold_chat(&data), ledger.clone()), ledger, &data).unwrap();
    let ids: Vec<_> = records.iter().map(|r| r.sample_id.as_str()).collect();
    let want: Vec<_> = data.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, want);
    assert_eq!(state.pool.cycles().len(), 32 / 7);
    assert_eq!(state.pool.len(), 32 % 7);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.step, i);
        assert_eq!(r.final_label, LABELS[i % 3]);
    }
}

#[test]
fn fanout_failure_pauses_and_resumes_identically() {
    let data = samples(120);
    let (want, _) = straight(&data, 10);

    let tmp = tempfile::tempdir().unwrap();
    let tables = tables_with_disagreements(&data, &every_third);
    let broken = stubs(&data, &tables);
    let (mut p, mut sink) = open(tmp.path(), &broken, &data, 10);
    p.run(&data, &mut sink, Some(40)).unwrap();
    for s in &broken {
        s.faults().fail_predict(-1);
    }
    match p.run(&data, &mut sink, None) {
        Err(Error::RunPaused { cursor, cause }) => {
            assert_eq!(cursor, 40);
            assert!(matches!(*cause, Error::FanoutFailed(_)));
        }
        other => panic!("expected a pause, got {other:?}"),
    }
    drop((p, sink));
    let saved = checkpoint::load(&tmp.path().join("checkpoint.json")).unwrap();
    assert_eq!(saved.cursor, 40);
    assert!(saved.paused.is_some());

    let healthy = stubs(&data, &tables);
    let (mut p, mut sink) = reopen(tmp.path(), &healthy, &data);
    p.run(&data, &mut sink, None).unwrap();
    drop(sink);
    assert_eq!(std::fs::read(tmp.path().join("outputs.jsonl")).unwrap(), want);
    assert!(p.state().paused.is_none());
}

#[test]
fn refine_failure_pauses_with_pool_intact_and_rolls_back() {
    let data = samples(90);
    let (want, want_state) = straight(&data, 10);

    let tmp = tempfile::tempdir().unwrap();
    let tables = tables_with_disagreements(&data, &every_third);
    let flaky = stubs(&data, &tables);
    flaky[2].faults().fail_refine(-1);
    let (mut p, mut sink) = open(tmp.path(), &flaky, &data, 10);
    let err = p.run(&data, &mut sink, None).unwrap_err();
    assert!(matches!(err, Error::RunPaused { .. }), "{err}");
    let state = p.state().clone();
    assert_eq!(state.pool.state(), SchedulerState::RefinePending);
    assert_eq!(state.pool.len(), 10);
    assert!(state.versions.iter().all(|v| v.model_version == 0));
    // the two healthy backends were refined and then rolled back
    assert_eq!(flaky[0].refine_requests().len(), 2);
    drop((p, sink));

    let healthy = stubs(&data, &tables);
    let (mut p, mut sink) = reopen(tmp.path(), &healthy, &data);
    p.run(&data, &mut sink, None).unwrap();
    drop(sink);
    assert_eq!(std::fs::read(tmp.path().join("outputs.jsonl")).unwrap(), want);
    assert_eq!(p.state().pool.cycles().len(), want_state.pool.cycles().len());
}

#[test]
fn uncommitted_output_is_dropped_on_resume() {
    let data = samples(64);
    let (want, _) = straight(&data, 100);
    let tmp = tempfile::tempdir().unwrap();
    let tables = tables_with_disagreements(&data, &every_third);
    let s = stubs(&data, &tables);
    let (mut p, mut sink) = open(tmp.path(), &s, &data, 100);
    p.run(&data, &mut sink, Some(32)).unwrap();
    drop((p, sink));
    // a crash after writing a partial line
    let out = tmp.path().join("outputs.jsonl");
    let mut bytes = std::fs::read(&out).unwrap();
    bytes.extend_from_slice(b"{\"sample_id\":\"s000");
    std::fs::write(&out, bytes).unwrap();

    let (mut p, mut sink) = reopen(tmp.path(), &stubs(&data, &tables), &data);
    p.run(&data, &mut sink, None).unwrap();
    drop(sink);
    assert_eq!(std::fs::read(&out).unwrap(), want);
    assert_eq!(read_records(&out).unwrap().len(), 64);
}

#[test]
fn truncated_output_is_a_checksum_error() {
    let data = samples(40);
    let tmp = tempfile::tempdir().unwrap();
    let s = stubs(&data, &tables_with_disagreements(&data, &every_third));
    let (mut p, mut sink) = open(tmp.path(), &s, &data, 100);
    p.run(&data, &mut sink, Some(20)).unwrap();
    drop((p, sink));
    let out = tmp.path().join("outputs.jsonl");
    let len = std::fs::metadata(&out).unwrap().len();
    std::fs::OpenOptions::new().write(true).open(&out).unwrap().set_len(len - 5).unwrap();
    let state = checkpoint::load(&tmp.path().join("checkpoint.json")).unwrap();
    assert!(matches!(JsonlSink::resume(&out, state.output_bytes), Err(Error::Checksum(_))));
}

#[test]
fn checkpoint_corruption_and_absence() {
    let data = samples(20);
    let tmp = tempfile::tempdir().unwrap();
    let s = stubs(&data, &tables_with_disagreements(&data, &every_third));
    let (mut p, mut sink) = open(tmp.path(), &s, &data, 100);
    p.run(&data, &mut sink, None).unwrap();
    let path = tmp.path().join("checkpoint.json");
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(&loaded, p.state());

    let text = std::fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("\"cursor\":20", "\"cursor\":19", 1);
    assert_ne!(tampered, text);
    std::fs::write(&path, tampered).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(Error::Checksum(_))));

    std::fs::write(&path, "{not json").unwrap();
    assert!(matches!(checkpoint::load(&path), Err(Error::Checksum(_))));
    assert!(matches!(checkpoint::load(&tmp.path().join("missing.json")), Err(Error::Config(_))));
}

#[test]
fn resume_rejects_a_different_dataset() {
    let data = samples(30);
    let tmp = tempfile::tempdir().unwrap();
    let s = stubs(&data, &tables_with_disagreements(&data, &every_third));
    let (mut p, mut sink) = open(tmp.path(), &s, &data, 100);
    p.run(&data, &mut sink, Some(10)).unwrap();
    drop((p, sink));
    let mut other = samples(30);
    other[29].text = "changed".into();
    let state = checkpoint::load(&tmp.path().join("checkpoint.json")).unwrap();
    let ledger = ledger();
    let err = Pipeline::resume(state, registry(&s), llm_reviewer(gold_chat(&other), ledger.clone()), ledger, &other)
        .err()
        .unwrap();
    assert!(matches!(err, Error::Config(_) | Error::InvalidInput(_)), "{err}");
}

#[test]
fn unparseable_reviews_fall_back_to_the_plurality() {
    let data = samples(6);
    let stubs = stubs(&data, &tables_with_disagreements(&data, &|i| i < 2));
    let ledger = ledger();
    let chat = Arc::new(ScriptedChat::fixed("no idea"));
    let (records, state) = run_to_end(config(100), registry(&stubs), llm_reviewer(chat.clone(), ledger.clone()), ledger, &data).unwrap();
    assert_eq!(records[0].source, Source::UnresolvedFallback);
    assert_eq!(records[0].final_label, "positive");
    assert_eq!(records[1].final_label, "negative");
    assert_eq!(state.counters.unresolved, 2);
    assert_eq!(chat.request_count(), 6);
    assert_eq!(state.ledger.calls(annotator_core::ledger::Purpose::Review), 6);
    assert_eq!(state.pool.len(), 0);
}

#[test]
fn a_failed_backend_sends_samples_to_review() {
    let data = samples(4);
    let s = stubs(&data, &tables_with_disagreements(&data, &|_| false));
    s[1].faults().fail_predict(-1);
    let ledger = ledger();
    let (records, state) = run_to_end(config(100), registry(&s), llm_reviewer(gold_chat(&data), ledger.clone()), ledger, &data).unwrap();
    assert!(records.iter().all(|r| r.source == Source::LlmReview && r.route_reason == annotator_core::consensus::RouteReason::BackendFailure));
    assert!(records[0].votes[1].error.is_some());
    assert_eq!(state.counters.backend_failures, 4);
}

#[test]
fn human_overrides_llm_falls_back_after_the_wait() {
    let data = samples(3);
    let s = stubs(&data, &tables_with_disagreements(&data, &|i| i == 1));
    let ledger = ledger();
    let queue = ReviewQueue::new(annotator_core::consensus::LabelSchema::sentiment());
    let reviewer = Arc::new(HumanThenLlm {
        human: HumanReviewer::new(queue.clone(), Some(std::time::Duration::from_millis(50))),
        llm: LlmReviewer::new(LlmSession::new(gold_chat(&data), "gpt-4", "openai", ledger.clone()), 3),
    });
    let (records, _) = run_to_end(config(100), registry(&s), reviewer, ledger, &data).unwrap();
    assert_eq!(records[1].source, Source::LlmReview);
    assert!(queue.is_empty());
}

#[test]
fn table_reviewer_marks_human_resolution() {
    let data = samples(3);
    let s = stubs(&data, &tables_with_disagreements(&data, &|i| i == 2));
    let reviewer = Arc::new(TableReviewer {
        answers: [("s00002".to_string(), LabelId(1))].into(),
        resolver: Resolver::Human,
    });
    let (records, state) = run_to_end(config(100), registry(&s), reviewer, ledger(), &data).unwrap();
    assert_eq!((records[2].source, records[2].final_label.as_str()), (Source::HumanReview, "negative"));
    assert_eq!(state.counters.reviewed_human, 1);
}

#[test]
fn in_memory_and_file_sinks_agree() {
    let data = samples(50);
    let (file_bytes, _) = straight(&data, 6);
    let s = stubs(&data, &tables_with_disagreements(&data, &every_third));
    let ledger = ledger();
    let mut p = Pipeline::new(config(6), registry(&s), llm_reviewer(gold_chat(&data), ledger.clone()), ledger, &data).unwrap();
    let mut sink = VecSink::new();
    p.run(&data, &mut sink, None).unwrap();
    assert_eq!(sink.to_jsonl().into_bytes(), file_bytes);
}
