use std::ffi::{CStr, CString};
use std::ptr;

use annotator_ffi::*;

fn take(s: *mut std::ffi::c_char) -> String {
    assert!(!s.is_null());
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { ann_string_free(s) };
    out
}

fn last_error() -> String {
    let p = ann_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn sentiment() -> *mut AnnSchema {
    let task = CString::new("sentiment").unwrap();
    let mut schema = ptr::null_mut();
    assert_eq!(unsafe { ann_schema_preset(task.as_ptr(), &mut schema) }, AnnStatus::Ok);
    schema
}

#[test]
fn cost_estimate_matches_cli() {
    let mut out = ptr::null_mut();
    let status = unsafe { ann_estimate_cost(100_000, 1024, 20, 15_000_000, 60_000_000, &mut out) };
    assert_eq!(status, AnnStatus::Ok);
    assert_eq!(take(out), "1656.00");

    let status = unsafe { ann_estimate_cost(-1, 1024, 20, 15_000_000, 60_000_000, &mut out) };
    assert_eq!(status, AnnStatus::InvalidInput);
    assert!(!last_error().is_empty());
}

#[test]
fn schema_handle_round_trip() {
    let task = CString::new("intent").unwrap();
    let labels = [CString::new(" Book ").unwrap(), CString::new("cancel").unwrap()];
    let ptrs: Vec<_> = labels.iter().map(|l| l.as_ptr()).collect();
    let mut schema = ptr::null_mut();
    assert_eq!(unsafe { ann_schema_new(task.as_ptr(), ptrs.as_ptr(), 2, &mut schema) }, AnnStatus::Ok);
    assert_eq!(unsafe { ann_schema_len(schema) }, 2);
    let first = unsafe { CStr::from_ptr(ann_schema_label(schema, 0)) };
    assert_eq!(first.to_str().unwrap(), "book");
    assert!(unsafe { ann_schema_label(schema, 2) }.is_null());
    let mut idx = 9;
    let q = CString::new("CANCEL").unwrap();
    assert_eq!(unsafe { ann_schema_index_of(schema, q.as_ptr(), &mut idx) }, AnnStatus::Ok);
    assert_eq!(idx, 1);
    unsafe { ann_schema_free(schema) };

    let dup = [CString::new("a").unwrap(), CString::new("A").unwrap()];
    let ptrs: Vec<_> = dup.iter().map(|l| l.as_ptr()).collect();
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { ann_schema_new(task.as_ptr(), ptrs.as_ptr(), 2, &mut bad) }, AnnStatus::InvalidInput);
    assert!(bad.is_null());
}

#[test]
fn null_arguments_are_reported() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ann_schema_preset(ptr::null(), &mut out) }, AnnStatus::NullArgument);
    assert!(last_error().contains("task"));
    assert_eq!(unsafe { ann_schema_len(ptr::null()) }, 0);
    unsafe { ann_schema_free(ptr::null_mut()) };
    unsafe { ann_string_free(ptr::null_mut()) };
}

#[test]
fn voting_and_routing() {
    let schema = sentiment();
    let mut r = AnnVoteResult {
        winner: 0,
        winner_count: 0,
        uncertainty: 0.0,
        route: AnnRoute::Direct,
        reason: AnnRouteReason::Consensus,
    };
    let unanimous = [1i64, 1, 1];
    assert_eq!(unsafe { ann_vote(schema, unanimous.as_ptr(), 3, 0.3, &mut r) }, AnnStatus::Ok);
    assert_eq!((r.winner, r.winner_count, r.route), (1, 3, AnnRoute::Direct));
    assert_eq!(r.uncertainty, 0.0);

    let split = [0i64, 0, 2];
    assert_eq!(unsafe { ann_vote(schema, split.as_ptr(), 3, 0.3, &mut r) }, AnnStatus::Ok);
    assert_eq!((r.winner, r.route, r.reason), (0, AnnRoute::Review, AnnRouteReason::Disagreement));
    assert!((r.uncertainty - 1.0 / 3.0).abs() < 1e-12);

    let tie = [0i64, 1, 2];
    assert_eq!(unsafe { ann_vote(schema, tie.as_ptr(), 3, 0.9, &mut r) }, AnnStatus::Ok);
    assert_eq!((r.winner, r.reason), (-1, AnnRouteReason::Tie));

    let failed = [0i64, 0, -1];
    assert_eq!(unsafe { ann_vote(schema, failed.as_ptr(), 3, 0.9, &mut r) }, AnnStatus::Ok);
    assert_eq!((r.winner, r.route, r.reason), (0, AnnRoute::Review, AnnRouteReason::BackendFailure));

    let out_of_range = [0i64, 7, 0];
    assert_eq!(unsafe { ann_vote(schema, out_of_range.as_ptr(), 3, 0.3, &mut r) }, AnnStatus::InvalidInput);
    unsafe { ann_schema_free(schema) };

    let mut u = 0.0;
    let labels = [4usize, 4, 1, 4];
    assert_eq!(unsafe { ann_uncertainty(labels.as_ptr(), 4, &mut u) }, AnnStatus::Ok);
    assert_eq!(u, 0.25);
    assert_eq!(unsafe { ann_uncertainty(labels.as_ptr(), 0, &mut u) }, AnnStatus::InvalidInput);
}

#[test]
fn ledger_handle() {
    let mut ledger = ptr::null_mut();
    assert_eq!(unsafe { ann_ledger_new(&mut ledger) }, AnnStatus::Ok);
    let provider = CString::new("openai").unwrap();
    assert_eq!(unsafe { ann_ledger_set_price(ledger, provider.as_ptr(), 15_000_000, 60_000_000) }, AnnStatus::Ok);
    for _ in 0..3 {
        assert_eq!(
            unsafe { ann_ledger_record(ledger, provider.as_ptr(), ANN_PURPOSE_REVIEW, 1024, 20) },
            AnnStatus::Ok
        );
    }
    assert_eq!(unsafe { ann_ledger_record(ledger, provider.as_ptr(), 9, 1, 1) }, AnnStatus::InvalidInput);
    let mut calls = 0;
    assert_eq!(unsafe { ann_ledger_calls(ledger, ANN_PURPOSE_REVIEW, &mut calls) }, AnnStatus::Ok);
    assert_eq!(calls, 3);
    assert_eq!(unsafe { ann_ledger_calls(ledger, ANN_PURPOSE_SELECTION, &mut calls) }, AnnStatus::Ok);
    assert_eq!(calls, 0);

    // 3 * (1024 * 15 + 20 * 60) micro-dollars
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ann_ledger_total_cost(ledger, &mut out) }, AnnStatus::Ok);
    assert_eq!(take(out), "0.049680");
    assert_eq!(unsafe { ann_ledger_summary_json(ledger, &mut out) }, AnnStatus::Ok);
    let summary: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert!(summary.to_string().contains("openai"));
    unsafe { ann_ledger_free(ledger) };
}

const CONFIG: &str = r#"
[run]
beta = 4
batch_size = 8

[schema]
task = "sentiment"

[[backends]]
id = "a"
kind = "noisy"
accuracy = 0.75
seed = 1

[[backends]]
id = "b"
kind = "noisy"
accuracy = 0.75
seed = 2

[[backends]]
id = "c"
kind = "noisy"
accuracy = 0.75
seed = 3

[llm]
kind = "scripted"
provider = "openai"
script = "gold"

[prices.openai]
input_per_1m_usd = 15
output_per_1m_usd = 60
"#;

fn write_inputs(dir: &std::path::Path) -> (CString, CString) {
    let labels = ["positive", "negative", "neutral"];
    let rows: String = (0..30)
        .map(|i| format!("{{\"id\":\"s{i}\",\"text\":\"text {i}\",\"gold_label\":\"{}\"}}\n", labels[i % 3]))
        .collect();
    std::fs::write(dir.join("in.jsonl"), rows).unwrap();
    std::fs::write(dir.join("run.toml"), CONFIG).unwrap();
    (
        CString::new(dir.join("run.toml").to_str().unwrap()).unwrap(),
        CString::new(dir.join("in.jsonl").to_str().unwrap()).unwrap(),
    )
}

#[test]
fn run_handle_advances_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, input) = write_inputs(tmp.path());
    let out_dir = CString::new(tmp.path().join("run").to_str().unwrap()).unwrap();

    let mut run = ptr::null_mut();
    assert_eq!(unsafe { ann_run_open(cfg.as_ptr(), input.as_ptr(), out_dir.as_ptr(), false, &mut run) }, AnnStatus::Ok);
    assert_eq!(unsafe { ann_run_total(run) }, 30);
    assert_eq!(unsafe { ann_run_advance(run, 12) }, AnnStatus::Ok);
    assert_eq!(unsafe { ann_run_cursor(run) }, 12);
    unsafe { ann_run_free(run) };

    let mut again = ptr::null_mut();
    assert_eq!(
        unsafe { ann_run_open(cfg.as_ptr(), input.as_ptr(), out_dir.as_ptr(), false, &mut again) },
        AnnStatus::Config
    );
    assert_eq!(unsafe { ann_run_open(cfg.as_ptr(), input.as_ptr(), out_dir.as_ptr(), true, &mut run) }, AnnStatus::Ok);
    assert_eq!(unsafe { ann_run_cursor(run) }, 12);
    assert_eq!(unsafe { ann_run_advance(run, 0) }, AnnStatus::Ok);
    assert_eq!(unsafe { ann_run_cursor(run) }, 30);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ann_run_report_json(run, &mut out) }, AnnStatus::Ok);
    let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(report["processed"], 30);
    assert_eq!(report["complete"], true);
    unsafe { ann_run_free(run) };

    let straight_dir = CString::new(tmp.path().join("straight").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { ann_run_open(cfg.as_ptr(), input.as_ptr(), straight_dir.as_ptr(), false, &mut run) },
        AnnStatus::Ok
    );
    assert_eq!(unsafe { ann_run_advance(run, 0) }, AnnStatus::Ok);
    unsafe { ann_run_free(run) };
    let a = std::fs::read(tmp.path().join("run/outputs.jsonl")).unwrap();
    let b = std::fs::read(tmp.path().join("straight/outputs.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resume_without_checkpoint_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, input) = write_inputs(tmp.path());
    let out_dir = CString::new(tmp.path().join("none").to_str().unwrap()).unwrap();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { ann_run_open(cfg.as_ptr(), input.as_ptr(), out_dir.as_ptr(), true, &mut run) }, AnnStatus::Config);
    assert!(run.is_null());
    assert!(last_error().contains("nothing to resume"));
}

#[test]
fn human_mode_needs_the_service() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, input) = write_inputs(tmp.path());
    std::fs::write(tmp.path().join("human.toml"), CONFIG.replace("[run]", "[run]\nreview_mode = \"human\"")).unwrap();
    let cfg = CString::new(tmp.path().join("human.toml").to_str().unwrap()).unwrap();
    let out_dir = CString::new(tmp.path().join("run").to_str().unwrap()).unwrap();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { ann_run_open(cfg.as_ptr(), input.as_ptr(), out_dir.as_ptr(), false, &mut run) }, AnnStatus::Ok);
    assert_eq!(unsafe { ann_run_advance(run, 0) }, AnnStatus::Config);

    let addr = CString::new("127.0.0.1:0").unwrap();
    let mut url = ptr::null_mut();
    assert_eq!(unsafe { ann_run_serve(run, addr.as_ptr(), &mut url) }, AnnStatus::Ok);
    assert!(take(url).starts_with("http://127.0.0.1:"));
    assert_eq!(unsafe { ann_run_serve(run, addr.as_ptr(), ptr::null_mut()) }, AnnStatus::IllegalState);
    unsafe { ann_run_free(run) };
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(ann_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
