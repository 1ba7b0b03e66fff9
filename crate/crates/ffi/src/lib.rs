//! C ABI over `annotator-core`.
//!
//! Every fallible function returns an [`AnnStatus`]; on anything but
//! `ANN_STATUS_OK` a message is available from [`ann_last_error`] on the same
//! thread. Handles are opaque and released with their `_free` function.
//! Strings handed out through `char **out` are owned by the caller and
//! released with [`ann_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use annotator_core::config::FileConfig;
use annotator_core::consensus::{self, LabelId, LabelSchema, Prediction, Route, RouteReason, Vote, VoteOutcome};
use annotator_core::ledger::{estimate_cost, CostLedger, Price, Purpose};
use annotator_core::pipeline::service::{self, ServiceHandle};
use annotator_core::pipeline::{ingest, Job};
use annotator_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Config = 4,
    Checksum = 5,
    Selection = 6,
    Backend = 7,
    Review = 8,
    RunPaused = 9,
    IllegalState = 10,
    Io = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnRoute {
    Direct = 0,
    Review = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnRouteReason {
    Consensus = 0,
    Disagreement = 1,
    Tie = 2,
    BackendFailure = 3,
}

pub const ANN_PURPOSE_REVIEW: u32 = 0;
pub const ANN_PURPOSE_SELECTION: u32 = 1;

/// Result of voting on one sample.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AnnVoteResult {
    /// Winning label index, or -1 on a tie or when every backend failed.
    pub winner: i64,
    pub winner_count: usize,
    pub uncertainty: f64,
    pub route: AnnRoute,
    pub reason: AnnRouteReason,
}

/// Closed label set of a task.
pub struct AnnSchema {
    schema: LabelSchema,
    names: Vec<CString>,
}

/// Token and call counters with a price table.
pub struct AnnLedger {
    ledger: CostLedger,
}

/// A run bound to a run directory.
pub struct AnnRun {
    job: Job,
    server: Option<ServiceHandle>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', "\\0");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> AnnStatus {
    match err {
        Error::InvalidInput(_)
        | Error::Ingest { .. }
        | Error::Template { .. }
        | Error::LabelMap { .. }
        | Error::DuplicateBackend(_) => AnnStatus::InvalidInput,
        Error::Config(_) => AnnStatus::Config,
        Error::Checksum(_) => AnnStatus::Checksum,
        Error::SelectionSourceUnavailable(_) | Error::SelectionParseError(_) | Error::InsufficientCandidates { .. } => {
            AnnStatus::Selection
        }
        Error::Backend { .. } | Error::FanoutFailed(_) | Error::RefineFailed { .. } => AnnStatus::Backend,
        Error::UnresolvedSample { .. } | Error::LlmUnavailable(_) => AnnStatus::Review,
        Error::RunPaused { .. } => AnnStatus::RunPaused,
        Error::IllegalState(_) => AnnStatus::IllegalState,
        Error::Io(_) | Error::Json(_) => AnnStatus::Io,
    }
}

struct Fail(AnnStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_last_error(e.to_string());
        Fail(status_of(&e))
    }
}

fn fail(status: AnnStatus, msg: impl Into<String>) -> Fail {
    set_last_error(msg);
    Fail(status)
}

/// Runs `f`, clearing the last error first and turning panics into
/// `ANN_STATUS_PANIC`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AnnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AnnStatus::Ok,
        Ok(Err(Fail(status))) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            AnnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(AnnStatus::NullArgument, format!("`{name}` is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AnnStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(AnnStatus::NullArgument, format!("`{name}` is NULL")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(AnnStatus::NullArgument, format!("`{name}` is NULL")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(AnnStatus::NullArgument, format!("`{name}` is NULL")))
}

fn owned_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(AnnStatus::InvalidInput, "string contains NUL"))
}

fn purpose(code: u32) -> Result<Purpose, Fail> {
    match code {
        ANN_PURPOSE_REVIEW => Ok(Purpose::Review),
        ANN_PURPOSE_SELECTION => Ok(Purpose::Selection),
        other => Err(fail(AnnStatus::InvalidInput, format!("unknown purpose {other}"))),
    }
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ann_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn ann_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` is NULL or a string returned through a `char **out` argument of this
/// library that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn ann_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn new_schema(schema: LabelSchema) -> Box<AnnSchema> {
    let names = schema
        .labels()
        .iter()
        .map(|l| CString::new(l.as_str()).expect("labels are NUL-free"))
        .collect();
    Box::new(AnnSchema { schema, names })
}

/// Builds a schema from `n_labels` label strings. Labels are canonicalized
/// (trimmed, lowercased) and must be unique.
///
/// # Safety
/// `task` is a NUL-terminated string, `labels` points to `n_labels` of them,
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ann_schema_new(
    task: *const c_char,
    labels: *const *const c_char,
    n_labels: usize,
    out: *mut *mut AnnSchema,
) -> AnnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let task = str_arg(task, "task")?;
        if labels.is_null() && n_labels > 0 {
            return Err(fail(AnnStatus::NullArgument, "`labels` is NULL"));
        }
        let mut names = Vec::with_capacity(n_labels);
        for i in 0..n_labels {
            names.push(str_arg(*labels.add(i), "labels[i]")?.to_string());
        }
        *out = Box::into_raw(new_schema(LabelSchema::new(task, names)?));
        Ok(())
    })
}

/// Built-in schema for `sentiment` or `toxicity`.
///
/// # Safety
/// `task` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ann_schema_preset(task: *const c_char, out: *mut *mut AnnSchema) -> AnnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let task = str_arg(task, "task")?;
        let schema = LabelSchema::preset(task).ok_or_else(|| fail(AnnStatus::InvalidInput, format!("no preset for `{task}`")))?;
        *out = Box::into_raw(new_schema(schema));
        Ok(())
    })
}

/// # Safety
/// `schema` is NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ann_schema_free(schema: *mut AnnSchema) {
    if !schema.is_null() {
        drop(Box::from_raw(schema));
    }
}

/// Number of labels, 0 for NULL.
///
/// # Safety
/// `schema` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ann_schema_len(schema: *const AnnSchema) -> usize {
    schema.as_ref().map_or(0, |s| s.schema.len())
}

/// Label name at `index`, borrowed from the schema; NULL when out of range.
///
/// # Safety
/// `schema` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ann_schema_label(schema: *const AnnSchema, index: usize) -> *const c_char {
    schema
        .as_ref()
        .and_then(|s| s.names.get(index))
        .map_or(ptr::null(), |n| n.as_ptr())
}

/// Index of `label` after canonicalization.
///
/// # Safety
/// `schema` is a live handle, `label` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ann_schema_index_of(schema: *const AnnSchema, label: *const c_char, out: *mut usize) -> AnnStatus {
    guard(|| {
        let schema = handle(schema, "schema")?;
        let label = str_arg(label, "label")?;
        let out = out_arg(out, "out")?;
        let id = schema
            .schema
            .index_of(label)
            .ok_or_else(|| fail(AnnStatus::InvalidInput, format!("`{label}` is not in the schema")))?;
        *out = id.0;
        Ok(())
    })
}

/// `1 - max_multiplicity / k` over `k` label indices.
///
/// # Safety
/// `labels` points to `k` values and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ann_uncertainty(labels: *const usize, k: usize, out: *mut f64) -> AnnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if labels.is_null() && k > 0 {
            return Err(fail(AnnStatus::NullArgument, "`labels` is NULL"));
        }
        let ids: Vec<LabelId> = (0..k).map(|i| LabelId(*labels.add(i))).collect();
        *out = consensus::uncertainty(&ids, k)?;
        Ok(())
    })
}

/// Votes on one sample. `labels` holds one entry per backend; a negative
/// entry marks a backend that failed to answer.
///
/// # Safety
/// `schema` is a live handle, `labels` points to `k` values, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ann_vote(
    schema: *const AnnSchema,
    labels: *const i64,
    k: usize,
    epsilon: f64,
    out: *mut AnnVoteResult,
) -> AnnStatus {
    guard(|| {
        let schema = handle(schema, "schema")?;
        let out = out_arg(out, "out")?;
        if labels.is_null() && k > 0 {
            return Err(fail(AnnStatus::NullArgument, "`labels` is NULL"));
        }
        let votes = (0..k)
            .map(|i| {
                let backend_id = format!("b{i}");
                match usize::try_from(*labels.add(i)) {
                    Ok(label) => Vote::Predicted(Prediction {
                        backend_id,
                        label: LabelId(label),
                        confidence: 1.0,
                        model_version: 0,
                    }),
                    Err(_) => Vote::Failed {
                        backend_id,
                        reason: "failed".into(),
                    },
                }
            })
            .collect();
        let v = VoteOutcome::evaluate("ffi", votes, k, epsilon, &schema.schema)?;
        *out = AnnVoteResult {
            winner: v.winner.map_or(-1, |w| w.0 as i64),
            winner_count: v.winner_count,
            uncertainty: v.uncertainty,
            route: match v.route {
                Route::Direct => AnnRoute::Direct,
                Route::Review => AnnRoute::Review,
            },
            reason: match v.route_reason {
                RouteReason::Consensus => AnnRouteReason::Consensus,
                RouteReason::Disagreement => AnnRouteReason::Disagreement,
                RouteReason::Tie => AnnRouteReason::Tie,
                RouteReason::BackendFailure => AnnRouteReason::BackendFailure,
            },
        };
        Ok(())
    })
}

/// Cost of labeling `n_samples` with the LLM alone, as a USD string with two
/// decimals. Prices are micro-dollars per 1M tokens.
///
/// # Safety
/// `out` is writable; free the result with `ann_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ann_estimate_cost(
    n_samples: i64,
    in_tokens_per_sample: i64,
    out_tokens_per_sample: i64,
    input_per_1m_micros: u64,
    output_per_1m_micros: u64,
    out: *mut *mut c_char,
) -> AnnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let price = Price::from_micros(input_per_1m_micros, output_per_1m_micros);
        let cost = estimate_cost(n_samples, in_tokens_per_sample, out_tokens_per_sample, price)?;
        *out = owned_string(cost.to_string())?;
        Ok(())
    })
}

/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ann_ledger_new(out: *mut *mut AnnLedger) -> AnnStatus {
    guard(|| {
        *out_arg(out, "out")? = Box::into_raw(Box::new(AnnLedger { ledger: CostLedger::new() }));
        Ok(())
    })
}

/// # Safety
/// `ledger` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ann_ledger_free(ledger: *mut AnnLedger) {
    if !ledger.is_null() {
        drop(Box::from_raw(ledger));
    }
}

/// Sets a provider's price in micro-dollars per 1M tokens.
///
/// # Safety
/// `ledger` is a live handle and `provider` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ann_ledger_set_price(
    ledger: *mut AnnLedger,
    provider: *const c_char,
    input_per_1m_micros: u64,
    output_per_1m_micros: u64,
) -> AnnStatus {
    guard(|| {
        let ledger = handle_mut(ledger, "ledger")?;
        let provider = str_arg(provider, "provider")?;
        ledger
            .ledger
            .set_price(provider, Price::from_micros(input_per_1m_micros, output_per_1m_micros));
        Ok(())
    })
}

/// Records one LLM call. `purpose` is `ANN_PURPOSE_REVIEW` or
/// `ANN_PURPOSE_SELECTION`.
///
/// # Safety
/// `ledger` is a live handle and `provider` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ann_ledger_record(
    ledger: *mut AnnLedger,
    provider: *const c_char,
    purpose: u32,
    input_tokens: u64,
    output_tokens: u64,
) -> AnnStatus {
    guard(|| {
        let ledger = handle_mut(ledger, "ledger")?;
        let provider = str_arg(provider, "provider")?;
        let purpose = self::purpose(purpose)?;
        ledger.ledger.record(provider, purpose, input_tokens, output_tokens);
        Ok(())
    })
}

/// Calls recorded for `purpose`.
///
/// # Safety
/// `ledger` is a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ann_ledger_calls(ledger: *const AnnLedger, purpose: u32, out: *mut u64) -> AnnStatus {
    guard(|| {
        let ledger = handle(ledger, "ledger")?;
        let out = out_arg(out, "out")?;
        *out = ledger.ledger.calls(self::purpose(purpose)?);
        Ok(())
    })
}

/// Total priced cost as a USD string with six decimals.
///
/// # Safety
/// `ledger` is a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ann_ledger_total_cost(ledger: *const AnnLedger, out: *mut *mut c_char) -> AnnStatus {
    guard(|| {
        let ledger = handle(ledger, "ledger")?;
        *out_arg(out, "out")? = owned_string(ledger.ledger.total_cost().display_micros())?;
        Ok(())
    })
}

/// Per-provider usage and cost as JSON.
///
/// # Safety
/// `ledger` is a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ann_ledger_summary_json(ledger: *const AnnLedger, out: *mut *mut c_char) -> AnnStatus {
    guard(|| {
        let ledger = handle(ledger, "ledger")?;
        let json = serde_json::to_string(&ledger.ledger.summary()).map_err(Error::from)?;
        *out_arg(out, "out")? = owned_string(json)?;
        Ok(())
    })
}

/// Opens a run: loads the config file, ingests the dataset and prepares
/// `out_dir`. With `resume` set the run checkpointed in `out_dir` continues.
///
/// # Safety
/// Paths are NUL-terminated strings and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ann_run_open(
    config_path: *const c_char,
    input_path: *const c_char,
    out_dir: *const c_char,
    resume: bool,
    out: *mut *mut AnnRun,
) -> AnnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = FileConfig::load(Path::new(str_arg(config_path, "config_path")?), &[])?;
        let schema = cfg.schema()?;
        let samples = ingest(Path::new(str_arg(input_path, "input_path")?), None, &schema)?;
        let job = Job::open(&cfg, samples, Path::new(str_arg(out_dir, "out_dir")?), resume)?;
        *out = Box::into_raw(Box::new(AnnRun { job, server: None }));
        Ok(())
    })
}

/// # Safety
/// `run` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ann_run_free(run: *mut AnnRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Starts the status and review HTTP service for the run on `addr`
/// (`host:port`, port 0 picks one) and returns its base URL. Human review
/// modes need it before `ann_run_advance`.
///
/// # Safety
/// `run` is a live handle, `addr` a NUL-terminated string, `url_out` NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ann_run_serve(run: *mut AnnRun, addr: *const c_char, url_out: *mut *mut c_char) -> AnnStatus {
    guard(|| {
        let run = handle_mut(run, "run")?;
        let addr = str_arg(addr, "addr")?;
        if run.server.is_some() {
            return Err(fail(AnnStatus::IllegalState, "already serving"));
        }
        let server = service::serve(addr, run.job.service_state())?;
        if let Some(out) = url_out.as_mut() {
            *out = owned_string(server.url())?;
        }
        run.server = Some(server);
        Ok(())
    })
}

/// Processes up to `max_samples` more samples, or the rest of the dataset
/// when `max_samples` is 0. `ANN_STATUS_RUN_PAUSED` leaves a resumable
/// checkpoint behind.
///
/// # Safety
/// `run` is a live handle not used concurrently from another thread.
#[no_mangle]
pub unsafe extern "C" fn ann_run_advance(run: *mut AnnRun, max_samples: usize) -> AnnStatus {
    guard(|| {
        let run = handle_mut(run, "run")?;
        let state = run.job.state();
        if state.config.review_mode.needs_human() && run.server.is_none() {
            return Err(fail(AnnStatus::Config, "human review needs ann_run_serve first"));
        }
        let limit = (max_samples > 0).then(|| state.cursor.saturating_add(max_samples));
        run.job.run(limit)?;
        Ok(())
    })
}

/// Samples processed so far, 0 for NULL.
///
/// # Safety
/// `run` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ann_run_cursor(run: *const AnnRun) -> usize {
    run.as_ref().map_or(0, |r| r.job.state().cursor)
}

/// Dataset size, 0 for NULL.
///
/// # Safety
/// `run` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ann_run_total(run: *const AnnRun) -> usize {
    run.as_ref().map_or(0, |r| r.job.state().dataset_len)
}

/// The run report as JSON, rebuilt from the output file.
///
/// # Safety
/// `run` is a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ann_run_report_json(run: *const AnnRun, out: *mut *mut c_char) -> AnnStatus {
    guard(|| {
        let run = handle(run, "run")?;
        let report = run.job.write_artifacts()?;
        let json = serde_json::to_string(&report).map_err(Error::from)?;
        *out_arg(out, "out")? = owned_string(json)?;
        Ok(())
    })
}
