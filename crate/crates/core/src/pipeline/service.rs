//! HTTP status and human-review API.
//!
//! ```text
//! GET  /api/status             counters, pool, cycle history, ledger
//! GET  /api/review/next        oldest queued hard sample, 204 when none
//! POST /api/review/{sample_id} {"label": "..."}  200 | 404 | 422
//! GET  /api/schema             {"task", "labels"}
//! ```

use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::oneshot;

use crate::consensus::LabelSchema;
use crate::error::{Error, Result};
use crate::ledger::{LedgerSummary, SharedLedger};
use crate::pipeline::reviewer::{QueueItem, ReviewQueue, SubmitError};
use crate::pipeline::run::{StatusBoard, StatusSnapshot};

#[derive(Clone)]
pub struct ServiceState {
    pub schema: LabelSchema,
    pub status: StatusBoard,
    pub ledger: SharedLedger,
    pub queue: Option<Arc<ReviewQueue>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusResponse {
    #[serde(flatten)]
    pub status: StatusSnapshot,
    pub review_queue: usize,
    pub ledger: LedgerSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    #[serde(flatten)]
    pub item: QueueItem,
    pub queue_length: usize,
}

#[derive(Debug, Deserialize)]
struct LabelBody {
    label: String,
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/api/status", get(status))
        .route("/api/review/next", get(next))
        .route("/api/review/:sample_id", post(submit))
        .route("/api/schema", get(schema))
        .with_state(state)
}

async fn status(State(s): State<ServiceState>) -> Json<StatusResponse> {
    let status = s.status.lock().expect("status").clone();
    let ledger = s.ledger.lock().expect("ledger").summary();
    Json(StatusResponse {
        status,
        review_queue: s.queue.as_ref().map_or(0, |q| q.len()),
        ledger,
    })
}

async fn next(State(s): State<ServiceState>) -> Response {
    let Some(queue) = &s.queue else {
        return StatusCode::NO_CONTENT.into_response();
    };
    match queue.peek() {
        Some(item) => Json(NextResponse {
            item,
            queue_length: queue.len(),
        })
        .into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

/// The body is parsed as JSON whatever its declared content type.
async fn submit(State(s): State<ServiceState>, Path(sample_id): Path<String>, body: Bytes) -> Response {
    let Ok(body) = serde_json::from_slice::<LabelBody>(&body) else {
        return (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({"error": "body must be {\"label\": <string>}"})))
            .into_response();
    };
    let Some(queue) = &s.queue else {
        return (StatusCode::NOT_FOUND, Json(json!({"error": "this run has no human review queue"}))).into_response();
    };
    match queue.submit(&sample_id, &body.label) {
        Ok(_) => Json(json!({"sample_id": sample_id, "label": s.schema.index_of(&body.label).map(|l| s.schema.name_of(l))}))
            .into_response(),
        Err(SubmitError::UnknownItem) => (
            StatusCode::NOT_FOUND,
            Json(json!({"error": format!("`{sample_id}` is not waiting for review")})),
        )
            .into_response(),
        Err(SubmitError::InvalidLabel) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({"error": format!("`{}` is not one of {:?}", body.label, s.schema.labels())})),
        )
            .into_response(),
    }
}

async fn schema(State(s): State<ServiceState>) -> Json<serde_json::Value> {
    Json(json!({"task": s.schema.task_name(), "labels": s.schema.labels()}))
}

/// A running server. Dropping the handle stops it.
pub struct ServiceHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serves `app` on `addr` (`host:port`, or `:port` for all interfaces) from a
/// background thread.
pub fn spawn(addr: &str, app: Router) -> Result<ServiceHandle> {
    let addr = if addr.starts_with(':') { format!("0.0.0.0{addr}") } else { addr.to_string() };
    let listener = TcpListener::bind(&addr).map_err(|e| Error::Config(format!("cannot listen on {addr}: {e}")))?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_io()
        .enable_time()
        .build()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("annotator-http".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        tracing::error!(error = %e, "cannot adopt listener");
                        return;
                    }
                };
                let server = axum::serve(listener, app).with_graceful_shutdown(async {
                    let _ = rx.await;
                });
                if let Err(e) = server.await {
                    tracing::error!(error = %e, "http server stopped");
                }
            });
        })?;
    tracing::info!(%local, "serving");
    Ok(ServiceHandle {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

pub fn serve(addr: &str, state: ServiceState) -> Result<ServiceHandle> {
    spawn(addr, router(state))
}
