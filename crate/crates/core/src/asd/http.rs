//! JSON-over-HTTP front end for [`AccountabilityServer`].
//!
//! | route | body | responses |
//! |---|---|---|
//! | `POST /v1/register` | `{token}` | `200 {credential}`, `401` |
//! | `POST /v1/tag` | `{credential, com}` | `200 {tag}`, `400`, `401` |
//! | `POST /v1/report` | `{tag}` | `204`, `400 {reason}` |
//! | `POST /v1/epoch/advance` | admin bearer | `200 {epoch, updated}`, `401` |
//! | `GET /v1/score` | credential bearer | `200 {sc, y}`, `401` |
//! | `GET /v1/vk` | | `200 {vk, labels}` |
//!
//! Binary fields are standard base64.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Json, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tracing::{error, warn};

use super::server::{AccountabilityServer, AsdError, ReportOutcome};
use crate::tagcrypt::encode_tag;

#[derive(Debug, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub token: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub credential: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TagRequest {
    pub credential: String,
    pub com: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TagResponse {
    pub tag: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportRequest {
    pub tag: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportRejection {
    pub reason: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VkResponse {
    pub vk: String,
    #[serde(default)]
    pub labels: Vec<String>,
}

type Shared = Arc<AccountabilityServer>;

fn error_response(err: AsdError) -> Response {
    let status = match &err {
        AsdError::Auth => StatusCode::UNAUTHORIZED,
        AsdError::Request(_) => StatusCode::BAD_REQUEST,
        AsdError::Storage(e) => {
            error!(error = %e, "storage failure");
            StatusCode::INTERNAL_SERVER_ERROR
        }
    };
    (status, Json(json!({ "error": err.to_string() }))).into_response()
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("handler task panicked")
}

async fn register(State(srv): State<Shared>, Json(req): Json<RegisterRequest>) -> Response {
    match blocking(move || srv.register(&req.token)).await {
        Ok(credential) => Json(RegisterResponse { credential }).into_response(),
        Err(e) => error_response(e),
    }
}

async fn issue(State(srv): State<Shared>, Json(req): Json<TagRequest>) -> Response {
    let Ok(com) = B64.decode(&req.com) else {
        return error_response(AsdError::Request("com is not base64".into()));
    };
    match srv.issue_tag(&req.credential, &com) {
        Ok(tag) => Json(TagResponse { tag: B64.encode(encode_tag(&tag)) }).into_response(),
        Err(e) => error_response(e),
    }
}

async fn report(State(srv): State<Shared>, Json(req): Json<ReportRequest>) -> Response {
    let Ok(bytes) = B64.decode(&req.tag) else {
        return (StatusCode::BAD_REQUEST, Json(ReportRejection { reason: "decode".into() })).into_response();
    };
    match blocking(move || srv.ingest_report(&bytes)).await {
        Ok(ReportOutcome::Accepted) => StatusCode::NO_CONTENT.into_response(),
        Ok(ReportOutcome::Rejected(reason)) => {
            (StatusCode::BAD_REQUEST, Json(ReportRejection { reason: reason.as_str().into() })).into_response()
        }
        Err(e) => error_response(e),
    }
}

async fn advance(State(srv): State<Shared>, headers: HeaderMap) -> Response {
    let Some(token) = bearer(&headers).map(str::to_owned) else {
        return error_response(AsdError::Auth);
    };
    match blocking(move || srv.advance_epoch(&token)).await {
        Ok(summary) => Json(summary).into_response(),
        Err(e) => error_response(e),
    }
}

async fn score(State(srv): State<Shared>, headers: HeaderMap) -> Response {
    let Some(cred) = bearer(&headers) else {
        return error_response(AsdError::Auth);
    };
    match srv.get_score(cred) {
        Ok(view) => Json(view).into_response(),
        Err(e) => error_response(e),
    }
}

async fn vk(State(srv): State<Shared>) -> Response {
    Json(VkResponse {
        vk: B64.encode(srv.verifying_key().as_bytes()),
        labels: srv.settings().reputation.labels().to_vec(),
    })
    .into_response()
}

pub fn router(server: Shared) -> Router {
    Router::new()
        .route("/v1/register", post(register))
        .route("/v1/tag", post(issue))
        .route("/v1/report", post(report))
        .route("/v1/epoch/advance", post(advance))
        .route("/v1/score", get(score))
        .route("/v1/vk", get(vk))
        .with_state(server)
}

/// Advances epochs on the wall clock. Serializes with manual advances
/// through the server's exclusive lock.
async fn epoch_timer(server: Shared, duration_secs: u64) {
    loop {
        let due = server.epoch_started_at().saturating_add(duration_secs);
        let wait = due.saturating_sub(server.now());
        tokio::time::sleep(Duration::from_secs(wait.max(1))).await;
        if server.now() < server.epoch_started_at().saturating_add(duration_secs) {
            continue;
        }
        let srv = server.clone();
        if let Err(e) = blocking(move || srv.advance_epoch_unchecked()).await {
            warn!(error = %e, "timed epoch advance failed");
        }
    }
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(server: Shared, listener: TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    let duration = server.settings().epoch_duration_secs;
    let timer = (duration > 0).then(|| tokio::spawn(epoch_timer(server.clone(), duration)));
    let result = axum::serve(listener, router(server)).with_graceful_shutdown(shutdown).await;
    if let Some(t) = timer {
        t.abort();
    }
    result
}

/// A server running on its own runtime thread; stops when dropped.
pub struct BackgroundServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    pub fn start(server: Shared, addr: &str) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let local = std_listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = TcpListener::from_std(std_listener).expect("listener handoff");
                let _ = serve(server, listener, async {
                    let _ = rx.await;
                })
                .await;
            });
        });
        Ok(BackgroundServer { addr: local, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
