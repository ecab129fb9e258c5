//! HTTP front end for `igc-core`.
//!
//! | method | path          | body                | response          |
//! |--------|---------------|---------------------|-------------------|
//! | GET    | `/healthz`    |                     | `{"status":"ok"}` |
//! | POST   | `/v1/runs`    | [`ConfigSource`]    | [`RunResponse`]   |
//! | POST   | `/v1/probes`  | [`ConfigSource`]    | [`ProbeResponse`] |
//! | POST   | `/v1/compare` | [`CompareRequest`]  | [`CompareResponse`] |
//!
//! Failures come back as [`ErrorBody`] with status 400 (bad config),
//! 422 (the run itself failed) or 500. Paths inside a config (datasets,
//! `theta0`) are resolved on the server.

use std::io;
use std::net::SocketAddr;
use std::thread;

use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use igc_core::api::{
    self, CompareRequest, CompareResponse, ConfigSource, ErrorBody, Health, ProbeResponse, RunResponse,
};

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl From<igc_core::Error> for ApiError {
    fn from(e: igc_core::Error) -> Self {
        Self {
            status: StatusCode::from_u16(api::status_code(&e)).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            body: ErrorBody::from(&e),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: "parse".into(),
                message: r.body_text(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> igc_core::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => Ok(Json(v)),
        Ok(Err(e)) => Err(e.into()),
        Err(join) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                error: "internal".into(),
                message: join.to_string(),
            },
        }),
    }
}

async fn healthz() -> Json<Health> {
    Json(Health { status: "ok".into() })
}

async fn runs(body: Result<Json<ConfigSource>, JsonRejection>) -> ApiResult<RunResponse> {
    let Json(req) = body?;
    blocking(move || api::run(&req)).await
}

async fn probes(body: Result<Json<ConfigSource>, JsonRejection>) -> ApiResult<ProbeResponse> {
    let Json(req) = body?;
    blocking(move || api::probe(&req)).await
}

async fn compare(body: Result<Json<CompareRequest>, JsonRejection>) -> ApiResult<CompareResponse> {
    let Json(req) = body?;
    blocking(move || api::compare(&req)).await
}

pub fn router() -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/runs", post(runs))
        .route("/v1/probes", post(probes))
        .route("/v1/compare", post(compare))
}

/// Serves until the process exits.
pub async fn serve(listener: TcpListener) -> io::Result<()> {
    igc_core::federation::configure_threads();
    axum::serve(listener, router()).await
}

/// Binds `addr`, calls `on_bind` with the bound address, then serves on a
/// fresh runtime until the process exits.
pub fn serve_forever(addr: &str, on_bind: impl FnOnce(SocketAddr)) -> io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = TcpListener::bind(addr).await?;
        on_bind(listener.local_addr()?);
        serve(listener).await
    })
}

/// A server on its own thread and runtime, for callers without one. Shuts
/// down when dropped.
pub struct BackgroundServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<io::Result<()>>>,
}

impl BackgroundServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(addr: &str) -> io::Result<Self> {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let listener = rt.block_on(TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        igc_core::federation::configure_threads();
        let thread = thread::Builder::new().name("igc-service".into()).spawn(move || {
            rt.block_on(async move {
                axum::serve(listener, router())
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })?;
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
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
