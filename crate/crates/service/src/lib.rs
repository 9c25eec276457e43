//! HTTP/JSON front end over the splitmove estimators.
//!
//! | method | path          | body                 | response                    |
//! |--------|---------------|----------------------|-----------------------------|
//! | GET    | `/health`     |                      | `{"status":"ok","version"}` |
//! | GET    | `/benchmarks` |                      | `[BenchmarkInfo]`           |
//! | POST   | `/prob`       | `ProbRequest`        | `ProbEstimate`              |
//! | POST   | `/quantile`   | `QuantileRequest`    | `QuantileResponse`          |
//! | POST   | `/doe`        | `DoeRequest`         | `DoeResponse`               |
//! | POST   | `/plan`       | `PlanRequest`        | `PlanReport`                |
//! | POST   | `/replicate`  | `ReplicateRequest`   | `[Replication]`             |
//!
//! Failures return an [`ErrorBody`] with a 4xx/5xx status. Computations run on
//! the blocking pool.

use std::net::SocketAddr;

use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use splitmove_core::wire::{catalogue, DoeRequest, PlanRequest, ProbRequest, QuantileRequest, ReplicateRequest};
use splitmove_core::Error;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

/// JSON error payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// Stable machine-readable category.
    pub kind: String,
    pub error: String,
    /// Partial result attached to some failures (an incomplete design).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial: Option<serde_json::Value>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, error: String) -> Self {
        Self {
            status,
            body: ErrorBody {
                kind: kind.into(),
                error,
                partial: None,
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        use StatusCode as S;
        let (status, kind) = match &e {
            Error::InvalidConfig(_) => (S::BAD_REQUEST, "invalid_config"),
            Error::UnknownBenchmark(_) => (S::BAD_REQUEST, "unknown_benchmark"),
            Error::DimensionMismatch { .. } => (S::BAD_REQUEST, "dimension_mismatch"),
            Error::Unsupported(_) => (S::BAD_REQUEST, "unsupported"),
            Error::Toml(_) => (S::BAD_REQUEST, "config"),
            Error::Json(_) => (S::BAD_REQUEST, "json"),
            Error::Planner(_) => (S::BAD_REQUEST, "planner"),
            Error::Shortfall { .. } => (S::UNPROCESSABLE_ENTITY, "shortfall"),
            Error::NeedsWiderRun { .. } => (S::UNPROCESSABLE_ENTITY, "needs_wider_run"),
            Error::DoeIncomplete { .. } => (S::UNPROCESSABLE_ENTITY, "doe_incomplete"),
            Error::Stalled { .. } => (S::UNPROCESSABLE_ENTITY, "stalled"),
            Error::Workers { .. } => (S::UNPROCESSABLE_ENTITY, "workers"),
            Error::Gp(_) => (S::UNPROCESSABLE_ENTITY, "gp"),
            Error::TestInvalid(_) => (S::UNPROCESSABLE_ENTITY, "test_invalid"),
            Error::Evaluation { .. } => (S::UNPROCESSABLE_ENTITY, "evaluation"),
            Error::EmptyPopulation => (S::UNPROCESSABLE_ENTITY, "empty_population"),
            Error::Io(_) | Error::Csv(_) => (S::INTERNAL_SERVER_ERROR, "io"),
        };
        let mut api = ApiError::new(status, kind, e.to_string());
        if let Error::DoeIncomplete { partial, .. } = &e {
            api.body.partial = serde_json::to_value(partial.as_ref()).ok();
        }
        api
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(r.status(), "bad_request", r.body_text())
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
    T: Send + 'static,
    F: FnOnce() -> splitmove_core::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => Ok(Json(v)),
        Ok(Err(e)) => {
            tracing::warn!(error = %e, "request failed");
            Err(e.into())
        }
        Err(join) => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            format!("computation aborted: {join}"),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn benchmarks() -> Json<Vec<splitmove_core::wire::BenchmarkInfo>> {
    Json(catalogue())
}

async fn prob(req: Result<Json<ProbRequest>, JsonRejection>) -> ApiResult<splitmove_core::ProbEstimate> {
    let Json(req) = req?;
    blocking(move || req.execute()).await
}

async fn quantile(req: Result<Json<QuantileRequest>, JsonRejection>) -> ApiResult<splitmove_core::wire::QuantileResponse> {
    let Json(req) = req?;
    blocking(move || req.execute()).await
}

async fn doe(req: Result<Json<DoeRequest>, JsonRejection>) -> ApiResult<splitmove_core::wire::DoeResponse> {
    let Json(req) = req?;
    blocking(move || req.execute()).await
}

async fn plan(req: Result<Json<PlanRequest>, JsonRejection>) -> ApiResult<splitmove_core::probability::PlanReport> {
    let Json(req) = req?;
    blocking(move || req.execute()).await
}

async fn replicate(req: Result<Json<ReplicateRequest>, JsonRejection>) -> ApiResult<Vec<splitmove_core::harness::Replication>> {
    let Json(req) = req?;
    blocking(move || req.execute()).await
}

pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/benchmarks", get(benchmarks))
        .route("/prob", post(prob))
        .route("/quantile", post(quantile))
        .route("/doe", post(doe))
        .route("/plan", post(plan))
        .route("/replicate", post(replicate))
}

/// Serves the router on an already bound listener until the task is dropped.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

/// Binds `127.0.0.1` on an ephemeral port and serves in a background task.
pub async fn spawn_ephemeral() -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(("127.0.0.1", 0)).await?;
    let addr = listener.local_addr()?;
    Ok((addr, tokio::spawn(serve(listener))))
}
