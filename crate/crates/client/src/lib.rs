//! Async HTTP client for the splitmove service.

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use splitmove_core::harness::Replication;
use splitmove_core::probability::PlanReport;
use splitmove_core::wire::{
    BenchmarkInfo, DoeRequest, DoeResponse, PlanRequest, ProbRequest, QuantileRequest, QuantileResponse, ReplicateRequest,
};
use splitmove_core::ProbEstimate;

/// Error payload returned by the service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceError {
    pub kind: String,
    pub error: String,
    #[serde(default)]
    pub partial: Option<serde_json::Value>,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),

    #[error("service returned {status}: {}", body.error)]
    Service { status: StatusCode, body: ServiceError },
}

impl ClientError {
    /// Error category reported by the service, if it answered.
    pub fn kind(&self) -> Option<&str> {
        match self {
            ClientError::Service { body, .. } => Some(&body.kind),
            ClientError::Transport(_) => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, for example `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ServiceError {
            kind: "http".into(),
            error: text,
            partial: None,
        });
        Err(ClientError::Service { status, body })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::decode(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::decode(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<serde_json::Value> {
        self.get("/health").await
    }

    pub async fn benchmarks(&self) -> Result<Vec<BenchmarkInfo>> {
        self.get("/benchmarks").await
    }

    pub async fn prob(&self, req: &ProbRequest) -> Result<ProbEstimate> {
        self.post("/prob", req).await
    }

    pub async fn quantile(&self, req: &QuantileRequest) -> Result<QuantileResponse> {
        self.post("/quantile", req).await
    }

    pub async fn doe(&self, req: &DoeRequest) -> Result<DoeResponse> {
        self.post("/doe", req).await
    }

    pub async fn plan(&self, req: &PlanRequest) -> Result<PlanReport> {
        self.post("/plan", req).await
    }

    pub async fn replicate(&self, req: &ReplicateRequest) -> Result<Vec<Replication>> {
        self.post("/replicate", req).await
    }
}
