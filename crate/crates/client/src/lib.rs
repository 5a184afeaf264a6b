//! Typed async client for `tcdst-server`.
//!
//! Request and response types are the ones in `tcdst_core::api` and the
//! core report types, so both ends agree on the wire format by construction.

use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tcdst_core::api::{
    AnalyzeRequest, ErrorBody, ErrorDetail, EvalRequest, GenerateRequest, GenerateResponse, Health,
    OpenSessionRequest, SessionInfo, SessionStatus, TurnRequest, TurnResponse,
};
use tcdst_core::corpus::AnalysisReport;
use tcdst_core::numeric::GradCheckReport;
use tcdst_core::tracker::EvalReport;
use tcdst_core::train::{GradCheckConfig, RunConfig, TrainSummary};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{} ({status}): {}", body.error.kind, body.error.message)]
    Api { status: u16, body: ErrorBody },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    /// True when the server rejected the request as invalid input.
    pub fn is_validation(&self) -> bool {
        match self {
            ClientError::Api { status, body } => *status == 422 || body.error.validation,
            ClientError::Transport(_) => false,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
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
    /// `base_url` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_http(base_url, reqwest::Client::new())
    }

    pub fn with_http(base_url: impl Into<String>, http: reqwest::Client) -> Self {
        let base = base_url.into().trim_end_matches('/').to_string();
        Client { base, http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send(
        &self,
        method: Method,
        path: &str,
        body: Option<&(impl Serialize + ?Sized)>,
    ) -> Result<reqwest::Response> {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str::<ErrorBody>(&text).unwrap_or_else(|_| ErrorBody {
            error: ErrorDetail {
                kind: "http".into(),
                message: if text.is_empty() {
                    status.to_string()
                } else {
                    text
                },
                validation: status == StatusCode::UNPROCESSABLE_ENTITY,
            },
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }

    async fn json<T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&(impl Serialize + ?Sized)>,
    ) -> Result<T> {
        Ok(self.send(method, path, body).await?.json().await?)
    }

    pub async fn health(&self) -> Result<Health> {
        self.json(Method::GET, "/health", None::<&()>).await
    }

    pub async fn train(&self, config: &RunConfig) -> Result<TrainSummary> {
        self.json(Method::POST, "/v1/train", Some(config)).await
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalReport> {
        self.json(Method::POST, "/v1/eval", Some(req)).await
    }

    pub async fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse> {
        self.json(Method::POST, "/v1/generate", Some(req)).await
    }

    pub async fn analyze(&self, req: &AnalyzeRequest) -> Result<AnalysisReport> {
        self.json(Method::POST, "/v1/analyze", Some(req)).await
    }

    pub async fn gradcheck(&self, config: &GradCheckConfig) -> Result<GradCheckReport> {
        self.json(Method::POST, "/v1/gradcheck", Some(config)).await
    }

    pub async fn open_session(&self, req: &OpenSessionRequest) -> Result<SessionInfo> {
        self.json(Method::POST, "/v1/sessions", Some(req)).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionStatus> {
        self.json(Method::GET, &format!("/v1/sessions/{id}"), None::<&()>)
            .await
    }

    pub async fn turn(&self, id: &str, req: &TurnRequest) -> Result<TurnResponse> {
        self.json(Method::POST, &format!("/v1/sessions/{id}/turns"), Some(req))
            .await
    }

    pub async fn reset(&self, id: &str) -> Result<SessionStatus> {
        self.json(
            Method::POST,
            &format!("/v1/sessions/{id}/reset"),
            None::<&()>,
        )
        .await
    }

    pub async fn close_session(&self, id: &str) -> Result<()> {
        self.send(Method::DELETE, &format!("/v1/sessions/{id}"), None::<&()>)
            .await?;
        Ok(())
    }
}
