//! Blocking client for the igc service. Request and response bodies are the
//! types in [`igc_core::api`].

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use igc_core::api::{
    CompareEntry, CompareRequest, CompareResponse, ConfigSource, ErrorBody, Health, ProbeResponse, RunResponse,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    /// The service answered with an error body.
    #[error("{kind} (HTTP {status}): {message}")]
    Api { status: u16, kind: String, message: String },
    #[error("unexpected response from {url} (HTTP {status}): {body}")]
    Unexpected { url: String, status: u16, body: String },
}

impl ClientError {
    /// Error kind reported by the service, if any.
    pub fn kind(&self) -> Option<&str> {
        match self {
            ClientError::Api { kind, .. } => Some(kind),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    /// `base` is e.g. `http://127.0.0.1:8080`. Runs can take a while, so
    /// there is no request timeout.
    pub fn new(base: impl Into<String>) -> Result<Self> {
        let base = base.into().trim_end_matches('/').to_string();
        let http = reqwest::blocking::Client::builder()
            .timeout(None::<Duration>)
            .build()
            .map_err(|source| ClientError::Transport { url: base.clone(), source })?;
        Ok(Self { base, http })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn health(&self) -> Result<Health> {
        let url = format!("{}/healthz", self.base);
        let resp = self
            .http
            .get(&url)
            .send()
            .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        decode(url, resp)
    }

    pub fn run(&self, req: &ConfigSource) -> Result<RunResponse> {
        self.post("/v1/runs", req)
    }

    pub fn probe(&self, req: &ConfigSource) -> Result<ProbeResponse> {
        self.post("/v1/probes", req)
    }

    pub fn compare(&self, req: &CompareRequest) -> Result<CompareResponse> {
        self.post("/v1/compare", req)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let resp = self
            .http
            .post(&url)
            .json(body)
            .send()
            .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        decode(url, resp)
    }
}

fn decode<T: DeserializeOwned>(url: String, resp: reqwest::blocking::Response) -> Result<T> {
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
    if status.is_success() {
        return serde_json::from_str(&text).ok().ok_or(ClientError::Unexpected {
            url,
            status: status.as_u16(),
            body: text,
        });
    }
    match serde_json::from_str::<ErrorBody>(&text).ok() {
        Some(e) => Err(ClientError::Api {
            status: status.as_u16(),
            kind: e.error,
            message: e.message,
        }),
        None => Err(ClientError::Unexpected {
            url,
            status: status.as_u16(),
            body: text,
        }),
    }
}
