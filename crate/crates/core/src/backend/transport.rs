use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct RawResponse {
    pub status: u16,
    pub body: String,
}

impl RawResponse {
    pub fn ok(body: String) -> Self {
        Self { status: 200, body }
    }
}

/// Something that can carry one JSON POST. Implemented by the HTTP client,
/// the in-process synthetic service, and test doubles.
pub trait Transport: Send + Sync {
    fn post(&self, path: &str, body: &str) -> Result<RawResponse, TransportError>;
}

pub struct HttpTransport {
    base_url: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_owned(),
            client,
        })
    }
}

impl Transport for HttpTransport {
    fn post(&self, path: &str, body: &str) -> Result<RawResponse, TransportError> {
        let resp = self
            .client
            .post(format!("{}{}", self.base_url, path))
            .header("content-type", "application/json")
            .body(body.to_owned())
            .send()
            .map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(RawResponse { status, body })
    }
}
