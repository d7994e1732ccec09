//! Typed client for the chatscope service.

use std::time::Duration;

use reqwest::{Client, RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;

use chatscope_core::convo::Conversation;
use chatscope_core::pipeline::{RunManifest, StageName, StageRequest};
use chatscope_core::review::{ErrorBody, NextSample, SaturationReport, UserTimeline};
use chatscope_core::sampler::AnnotationRecord;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with a non-success status.
    #[error("{status}: {message}")]
    Api { status: StatusCode, message: String },

    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct ChatscopeClient {
    base: String,
    http: Client,
}

impl ChatscopeClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Result<Self> {
        Self::with_timeout(base, Duration::from_secs(3600))
    }

    pub fn with_timeout(base: impl Into<String>, timeout: Duration) -> Result<Self> {
        let http = Client::builder().timeout(timeout).build()?;
        Ok(ChatscopeClient {
            base: base.into().trim_end_matches('/').to_string(),
            http,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T> {
        let resp = req.send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text)
            .map(|b| b.error)
            .unwrap_or(text);
        Err(ClientError::Api { status, message })
    }

    pub async fn tracks(&self) -> Result<Vec<String>> {
        self.send(self.http.get(self.url("/api/tracks"))).await
    }

    pub async fn next_sample(&self, track: &str) -> Result<NextSample> {
        self.send(self.http.get(self.url("/api/next-sample")).query(&[("track", track)]))
            .await
    }

    pub async fn conversation(&self, conv_id: &str) -> Result<Conversation> {
        self.send(self.http.get(self.url(&format!("/api/conversations/{conv_id}"))))
            .await
    }

    pub async fn annotate(&self, record: &AnnotationRecord) -> Result<AnnotationRecord> {
        self.send(self.http.post(self.url("/api/annotations")).json(record))
            .await
    }

    pub async fn saturation(&self) -> Result<SaturationReport> {
        self.send(self.http.get(self.url("/api/saturation"))).await
    }

    pub async fn timeline(&self, pseudonym: &str) -> Result<UserTimeline> {
        self.send(self.http.get(self.url(&format!("/api/users/{pseudonym}/timeline"))))
            .await
    }

    pub async fn run_stage(&self, stage: StageName, request: &StageRequest) -> Result<RunManifest> {
        self.send(self.http.post(self.url(&format!("/api/stages/{stage}"))).json(request))
            .await
    }
}
