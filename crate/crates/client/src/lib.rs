//! Typed async client for the human-play service.

use gridtalk_protocol::{
    ActRequest, ActResponse, CreateSessionRequest, CreateSessionResponse, ErrorBody,
    RevealResponse, SessionView, StatsResponse,
};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid server URL {url:?}: {reason}")]
    BadUrl { url: String, reason: String },
    /// The service answered with an error status.
    #[error("server returned {status}: {message}")]
    Api { status: StatusCode, message: String },
    #[error("request to {url} failed: {source}")]
    Transport { url: String, source: reqwest::Error },
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base_url` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base_url: &str) -> Result<Client, ClientError> {
        let base = base_url.trim_end_matches('/').to_string();
        let bad = |reason: &str| ClientError::BadUrl {
            url: base_url.to_string(),
            reason: reason.to_string(),
        };
        let parsed = reqwest::Url::parse(&base).map_err(|e| bad(&e.to_string()))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(bad("expected an http or https URL"));
        }
        Ok(Client {
            base,
            http: reqwest::Client::new(),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T, ClientError> {
        let url = format!("{}{path}", self.base);
        let transport = |source| ClientError::Transport {
            url: url.clone(),
            source,
        };
        let mut req = self.http.request(method, &url);
        if let Some(b) = body {
            req = req.json(b);
        }
        let res = req.send().await.map_err(transport)?;
        let status = res.status();
        if !status.is_success() {
            let text = res.text().await.unwrap_or_default();
            let message = serde_json::from_str::<ErrorBody>(&text)
                .map(|e| e.error)
                .unwrap_or(text);
            return Err(ClientError::Api { status, message });
        }
        res.json().await.map_err(transport)
    }

    pub async fn create_session(
        &self,
        req: &CreateSessionRequest,
    ) -> Result<CreateSessionResponse, ClientError> {
        self.send(Method::POST, "/api/sessions", Some(req)).await
    }

    pub async fn act(
        &self,
        session_id: &str,
        action_index: usize,
    ) -> Result<ActResponse, ClientError> {
        self.send(
            Method::POST,
            &format!("/api/sessions/{session_id}/act"),
            Some(&ActRequest { action_index }),
        )
        .await
    }

    pub async fn session(&self, session_id: &str) -> Result<SessionView, ClientError> {
        self.send::<(), _>(Method::GET, &format!("/api/sessions/{session_id}"), None)
            .await
    }

    pub async fn reveal(&self, session_id: &str) -> Result<RevealResponse, ClientError> {
        self.send::<(), _>(
            Method::GET,
            &format!("/api/sessions/{session_id}/reveal"),
            None,
        )
        .await
    }

    pub async fn stats(&self) -> Result<StatsResponse, ClientError> {
        self.send::<(), _>(Method::GET, "/api/stats", None).await
    }
}
