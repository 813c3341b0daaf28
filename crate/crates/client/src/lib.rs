//! Async client for the scene synthesis service.

use lsdm_core::api::{
    CreateSessionRequest, CreateSessionResponse, EditBody, ErrorBody, GenerationResponse, HealthResponse,
    SessionView, SynthesizeRequest,
};
use lsdm_core::edit::EditOp;
use lsdm_core::synth::Interaction;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {}", describe(.body))]
    Api { status: u16, body: ErrorBody },
}

fn describe(body: &ErrorBody) -> String {
    match &body.field {
        Some(f) => format!("{} (field `{f}`)", body.error),
        None => body.error.clone(),
    }
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status().map(|s| s.as_u16()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn finish<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: text,
            field: None,
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::finish(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::finish(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        self.get("/api/health").await
    }

    pub async fn create_session_from_seed(&self, seed: u64) -> Result<String, ClientError> {
        let req = CreateSessionRequest {
            scene: None,
            generator_seed: Some(seed),
        };
        let resp: CreateSessionResponse = self.post("/api/sessions", &req).await?;
        Ok(resp.session_id)
    }

    pub async fn create_session(&self, scene: &Interaction) -> Result<String, ClientError> {
        let req = CreateSessionRequest {
            scene: Some(scene.clone()),
            generator_seed: None,
        };
        let resp: CreateSessionResponse = self.post("/api/sessions", &req).await?;
        Ok(resp.session_id)
    }

    pub async fn session(&self, id: &str) -> Result<SessionView, ClientError> {
        self.get(&format!("/api/sessions/{id}")).await
    }

    pub async fn synthesize(&self, id: &str, prompt: &str, seed: Option<u64>) -> Result<GenerationResponse, ClientError> {
        let req = SynthesizeRequest {
            prompt: prompt.to_string(),
            seed,
        };
        self.post(&format!("/api/sessions/{id}/synthesize"), &req).await
    }

    pub async fn edit(
        &self,
        id: &str,
        op: EditOp,
        prompt: &str,
        target_id: &str,
        seed: Option<u64>,
    ) -> Result<GenerationResponse, ClientError> {
        let req = EditBody {
            op,
            prompt: prompt.to_string(),
            target_id: target_id.to_string(),
            seed,
        };
        self.post(&format!("/api/sessions/{id}/edit"), &req).await
    }

    pub async fn guidance(&self, id: &str) -> Result<GenerationResponse, ClientError> {
        self.get(&format!("/api/sessions/{id}/guidance")).await
    }
}
