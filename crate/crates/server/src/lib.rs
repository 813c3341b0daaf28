//! HTTP service: editing sessions over one loaded model.
//!
//! | method | path | body | response |
//! |--------|------|------|----------|
//! | POST | `/api/sessions` | `CreateSessionRequest` | `CreateSessionResponse` |
//! | GET | `/api/sessions/{id}` | | `SessionView` |
//! | POST | `/api/sessions/{id}/synthesize` | `SynthesizeRequest` | `GenerationResponse` |
//! | POST | `/api/sessions/{id}/edit` | `EditBody` | `GenerationResponse` |
//! | GET | `/api/sessions/{id}/guidance` | | last `GenerationResponse` |
//! | GET | `/api/health` | | `HealthResponse` |
//!
//! Errors carry an `ErrorBody`: 400 for malformed bodies (with the offending
//! field), 404 for unknown sessions, 409 while another mutation of the same
//! session is running, 500 when generation fails.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tokio::sync::Mutex;

use lsdm_core::api::{
    flatten, CommandKind, CreateSessionRequest, CreateSessionResponse, EditBody, ErrorBody, GenerationResponse,
    HealthResponse, HistoryEntry, SessionView, SynthesizeRequest, MAX_WIRE_POINTS,
};
use lsdm_core::edit::{edit, EditError, EditOp, EditRequest};
use lsdm_core::geometry::{bounds, Point, Solid};
use lsdm_core::gpnet::{Conditions, GpNet, ModelError};
use lsdm_core::grad::checkpoint_hash;
use lsdm_core::synth::{gen_interaction, EntityKind, Interaction, PromptSpec, SynthConfig, TARGET_ID};

/// Seeds chosen by the server stay below 2^53 so they survive JSON clients
/// that read numbers as doubles.
const MAX_AUTO_SEED: u64 = 1 << 53;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("loading checkpoint {path}: {source}")]
    Checkpoint { path: String, source: ModelError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                field: None,
            },
        }
    }

    fn field(field: &str, error: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: error.into(),
                field: Some(field.to_string()),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<EditError> for ApiError {
    fn from(e: EditError) -> Self {
        match e {
            EditError::UnknownObject(_) => ApiError::field("target_id", e.to_string()),
            EditError::InvalidPrompt { .. } => ApiError::field("prompt", e.to_string()),
            EditError::Model(m) => m.into(),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::EmptyPrompt => ApiError::field("prompt", e.to_string()),
            ModelError::EntityCount(_) => ApiError::field("scene", e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

/// Parses a JSON body, naming the field that failed.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "body".to_string() } else { path };
        ApiError::field(&field, e.into_inner().to_string())
    })
}

struct SessionData {
    scene: Interaction,
    history: Vec<HistoryEntry>,
    last: Option<GenerationResponse>,
}

struct Session {
    data: RwLock<SessionData>,
    /// Held for the duration of a mutation.
    writer: Arc<Mutex<()>>,
}

pub struct AppState {
    model: GpNet,
    hash: String,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    pub fn new(model: GpNet, hash: String) -> Self {
        Self {
            model,
            hash,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn from_checkpoint(dir: &Path) -> Result<Self, ServerError> {
        let checkpoint = |source| ServerError::Checkpoint {
            path: dir.display().to_string(),
            source,
        };
        let model = GpNet::load(dir).map_err(checkpoint)?;
        let hash = checkpoint_hash(dir).map_err(|e| checkpoint(e.into()))?;
        Ok(Self::new(model, hash))
    }

    pub fn model(&self) -> &GpNet {
        &self.model
    }

    pub fn checkpoint_hash(&self) -> &str {
        &self.hash
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/synthesize", post(synthesize))
        .route("/api/sessions/{id}/edit", post(edit_session))
        .route("/api/sessions/{id}/guidance", get(guidance))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(state)).await
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        checkpoint_hash: state.hash.clone(),
        points: state.model.hyper().points,
        ablation: state.model.ablation().to_string(),
    })
}

fn check_cloud(field: &str, points: &[Point]) -> Result<(), ApiError> {
    if points.is_empty() || points.len() > MAX_WIRE_POINTS {
        return Err(ApiError::field(field, format!("expected 1 to {MAX_WIRE_POINTS} points, got {}", points.len())));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ApiError::field(field, "non-finite coordinate"));
    }
    Ok(())
}

fn check_scene(scene: &Interaction) -> Result<(), ApiError> {
    if scene.entities.is_empty() || scene.entities[0].kind != EntityKind::Human {
        return Err(ApiError::field("scene.entities", "entity 0 must be the human"));
    }
    for (i, e) in scene.entities.iter().enumerate() {
        check_cloud(&format!("scene.entities[{i}].points"), &e.points)?;
    }
    check_cloud("scene.target.points", &scene.target.points)?;
    for (i, a) in scene.meta.anchors.iter().enumerate() {
        if *a >= scene.entities.len() {
            return Err(ApiError::field(&format!("scene.meta.anchors[{i}]"), "anchor index out of range"));
        }
    }
    Ok(())
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<CreateSessionResponse>, ApiError> {
    let req: CreateSessionRequest = parse_body(&body)?;
    let scene = match (req.scene, req.generator_seed) {
        (Some(scene), None) => {
            check_scene(&scene)?;
            scene
        }
        (None, Some(seed)) => {
            let cfg = SynthConfig {
                points: state.model.hyper().points,
                ..SynthConfig::default()
            };
            gen_interaction(seed, &cfg).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        }
        _ => return Err(ApiError::field("body", "give exactly one of `scene` and `generator_seed`")),
    };
    let id = uuid::Uuid::new_v4().to_string();
    let session = Session {
        data: RwLock::new(SessionData {
            scene,
            history: Vec::new(),
            last: None,
        }),
        writer: Arc::new(Mutex::new(())),
    };
    state.sessions.write().expect("session map poisoned").insert(id.clone(), Arc::new(session));
    tracing::info!(session = %id, "session created");
    Ok(Json(CreateSessionResponse { session_id: id }))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id)?;
    let data = session.data.read().expect("session poisoned");
    Ok(Json(SessionView {
        session_id: id,
        checkpoint_hash: state.hash.clone(),
        scene: data.scene.clone(),
        history: data.history.clone(),
    }))
}

async fn guidance(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<GenerationResponse>, ApiError> {
    let session = state.session(&id)?;
    let data = session.data.read().expect("session poisoned");
    data.last
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no synthesis or edit has run in this session"))
}

async fn synthesize(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<GenerationResponse>, ApiError> {
    let req: SynthesizeRequest = parse_body(&body)?;
    let command = Command::Synthesize { prompt: req.prompt };
    mutate(state, &id, command, req.seed).await
}

async fn edit_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<GenerationResponse>, ApiError> {
    let req: EditBody = parse_body(&body)?;
    let command = Command::Edit(EditRequest {
        op: req.op,
        prompt: req.prompt,
        target_id: req.target_id,
    });
    mutate(state, &id, command, req.seed).await
}

enum Command {
    Synthesize { prompt: String },
    Edit(EditRequest),
}

/// Runs one mutation with the session's writer lock held; a second
/// mutation arriving meanwhile is refused with 409.
async fn mutate(
    state: Arc<AppState>,
    id: &str,
    command: Command,
    seed: Option<u64>,
) -> Result<Json<GenerationResponse>, ApiError> {
    let session = state.session(id)?;
    let guard = session
        .writer
        .clone()
        .try_lock_owned()
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, format!("session `{id}` is busy with another edit")))?;
    let seed = seed.unwrap_or_else(|| rand::random::<u64>() % MAX_AUTO_SEED);
    let scene = session.data.read().expect("session poisoned").scene.clone();
    let worker_state = state.clone();
    let (scene, response, entry) = tokio::task::spawn_blocking(move || {
        let _guard = guard;
        run_command(&worker_state.model, scene, command, seed)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("generation task failed: {e}")))??;
    let mut data = session.data.write().expect("session poisoned");
    data.scene = scene;
    data.history.push(entry);
    data.last = Some(response.clone());
    Ok(Json(response))
}

fn bbox_solid(points: &[Point]) -> Solid {
    let (lo, hi) = bounds(points).unwrap_or(([0.0; 3], [0.0; 3]));
    let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
    let half = [0, 1, 2].map(|k| 0.5 * (hi[k] - lo[k]));
    Solid::cuboid(half, center)
}

/// Rewrites the prompt-derived metadata when the prompt is in the grammar
/// and names anchors present in the scene.
fn adopt_prompt(scene: &mut Interaction, prompt: &str) {
    scene.prompt = prompt.to_string();
    let Some(spec) = PromptSpec::parse(prompt) else {
        return;
    };
    let anchors: Option<Vec<usize>> = spec
        .anchors
        .iter()
        .map(|a| (0..scene.entities.len()).find(|i| scene.anchor_ref(*i) == *a))
        .collect();
    if let Some(anchors) = anchors {
        scene.meta.anchors = anchors;
        scene.meta.relation = spec.relation;
    }
    scene.meta.verb = spec.verb;
    scene.meta.adjective = spec.adjective;
    scene.meta.noun = spec.noun;
}

fn run_command(
    model: &GpNet,
    mut scene: Interaction,
    command: Command,
    seed: u64,
) -> Result<(Interaction, GenerationResponse, HistoryEntry), ApiError> {
    match command {
        Command::Synthesize { prompt } => {
            let (frame, cond) = Conditions::from_world(&scene.entity_clouds(), &prompt, model.hyper().points)?;
            let (pts, gp) = model.sample(&cond, seed)?;
            let points = frame.cloud_to_world(&pts);
            let guiding = frame.cloud_to_world(&gp.s_tilde);
            adopt_prompt(&mut scene, &prompt);
            scene.target.label = PromptSpec::parse(&prompt).map(|s| s.noun).unwrap_or_else(|| "object".into());
            scene.target.solid = bbox_solid(&points);
            scene.target.points = points.clone();
            let response = GenerationResponse {
                points: flatten(&points),
                guiding_points: flatten(&guiding),
                attention_weights: gp.w,
                seed,
                target_id: TARGET_ID.into(),
                unknown_tokens: gp.unknown_tokens,
            };
            let entry = HistoryEntry {
                kind: CommandKind::Synthesize,
                op: None,
                prompt,
                target_id: TARGET_ID.into(),
                seed,
            };
            Ok((scene, response, entry))
        }
        Command::Edit(req) => {
            let out = edit(model, &scene, &req, seed)?;
            let guiding = out.frame.cloud_to_world(&out.guiding.s_tilde);
            let new_label = PromptSpec::parse(&req.prompt).map(|s| s.noun);
            if req.target_id == TARGET_ID {
                adopt_prompt(&mut scene, &req.prompt);
                if let Some(label) = new_label {
                    scene.target.label = label;
                }
                scene.target.solid = bbox_solid(&out.points);
                scene.target.points = out.points.clone();
            } else {
                let k: usize = req.target_id[3..].parse().expect("validated by edit");
                let entity = &mut scene.entities[k];
                if let (EditOp::Replace, Some(label)) = (req.op, new_label) {
                    entity.label = label;
                }
                entity.solid = bbox_solid(&out.points);
                entity.points = out.points.clone();
            }
            let response = GenerationResponse {
                points: flatten(&out.points),
                guiding_points: flatten(&guiding),
                attention_weights: out.guiding.w,
                seed,
                target_id: req.target_id.clone(),
                unknown_tokens: out.guiding.unknown_tokens,
            };
            let entry = HistoryEntry {
                kind: CommandKind::Edit,
                op: Some(req.op),
                prompt: req.prompt,
                target_id: req.target_id,
                seed,
            };
            Ok((scene, response, entry))
        }
    }
}
