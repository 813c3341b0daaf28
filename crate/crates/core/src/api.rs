//! JSON bodies of the HTTP service. Point arrays are flat row-major lists.

use serde::{Deserialize, Serialize};

use crate::edit::EditOp;
use crate::geometry::Point;
use crate::synth::Interaction;

/// Largest point count accepted on the wire.
pub const MAX_WIRE_POINTS: usize = 1024;

pub fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Inverse of [`flatten`]; `None` when the length is not a multiple of 3.
pub fn unflatten(values: &[f64]) -> Option<Vec<Point>> {
    if values.len() % 3 != 0 {
        return None;
    }
    Some(values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Either an uploaded scene or a generator seed, not both.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    #[serde(default)]
    pub scene: Option<Interaction>,
    #[serde(default)]
    pub generator_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizeRequest {
    pub prompt: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditBody {
    pub op: EditOp,
    pub prompt: String,
    pub target_id: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Result of a synthesis or an edit, in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub points: Vec<f64>,
    pub guiding_points: Vec<f64>,
    /// One weight per conditioning entity (human first).
    pub attention_weights: Vec<f64>,
    pub seed: u64,
    /// Object the result was written to.
    pub target_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unknown_tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Synthesize,
    Edit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub kind: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<EditOp>,
    pub prompt: String,
    pub target_id: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub checkpoint_hash: String,
    pub scene: Interaction,
    pub history: Vec<HistoryEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub checkpoint_hash: String,
    pub points: usize,
    pub ablation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}
