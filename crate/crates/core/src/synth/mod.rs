//! Synthetic interactions: primitive-solid rooms, a capsule-skeleton human,
//! grammar prompts and rule-based target placement.

mod catalog;
mod grammar;
mod io;
mod scene;

pub use catalog::{half_height, human_shape, object_shape, Pose, ADJECTIVES, NOUNS, RAISED_BASE};
pub use grammar::{tokenize, PromptSpec, Relation, Vocabulary, UNKNOWN_TOKEN, VERBS};
pub use io::{load_dataset, save_dataset};
pub use scene::{
    aabb_center, gen_dataset, gen_interaction, place_target, quantize, quantize_points, relation_projection,
    relation_satisfied, Entity, EntityKind, Interaction, InteractionMeta, SynthConfig, TargetObject, TARGET_ID,
};

use crate::geometry::GeometryError;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("placement failed: {0}")]
    Placement(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("dataset line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset encoding: {0}")]
    Json(#[from] serde_json::Error),
}

/// Seeds of the default training split.
pub const TRAIN_SEEDS: std::ops::Range<u64> = 0..180;
/// Seeds of the default test split.
pub const TEST_SEEDS: std::ops::Range<u64> = 180..200;
