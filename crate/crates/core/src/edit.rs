//! Text-driven edits of a synthesized object: replacement, shape
//! alternation (inpainting from the lowest quarter) and displacement, plus
//! ground-truth construction for evaluating them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{icp_align_z_locked, sample_interior, AlignmentReport, IcpOptions, Point, Solid};
use crate::gpnet::{Conditions, GpNet, GuidingPoints, ModelError};
use crate::metrics::{compare, mean_report, MetricReport, SceneFrame, DEFAULT_F1_TAU};
use crate::synth::{
    half_height, object_shape, place_target, Interaction, PromptSpec, Relation, ADJECTIVES, NOUNS, TARGET_ID,
};

/// Fraction of the object's points held fixed by shape alternation.
pub const FIXED_FRACTION: f64 = 0.25;

#[derive(Debug, thiserror::Error)]
pub enum EditError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown object id `{0}`")]
    UnknownObject(String),
    #[error("invalid {op} prompt: {reason}")]
    InvalidPrompt { op: EditOp, reason: String },
    #[error("ground truth rejected: alignment fitness is 0")]
    Rejected,
    #[error("cannot build ground truth: {0}")]
    GroundTruth(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Replace,
    AlterShape,
    Displace,
}

impl EditOp {
    pub const ALL: [EditOp; 3] = [EditOp::Replace, EditOp::AlterShape, EditOp::Displace];

    pub fn as_str(self) -> &'static str {
        match self {
            EditOp::Replace => "replace",
            EditOp::AlterShape => "alter_shape",
            EditOp::Displace => "displace",
        }
    }
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EditOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EditOp::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown edit op `{s}` (expected replace, alter_shape or displace)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub op: EditOp,
    pub prompt: String,
    /// `"target"` or `"obj{k}"`.
    pub target_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditOutcome {
    /// Edited object in world coordinates.
    pub points: Vec<Point>,
    /// Guiding points in the model frame.
    pub guiding: GuidingPoints,
    pub frame: SceneFrame,
    /// Rows held fixed (alter_shape only).
    pub mask: Option<Vec<bool>>,
}

/// The edited object and the remaining scene (human first).
pub struct EditScene {
    pub object: Vec<Point>,
    pub solid: Solid,
    pub label: String,
    pub entities: Vec<Vec<Point>>,
}

/// Splits the interaction into the object named by `id` and everything else.
/// Editing an existing object `obj{k}` keeps the interaction's target in the scene.
pub fn edit_scene(item: &Interaction, id: &str) -> Result<EditScene, EditError> {
    if id == TARGET_ID {
        return Ok(EditScene {
            object: item.target.points.clone(),
            solid: item.target.solid.clone(),
            label: item.target.label.clone(),
            entities: item.entity_clouds(),
        });
    }
    let k: usize = id
        .strip_prefix("obj")
        .and_then(|k| k.parse().ok())
        .filter(|k| *k >= 1 && *k < item.entities.len())
        .ok_or_else(|| EditError::UnknownObject(id.to_string()))?;
    let mut entities: Vec<Vec<Point>> = item
        .entities
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .map(|(_, e)| e.points.clone())
        .collect();
    entities.push(item.target.points.clone());
    let e = &item.entities[k];
    Ok(EditScene {
        object: e.points.clone(),
        solid: e.solid.clone(),
        label: e.label.clone(),
        entities,
    })
}

/// Checks the op-specific prompt contract against the object being edited.
/// Prompts outside the grammar are accepted (unknown words go through the
/// unknown-token embedding).
pub fn validate_request(item: &Interaction, scene: &EditScene, req: &EditRequest) -> Result<(), EditError> {
    let Some(spec) = PromptSpec::parse(&req.prompt) else {
        tracing::warn!(prompt = %req.prompt, "edit prompt is outside the grammar; skipping validation");
        return Ok(());
    };
    let invalid = |reason: String| EditError::InvalidPrompt { op: req.op, reason };
    let current_adj = if req.target_id == TARGET_ID {
        item.meta.adjective.clone()
    } else {
        String::new()
    };
    match req.op {
        EditOp::Replace if spec.noun == scene.label => {
            Err(invalid(format!("replacement must name a new object, got `{}` again", spec.noun)))
        }
        EditOp::AlterShape if spec.noun != scene.label => {
            Err(invalid(format!("must keep the noun `{}`, got `{}`", scene.label, spec.noun)))
        }
        EditOp::AlterShape if spec.adjective.is_empty() || spec.adjective == current_adj => {
            Err(invalid("must give a new adjective".into()))
        }
        EditOp::Displace if spec.noun != scene.label => {
            Err(invalid(format!("must keep the noun `{}`, got `{}`", scene.label, spec.noun)))
        }
        EditOp::Displace if req.target_id == TARGET_ID && spec.relation == item.meta.relation => {
            Err(invalid(format!("must give a new relation, `{}` is unchanged", spec.relation)))
        }
        _ => Ok(()),
    }
}

/// The `fraction` of rows with the lowest z, ties broken by index.
pub fn lowest_z_mask(points: &[Point], fraction: f64) -> Vec<bool> {
    let n = points.len();
    let count = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| points[*a][2].total_cmp(&points[*b][2]).then(a.cmp(b)));
    let mut mask = vec![false; n];
    for i in order.into_iter().take(count) {
        mask[i] = true;
    }
    mask
}

/// Runs an edit. The interaction is not modified.
pub fn edit(model: &GpNet, item: &Interaction, req: &EditRequest, seed: u64) -> Result<EditOutcome, EditError> {
    let scene = edit_scene(item, &req.target_id)?;
    validate_request(item, &scene, req)?;
    let n = model.hyper().points;
    let (frame, cond) = Conditions::from_world(&scene.entities, &req.prompt, n)?;
    match req.op {
        EditOp::Replace | EditOp::Displace => {
            let (pts, guiding) = model.sample(&cond, seed)?;
            Ok(EditOutcome {
                points: frame.cloud_to_world(&pts),
                guiding,
                frame,
                mask: None,
            })
        }
        EditOp::AlterShape => {
            let original = crate::gpnet::resample(&scene.object, n);
            let mask = lowest_z_mask(&original, FIXED_FRACTION);
            let known = frame.cloud_to_frame(&original);
            let (pts, guiding) = model.inpaint(&cond, &mask, &known, seed)?;
            let mut points = frame.cloud_to_world(&pts);
            // The frame round trip is not exact; restore the fixed rows verbatim.
            for ((p, o), m) in points.iter_mut().zip(&original).zip(&mask) {
                if *m {
                    *p = *o;
                }
            }
            Ok(EditOutcome {
                points,
                guiding,
                frame,
                mask: Some(mask),
            })
        }
    }
}

/// Aligns `candidate` onto `original` with z-locked ICP.
pub fn build_replacement_gt(
    original: &[Point],
    candidate: &[Point],
    opts: &IcpOptions,
) -> Result<(Vec<Point>, AlignmentReport), EditError> {
    if original.is_empty() || candidate.is_empty() {
        return Err(EditError::GroundTruth("empty cloud".into()));
    }
    let report = icp_align_z_locked(candidate, original, opts);
    if report.fitness == 0.0 {
        return Err(EditError::Rejected);
    }
    let aligned = candidate.iter().map(|p| report.transform.apply(*p)).collect();
    Ok((aligned, report))
}

/// An edit with its constructed ground truth.
#[derive(Clone, Debug)]
pub struct EditCase {
    pub request: EditRequest,
    pub truth: Vec<Point>,
}

fn object_solid(noun: &str, adjective: &str, at: Point) -> Result<Solid, EditError> {
    let shape = object_shape(noun, adjective).ok_or_else(|| EditError::GroundTruth(format!("no shape for {noun}")))?;
    let hz = half_height(&shape);
    Ok(Solid::new(shape, [at[0], at[1], hz], 0.0))
}

/// Builds an edit of the interaction's target for `op` with a ground truth:
/// replacement and alternation sample the new shape at the target's place
/// and align it with ICP, moving on to the next noun or adjective when the
/// alignment is rejected; displacement re-runs the placement rule with a new
/// relation to the first anchor.
pub fn make_case(item: &Interaction, op: EditOp, seed: u64) -> Result<EditCase, EditError> {
    let spec = item.prompt_spec();
    let n = item.target.points.len();
    let center = item.target.solid.center;
    let icp = IcpOptions::default();
    match op {
        EditOp::Replace => {
            let scene_nouns: Vec<&str> = item.entities.iter().map(|e| e.label.as_str()).collect();
            let start = NOUNS.iter().position(|x| *x == spec.noun).unwrap_or(0);
            let nouns = (1..NOUNS.len())
                .map(|k| NOUNS[(start + k) % NOUNS.len()])
                .filter(|x| !scene_nouns.contains(x));
            for noun in nouns {
                let solid = object_solid(noun, &spec.adjective, center)?;
                let candidate = sample_interior(&solid, n, seed).map_err(|e| EditError::GroundTruth(e.to_string()))?;
                let truth = match build_replacement_gt(&item.target.points, &candidate, &icp) {
                    Ok((truth, _)) => truth,
                    Err(EditError::Rejected) => continue,
                    Err(e) => return Err(e),
                };
                let prompt = PromptSpec {
                    noun: noun.to_string(),
                    ..spec.clone()
                }
                .render();
                return Ok(EditCase {
                    request: EditRequest {
                        op,
                        prompt,
                        target_id: TARGET_ID.into(),
                    },
                    truth,
                });
            }
            Err(EditError::GroundTruth("no unused noun aligns with the target".into()))
        }
        EditOp::AlterShape => {
            let start = ADJECTIVES.iter().position(|x| *x == spec.adjective).unwrap_or(ADJECTIVES.len() - 1);
            let adjectives = (1..=ADJECTIVES.len())
                .map(|k| ADJECTIVES[(start + k) % ADJECTIVES.len()])
                .filter(|a| *a != spec.adjective);
            for adjective in adjectives {
                let solid = object_solid(&spec.noun, adjective, center)?;
                let candidate = sample_interior(&solid, n, seed).map_err(|e| EditError::GroundTruth(e.to_string()))?;
                let truth = match build_replacement_gt(&item.target.points, &candidate, &icp) {
                    Ok((truth, _)) => truth,
                    Err(EditError::Rejected) => continue,
                    Err(e) => return Err(e),
                };
                let prompt = PromptSpec {
                    adjective: adjective.to_string(),
                    ..spec.clone()
                }
                .render();
                return Ok(EditCase {
                    request: EditRequest {
                        op,
                        prompt,
                        target_id: TARGET_ID.into(),
                    },
                    truth,
                });
            }
            Err(EditError::GroundTruth("no other adjective aligns with the target".into()))
        }
        EditOp::Displace => {
            let anchor_idx = item.meta.anchors[0];
            let anchor = &item.entities[anchor_idx].solid;
            let obstacles: Vec<&Solid> = item.entities.iter().map(|e| &e.solid).collect();
            let shape = item.target.solid.shape.clone();
            for relation in [Relation::LeftOf, Relation::RightOf, Relation::InFrontOf, Relation::Behind] {
                if relation == item.meta.relation {
                    continue;
                }
                let Ok(placed) = place_target(relation, &[anchor], &shape, &obstacles, 0.1) else {
                    continue;
                };
                let truth = sample_interior(&placed, n, seed).map_err(|e| EditError::GroundTruth(e.to_string()))?;
                let prompt = PromptSpec {
                    relation,
                    anchors: vec![item.anchor_ref(anchor_idx)],
                    ..spec.clone()
                }
                .render();
                return Ok(EditCase {
                    request: EditRequest {
                        op,
                        prompt,
                        target_id: TARGET_ID.into(),
                    },
                    truth,
                });
            }
            Err(EditError::GroundTruth("no free relation for displacement".into()))
        }
    }
}

/// Per-operation mean metrics over `items` (whole-object clouds), with
/// `generate` producing the edited object for each case.
pub fn evaluate_editing_with<G>(items: &[Interaction], seed: u64, mut generate: G) -> Result<Vec<(EditOp, MetricReport)>, EditError>
where
    G: FnMut(&Interaction, &EditCase) -> Result<Vec<Point>, EditError>,
{
    let mut out = Vec::new();
    for op in EditOp::ALL {
        let mut reports = Vec::new();
        for (i, item) in items.iter().enumerate() {
            let case = make_case(item, op, seed.wrapping_add(i as u64))?;
            let points = generate(item, &case)?;
            let report =
                compare(&points, &case.truth, DEFAULT_F1_TAU).map_err(|e| EditError::GroundTruth(e.to_string()))?;
            reports.push(report);
        }
        out.push((op, mean_report(&reports)));
    }
    Ok(out)
}

pub fn evaluate_editing(model: &GpNet, items: &[Interaction], seed: u64) -> Result<Vec<(EditOp, MetricReport)>, EditError> {
    evaluate_editing_with(items, seed, |item, case| Ok(edit(model, item, &case.request, seed)?.points))
}
