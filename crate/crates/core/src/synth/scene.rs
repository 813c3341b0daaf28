use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{half_height, human_shape, object_shape, Pose, ADJECTIVES, NOUNS, RAISED_BASE};
use super::grammar::{PromptSpec, Relation, VERBS};
use super::SynthError;
use crate::geometry::{GeometryError, Point, Shape, Solid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Human,
    Object,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub kind: EntityKind,
    pub label: String,
    #[serde(with = "flat_points")]
    pub points: Vec<Point>,
    pub solid: Solid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetObject {
    pub label: String,
    #[serde(with = "flat_points")]
    pub points: Vec<Point>,
    pub solid: Solid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionMeta {
    pub seed: u64,
    pub relation: Relation,
    /// Entity indices of the anchors, in prompt order.
    pub anchors: Vec<usize>,
    pub adjective: String,
    pub noun: String,
    pub verb: String,
    pub pose: Pose,
}

/// One sample: the human (entity 0), existing objects, a prompt and the
/// object the prompt asks for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub id: String,
    pub prompt: String,
    pub entities: Vec<Entity>,
    pub target: TargetObject,
    pub meta: InteractionMeta,
}

pub const TARGET_ID: &str = "target";

impl Interaction {
    pub fn human(&self) -> &Entity {
        &self.entities[0]
    }

    pub fn objects(&self) -> &[Entity] {
        &self.entities[1..]
    }

    /// Object ids: `"target"` for the target and `"obj{k}"` for entity `k >= 1`.
    pub fn object_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = (1..self.entities.len()).map(|k| format!("obj{k}")).collect();
        ids.push(TARGET_ID.to_string());
        ids
    }

    pub fn anchor_ref(&self, index: usize) -> String {
        if index == 0 {
            "me".to_string()
        } else {
            self.entities[index].label.clone()
        }
    }

    pub fn prompt_spec(&self) -> PromptSpec {
        PromptSpec {
            verb: self.meta.verb.clone(),
            adjective: self.meta.adjective.clone(),
            noun: self.meta.noun.clone(),
            relation: self.meta.relation,
            anchors: self.meta.anchors.iter().map(|i| self.anchor_ref(*i)).collect(),
        }
    }

    pub fn entity_clouds(&self) -> Vec<Vec<Point>> {
        self.entities.iter().map(|e| e.points.clone()).collect()
    }

    pub fn anchor_solids(&self) -> Vec<Solid> {
        self.meta
            .anchors
            .iter()
            .map(|i| self.entities[*i].solid.clone())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Points per cloud.
    pub points: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Objects stay within `[-room_half, room_half]` in x and y.
    pub room_half: f64,
    /// Clearance between a target and its anchor.
    pub gap: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            points: 256,
            objects_min: 2,
            objects_max: 2,
            room_half: 2.5,
            gap: 0.1,
        }
    }
}

const LAYOUT_ATTEMPTS: usize = 100;
const PLACEMENT_RETRIES: usize = 3;
const CLEARANCE: f64 = 0.1;

/// Center of the world bounding box.
pub fn aabb_center(s: &Solid) -> Point {
    let (lo, hi) = s.aabb();
    [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]))
}

fn overlaps(a: &Solid, b: &Solid, margin: f64) -> bool {
    let (alo, ahi) = a.aabb();
    let (blo, bhi) = b.aabb();
    (0..3).all(|k| alo[k] < bhi[k] + margin && blo[k] < ahi[k] + margin)
}

fn collides(s: &Solid, obstacles: &[&Solid], margin: f64) -> bool {
    obstacles.iter().any(|o| overlaps(s, o, margin))
}

fn axis_of(relation: Relation) -> Option<(usize, f64)> {
    match relation {
        Relation::LeftOf => Some((0, -1.0)),
        Relation::RightOf => Some((0, 1.0)),
        Relation::InFrontOf => Some((1, 1.0)),
        Relation::Behind => Some((1, -1.0)),
        _ => None,
    }
}

/// Places `target` (a local shape) relative to `anchors` by the relation's
/// rule, resting on the floor. Axis relations put the target beyond the
/// anchor's face with `gap` clearance and push it outwards on collision.
pub fn place_target(
    relation: Relation,
    anchors: &[&Solid],
    target: &Shape,
    obstacles: &[&Solid],
    gap: f64,
) -> Result<Solid, SynthError> {
    if anchors.len() != relation.arity() {
        return Err(SynthError::Placement(format!(
            "{relation} needs {} anchors, got {}",
            relation.arity(),
            anchors.len()
        )));
    }
    let hz = half_height(target);
    let th = Solid::new(target.clone(), [0.0; 3], 0.0).half_extents();
    let at = |xy: [f64; 2]| Solid::new(target.clone(), [xy[0], xy[1], hz], 0.0);
    let anchor = anchors[0];
    let ac = aabb_center(anchor);
    let ah = anchor.half_extents();
    let along = |axis: usize, sign: f64| -> Option<Solid> {
        (0..PLACEMENT_RETRIES).find_map(|attempt| {
            let offset = ah[axis] + th[axis] + gap + 0.1 * attempt as f64;
            let mut xy = [ac[0], ac[1]];
            xy[axis] += sign * offset;
            let s = at(xy);
            (!collides(&s, obstacles, 0.0)).then_some(s)
        })
    };
    let placed = match relation {
        Relation::LeftOf | Relation::RightOf | Relation::InFrontOf | Relation::Behind => {
            let (axis, sign) = axis_of(relation).expect("axis relation");
            along(axis, sign)
        }
        Relation::NextTo => along(0, 1.0).or_else(|| along(0, -1.0)),
        Relation::Under => {
            let s = at([ac[0], ac[1]]);
            let (alo, _) = anchor.aabb();
            let others: Vec<&Solid> = obstacles
                .iter()
                .copied()
                .filter(|o| !std::ptr::eq(*o, anchor) && **o != *anchor)
                .collect();
            (2.0 * hz < alo[2] && !collides(&s, &others, 0.0)).then_some(s)
        }
        Relation::Between => {
            let bc = aabb_center(anchors[1]);
            let s = at([0.5 * (ac[0] + bc[0]), 0.5 * (ac[1] + bc[1])]);
            (!collides(&s, obstacles, 0.0)).then_some(s)
        }
    };
    placed.ok_or_else(|| SynthError::Placement(format!("{relation} placement collides")))
}

/// Whether `center` satisfies the relation's geometric predicate.
pub fn relation_satisfied(relation: Relation, anchors: &[Solid], center: Point) -> bool {
    let Some(anchor) = anchors.first() else {
        return false;
    };
    let ac = aabb_center(anchor);
    let ah = anchor.half_extents();
    let d = [center[0] - ac[0], center[1] - ac[1]];
    match relation {
        Relation::LeftOf => d[0] < -ah[0],
        Relation::RightOf => d[0] > ah[0],
        Relation::InFrontOf => d[1] > ah[1],
        Relation::Behind => d[1] < -ah[1],
        Relation::NextTo => d[0].abs() > ah[0] && d[1].abs() < ah[1],
        Relation::Under => (d[0] * d[0] + d[1] * d[1]).sqrt() < 0.15 && center[2] < anchor.aabb().0[2],
        Relation::Between => {
            let Some(other) = anchors.get(1) else {
                return false;
            };
            let bc = aabb_center(other);
            let seg = [bc[0] - ac[0], bc[1] - ac[1]];
            let len2 = seg[0] * seg[0] + seg[1] * seg[1];
            if len2 == 0.0 {
                return false;
            }
            let s = (d[0] * seg[0] + d[1] * seg[1]) / len2;
            let perp = (d[0] * seg[1] - d[1] * seg[0]).abs() / len2.sqrt();
            (0.25..=0.75).contains(&s) && perp < 0.25 * len2.sqrt()
        }
    }
}

/// Signed offset of `center` from the anchor center along the relation's
/// direction (left axis for left-of, and so on); `None` for relations
/// without a single axis.
pub fn relation_projection(relation: Relation, anchor: &Solid, center: Point) -> Option<f64> {
    let (axis, sign) = axis_of(relation)?;
    Some(sign * (center[axis] - aabb_center(anchor)[axis]))
}

/// Rounds to 9 significant digits, the precision of the dataset format.
pub fn quantize(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

pub fn quantize_points(points: &mut [Point]) {
    for p in points.iter_mut() {
        for v in p.iter_mut() {
            *v = quantize(*v);
        }
    }
}

struct Layout {
    human: Solid,
    pose: Pose,
    objects: Vec<(String, String, Solid)>,
    anchors: Vec<usize>,
    target: Solid,
    adjective: String,
    noun: String,
}

fn pick_adjective(rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.35) {
        String::new()
    } else {
        ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())].to_string()
    }
}

fn pick_noun(rng: &mut ChaCha8Rng, used: &[String]) -> String {
    loop {
        let n = NOUNS[rng.gen_range(0..NOUNS.len())];
        if !used.iter().any(|u| u == n) {
            return n.to_string();
        }
    }
}

fn object_at(noun: &str, adjective: &str, xy: [f64; 2]) -> Solid {
    let shape = object_shape(noun, adjective).expect("catalog noun");
    let hz = half_height(&shape);
    Solid::new(shape, [xy[0], xy[1], hz], 0.0)
}

fn in_room(s: &Solid, room_half: f64) -> bool {
    let (lo, hi) = s.aabb();
    (0..2).all(|k| lo[k] >= -room_half && hi[k] <= room_half)
}

fn try_layout(rng: &mut ChaCha8Rng, relation: Relation, cfg: &SynthConfig) -> Option<Layout> {
    let pose = if relation == Relation::Under {
        *[Pose::Lying, Pose::CrossLegged].choose(rng).expect("non-empty")
    } else {
        *[Pose::Standing, Pose::Sitting].choose(rng).expect("non-empty")
    };
    let human = Solid::new(
        human_shape(pose),
        [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0],
        0.0,
    );
    let hc = aabb_center(&human);

    let (noun, adjective, target_shape) = loop {
        let noun = pick_noun(rng, &[]);
        let adjective = pick_adjective(rng);
        let shape = object_shape(&noun, &adjective).expect("catalog noun");
        if relation != Relation::Under || 2.0 * half_height(&shape) < RAISED_BASE - 0.05 {
            break (noun, adjective, shape);
        }
    };
    let th = Solid::new(target_shape.clone(), [0.0; 3], 0.0).half_extents();
    let n_objects = rng.gen_range(cfg.objects_min..=cfg.objects_max);

    let object_anchors = match relation {
        Relation::Under => 0,
        Relation::Between => {
            if n_objects >= 2 && rng.gen_bool(0.5) {
                2
            } else {
                1.min(n_objects)
            }
        }
        _ => usize::from(n_objects >= 1 && rng.gen_bool(0.5)),
    };
    if relation == Relation::Between && object_anchors == 0 {
        return None;
    }

    let mut used = vec![noun.clone()];
    let mut objects: Vec<(String, String, Solid)> = Vec::new();
    let mut anchors: Vec<usize> = Vec::new();
    if object_anchors == 0 || (relation == Relation::Between && object_anchors == 1) {
        anchors.push(0);
    }
    // Objects that anchor the target sit at a moderate distance from the human;
    // the second anchor of `between` leaves room for the target in the middle.
    let mut prev_center = hc;
    let mut prev_half = human.half_extents();
    for k in 0..object_anchors {
        let n = pick_noun(rng, &used);
        let a = pick_adjective(rng);
        let probe = object_at(&n, &a, [0.0, 0.0]);
        let oh = probe.half_extents();
        let xy = if relation == Relation::Between {
            let axis = rng.gen_range(0..2);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let sep = prev_half[axis] + oh[axis] + 2.0 * (th[axis] + cfg.gap) + rng.gen_range(0.05..0.4);
            let mut xy = [prev_center[0], prev_center[1]];
            xy[axis] += sign * sep;
            xy
        } else {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let dist = rng.gen_range(1.0..1.8);
            [hc[0] + dist * angle.cos(), hc[1] + dist * angle.sin()]
        };
        let s = object_at(&n, &a, xy);
        let mut obstacles: Vec<&Solid> = vec![&human];
        obstacles.extend(objects.iter().map(|o| &o.2));
        if collides(&s, &obstacles, CLEARANCE) || !in_room(&s, cfg.room_half) {
            return None;
        }
        prev_center = aabb_center(&s);
        prev_half = s.half_extents();
        used.push(n.clone());
        objects.push((n, a, s));
        anchors.push(k + 1);
    }

    let target = {
        let anchor_solids: Vec<&Solid> = anchors
            .iter()
            .map(|i| if *i == 0 { &human } else { &objects[i - 1].2 })
            .collect();
        let mut obstacles: Vec<&Solid> = vec![&human];
        obstacles.extend(objects.iter().map(|o| &o.2));
        place_target(relation, &anchor_solids, &target_shape, &obstacles, cfg.gap).ok()?
    };

    while objects.len() < n_objects {
        let n = pick_noun(rng, &used);
        let a = pick_adjective(rng);
        let mut placed = None;
        for _ in 0..LAYOUT_ATTEMPTS {
            let xy = [
                rng.gen_range(-cfg.room_half..cfg.room_half),
                rng.gen_range(-cfg.room_half..cfg.room_half),
            ];
            let s = object_at(&n, &a, xy);
            let mut obstacles: Vec<&Solid> = vec![&human, &target];
            obstacles.extend(objects.iter().map(|o| &o.2));
            if in_room(&s, cfg.room_half) && !collides(&s, &obstacles, CLEARANCE) {
                placed = Some(s);
                break;
            }
        }
        let s = placed?;
        used.push(n.clone());
        objects.push((n, a, s));
    }
    Some(Layout {
        human,
        pose,
        objects,
        anchors,
        target,
        adjective,
        noun,
    })
}

/// Generates one interaction; a pure function of `(seed, cfg)`.
pub fn gen_interaction(seed: u64, cfg: &SynthConfig) -> Result<Interaction, SynthError> {
    if cfg.points == 0 || cfg.objects_min > cfg.objects_max || cfg.objects_max > 8 {
        return Err(SynthError::Config(format!("{cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relation = Relation::ALL[rng.gen_range(0..Relation::ALL.len())];
    let mut layout = None;
    for _ in 0..LAYOUT_ATTEMPTS {
        if let Some(l) = try_layout(&mut rng, relation, cfg) {
            layout = Some(l);
            break;
        }
    }
    let mut layout = layout.ok_or_else(|| {
        SynthError::Placement(format!("no valid {relation} layout in {LAYOUT_ATTEMPTS} attempts"))
    })?;

    // Shuffle object order so that anchors are not always the first objects.
    let mut order: Vec<usize> = (0..layout.objects.len()).collect();
    order.shuffle(&mut rng);
    let objects: Vec<(String, String, Solid)> = order.iter().map(|i| layout.objects[*i].clone()).collect();
    layout.anchors = layout
        .anchors
        .iter()
        .map(|a| {
            if *a == 0 {
                0
            } else {
                1 + order.iter().position(|o| *o == a - 1).expect("permutation")
            }
        })
        .collect();

    let sample = |solid: &Solid, rng: &mut ChaCha8Rng| -> Result<Vec<Point>, GeometryError> {
        let mut pts = solid.sample_with(cfg.points, rng)?;
        quantize_points(&mut pts);
        Ok(pts)
    };
    let mut entities = vec![Entity {
        kind: EntityKind::Human,
        label: "human".to_string(),
        points: sample(&layout.human, &mut rng)?,
        solid: layout.human.clone(),
    }];
    for (noun, _, solid) in &objects {
        entities.push(Entity {
            kind: EntityKind::Object,
            label: noun.clone(),
            points: sample(solid, &mut rng)?,
            solid: solid.clone(),
        });
    }
    let target = TargetObject {
        label: layout.noun.clone(),
        points: sample(&layout.target, &mut rng)?,
        solid: layout.target.clone(),
    };
    let verb = VERBS[rng.gen_range(0..VERBS.len())].to_string();
    let mut interaction = Interaction {
        id: format!("syn-{seed:06}"),
        prompt: String::new(),
        entities,
        target,
        meta: InteractionMeta {
            seed,
            relation,
            anchors: layout.anchors,
            adjective: layout.adjective,
            noun: layout.noun,
            verb,
            pose: layout.pose,
        },
    };
    interaction.prompt = interaction.prompt_spec().render();
    Ok(interaction)
}

/// Interactions for seeds `start..start + count`.
pub fn gen_dataset(start: u64, count: usize, cfg: &SynthConfig) -> Result<Vec<Interaction>, SynthError> {
    (start..start + count as u64).map(|s| gen_interaction(s, cfg)).collect()
}

pub(crate) mod flat_points {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::geometry::Point;

    pub fn serialize<S: Serializer>(points: &[Point], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(points.iter().flatten())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Point>, D::Error> {
        let flat = Vec::<f64>::deserialize(d)?;
        if flat.len() % 3 != 0 {
            return Err(D::Error::custom(format!(
                "flat point array length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}
