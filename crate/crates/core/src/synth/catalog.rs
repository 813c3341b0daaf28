use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Shape, Solid};

/// Base dimensions of every object noun, as local-frame shapes resting on z = 0
/// once centered at their half height.
pub const NOUNS: &[&str] = &[
    "desk", "chair", "table", "sofa", "bed", "shelf", "lamp", "cabinet", "stool", "ottoman",
    "cushion", "rug", "nightstand", "bench",
];

/// Shape adjectives; the empty adjective keeps the base shape.
pub const ADJECTIVES: &[&str] = &["small", "large", "tall", "low", "wide", "round", "one-seater"];

fn base_shape(noun: &str) -> Option<Shape> {
    let b = |x: f64, y: f64, z: f64| Shape::Box { half: [x, y, z] };
    let c = |r: f64, h: f64| Shape::Cylinder {
        radius: r,
        half_height: h,
    };
    Some(match noun {
        "desk" => b(0.6, 0.35, 0.375),
        "chair" => b(0.25, 0.25, 0.45),
        "table" => c(0.45, 0.375),
        "sofa" => b(0.9, 0.4, 0.4),
        "bed" => b(1.0, 0.8, 0.25),
        "shelf" => b(0.4, 0.2, 0.9),
        "lamp" => c(0.15, 0.75),
        "cabinet" => b(0.4, 0.3, 0.5),
        "stool" => c(0.2, 0.2),
        "ottoman" => Shape::Prism {
            polygon: (0..6)
                .map(|i| {
                    let a = std::f64::consts::PI / 3.0 * i as f64;
                    [0.3 * a.cos(), 0.3 * a.sin()]
                })
                .collect(),
            half_height: 0.18,
        },
        "cushion" => b(0.25, 0.25, 0.08),
        "rug" => b(0.7, 0.5, 0.03),
        "nightstand" => b(0.25, 0.2, 0.3),
        "bench" => b(0.6, 0.2, 0.22),
        _ => return None,
    })
}

fn scaled(shape: Shape, sx: f64, sy: f64, sz: f64) -> Shape {
    match shape {
        Shape::Box { half } => Shape::Box {
            half: [half[0] * sx, half[1] * sy, half[2] * sz],
        },
        Shape::Cylinder {
            radius,
            half_height,
        } => Shape::Cylinder {
            radius: radius * sx.max(sy),
            half_height: half_height * sz,
        },
        Shape::Prism {
            polygon,
            half_height,
        } => Shape::Prism {
            polygon: polygon.iter().map(|v| [v[0] * sx, v[1] * sy]).collect(),
            half_height: half_height * sz,
        },
        other => other,
    }
}

/// Local-frame shape for a noun with an optional adjective.
pub fn object_shape(noun: &str, adjective: &str) -> Option<Shape> {
    let base = base_shape(noun)?;
    Some(match adjective {
        "" => base,
        "small" => scaled(base, 0.75, 0.75, 0.75),
        "large" => scaled(base, 1.25, 1.25, 1.15),
        "tall" => scaled(base, 1.0, 1.0, 1.4),
        "low" => scaled(base, 1.0, 1.0, 0.65),
        "wide" => scaled(base, 1.4, 1.0, 1.0),
        "one-seater" => scaled(base, 0.55, 1.0, 1.0),
        "round" => match base {
            Shape::Box { half } => Shape::Cylinder {
                radius: half[0].max(half[1]),
                half_height: half[2],
            },
            other => other,
        },
        _ => return None,
    })
}

/// Half height of a local shape (its center sits at this z on the floor).
pub fn half_height(shape: &Shape) -> f64 {
    Solid::new(shape.clone(), [0.0; 3], 0.0).half_extents()[2]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pose {
    Standing,
    Sitting,
    /// Lying on an unseen raised surface.
    Lying,
    /// Cross-legged on an unseen raised surface.
    CrossLegged,
}

impl Pose {
    /// Poses whose body stays above [`RAISED_BASE`], leaving room underneath.
    pub fn is_raised(self) -> bool {
        matches!(self, Pose::Lying | Pose::CrossLegged)
    }
}

/// Lowest body height of raised poses.
pub const RAISED_BASE: f64 = 0.47;

fn capsule(a: Point, b: Point, radius: f64) -> Solid {
    Solid::new(Shape::Capsule { a, b, radius }, [0.0; 3], 0.0)
}

/// Capsule skeleton facing +y with its feet (or seat) origin at the local origin.
pub fn human_shape(pose: Pose) -> Shape {
    let parts = match pose {
        Pose::Standing => vec![
            capsule([0.0, 0.0, 0.95], [0.0, 0.0, 1.45], 0.15),
            capsule([0.0, 0.0, 1.6], [0.0, 0.0, 1.62], 0.1),
            capsule([-0.1, 0.0, 0.08], [-0.1, 0.0, 0.85], 0.07),
            capsule([0.1, 0.0, 0.08], [0.1, 0.0, 0.85], 0.07),
            capsule([-0.24, 0.0, 0.9], [-0.24, 0.0, 1.4], 0.05),
            capsule([0.24, 0.0, 0.9], [0.24, 0.0, 1.4], 0.05),
        ],
        Pose::Sitting => vec![
            capsule([0.0, -0.05, 0.6], [0.0, -0.05, 1.05], 0.15),
            capsule([0.0, -0.05, 1.2], [0.0, -0.05, 1.22], 0.1),
            capsule([-0.1, -0.05, 0.45], [-0.1, 0.4, 0.45], 0.07),
            capsule([0.1, -0.05, 0.45], [0.1, 0.4, 0.45], 0.07),
            capsule([-0.1, 0.4, 0.45], [-0.1, 0.4, 0.07], 0.07),
            capsule([0.1, 0.4, 0.45], [0.1, 0.4, 0.07], 0.07),
            capsule([-0.24, -0.05, 0.65], [-0.24, 0.25, 0.8], 0.05),
            capsule([0.24, -0.05, 0.65], [0.24, 0.25, 0.8], 0.05),
        ],
        Pose::Lying => vec![
            capsule([0.0, -0.3, 0.62], [0.0, 0.2, 0.62], 0.15),
            capsule([0.0, 0.4, 0.62], [0.0, 0.42, 0.62], 0.1),
            capsule([-0.1, -1.15, 0.55], [-0.1, -0.35, 0.55], 0.07),
            capsule([0.1, -1.15, 0.55], [0.1, -0.35, 0.55], 0.07),
            capsule([-0.25, -0.3, 0.54], [-0.25, 0.15, 0.54], 0.05),
            capsule([0.25, -0.3, 0.54], [0.25, 0.15, 0.54], 0.05),
        ],
        Pose::CrossLegged => vec![
            capsule([0.0, 0.0, 0.66], [0.0, 0.0, 1.1], 0.15),
            capsule([0.0, 0.0, 1.25], [0.0, 0.0, 1.27], 0.1),
            capsule([-0.1, 0.0, 0.55], [0.25, 0.2, 0.55], 0.07),
            capsule([0.1, 0.0, 0.55], [-0.25, 0.2, 0.55], 0.07),
            capsule([-0.24, 0.0, 0.75], [-0.22, 0.2, 0.85], 0.05),
            capsule([0.24, 0.0, 0.75], [0.22, 0.2, 0.85], 0.05),
        ],
    };
    Shape::Union { parts }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_noun_and_adjective_builds() {
        for n in NOUNS {
            assert!(object_shape(n, "").is_some());
            for a in ADJECTIVES {
                let s = object_shape(n, a).unwrap();
                assert!(Solid::new(s, [0.0; 3], 0.0).volume() > 0.0);
            }
        }
        assert!(object_shape("piano", "").is_none());
    }

    #[test]
    fn raised_poses_clear_the_base() {
        for pose in [Pose::Lying, Pose::CrossLegged] {
            let (lo, _) = Solid::new(human_shape(pose), [0.0; 3], 0.0).aabb();
            assert!(lo[2] >= RAISED_BASE - 1e-9, "{pose:?} {lo:?}");
        }
    }
}
