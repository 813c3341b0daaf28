//! Point-cloud geometry: solids, convex hulls, transforms, nearest-neighbour
//! search and z-locked ICP.

mod hull;
mod icp;
mod kdtree;
mod solid;
mod transform;

pub use hull::{hull_and_centroid, ConvexHull, Facet, HULL_TOLERANCE, STRICT_TOLERANCE};
pub use icp::{icp_align_z_locked, AlignmentReport, IcpOptions, ZTransform};
pub use kdtree::KdTree;
pub use solid::{sample_interior, Shape, Solid};
pub use transform::{apply_transform, compose, to_matrix, AffineRow, IDENTITY_ROW};

/// A point in meters.
pub type Point = [f64; 3];

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate solid: {0}")]
    DegenerateSolid(String),
    #[error("degenerate hull: {0}")]
    DegenerateHull(String),
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("rejection sampling gave up after {0} draws")]
    SamplingExhausted(usize),
}

pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist2(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Arithmetic mean of the points; `None` for an empty slice.
pub fn centroid(points: &[Point]) -> Option<Point> {
    if points.is_empty() {
        return None;
    }
    let s = points.iter().fold([0.0; 3], |acc, p| add(acc, *p));
    Some(scale(s, 1.0 / points.len() as f64))
}

/// Axis-aligned bounds as (min, max).
pub fn bounds(points: &[Point]) -> Option<(Point, Point)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        (
            [lo[0].min(p[0]), lo[1].min(p[1]), lo[2].min(p[2])],
            [hi[0].max(p[0]), hi[1].max(p[1]), hi[2].max(p[2])],
        )
    }))
}

pub fn translate(points: &[Point], t: Point) -> Vec<Point> {
    points.iter().map(|p| add(*p, t)).collect()
}

/// Rotation by `theta` radians about the z axis.
pub fn rotate_z(p: Point, theta: f64) -> Point {
    let (s, c) = theta.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}
