use std::collections::HashSet;

use super::{centroid, cross, dot, norm, sub, GeometryError, Point};

/// Relative tolerance for hull construction and validation.
pub const HULL_TOLERANCE: f64 = 1e-9;
/// Margin for strict interior tests.
pub const STRICT_TOLERANCE: f64 = 1e-12;

/// A facet plane `normal . p = offset` with an outward unit normal.
#[derive(Clone, Debug, PartialEq)]
pub struct Facet {
    pub normal: Point,
    pub offset: f64,
    /// Indices into [`ConvexHull::points`], counter-clockwise seen from outside.
    pub vertices: [usize; 3],
}

impl Facet {
    pub fn signed_distance(&self, p: Point) -> f64 {
        dot(self.normal, p) - self.offset
    }
}

#[derive(Clone, Debug)]
pub struct ConvexHull {
    /// The input points the hull was built from.
    pub points: Vec<Point>,
    /// Indices of points that are hull vertices, sorted.
    pub vertices: Vec<usize>,
    pub facets: Vec<Facet>,
}

impl ConvexHull {
    /// Builds the hull incrementally. Coplanar or collinear input is rejected.
    pub fn build(points: &[Point]) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        let extent = {
            let (lo, hi) = super::bounds(points).expect("non-empty");
            norm(sub(hi, lo))
        };
        let tol = HULL_TOLERANCE * extent.max(1.0);
        let seed = initial_simplex(points, tol)?;
        let interior = centroid(&seed.map(|i| points[i])).expect("four points");

        let mut faces: Vec<[usize; 3]> = Vec::new();
        let [a, b, c, d] = seed;
        for f in [[a, b, c], [a, b, d], [a, c, d], [b, c, d]] {
            faces.push(orient(points, f, interior));
        }
        let in_seed: HashSet<usize> = seed.into_iter().collect();
        for (idx, &p) in points.iter().enumerate() {
            if in_seed.contains(&idx) {
                continue;
            }
            let visible: Vec<bool> = faces
                .iter()
                .map(|f| plane(points, *f).map_or(false, |(n, o)| dot(n, p) - o > tol))
                .collect();
            if !visible.iter().any(|v| *v) {
                continue;
            }
            let mut visible_edges = HashSet::new();
            for (f, _) in faces.iter().zip(&visible).filter(|(_, v)| **v) {
                for e in 0..3 {
                    visible_edges.insert((f[e], f[(e + 1) % 3]));
                }
            }
            let horizon: Vec<(usize, usize)> = faces
                .iter()
                .zip(&visible)
                .filter(|(_, v)| **v)
                .flat_map(|(f, _)| (0..3).map(move |e| (f[e], f[(e + 1) % 3])))
                .filter(|&(u, v)| !visible_edges.contains(&(v, u)))
                .collect();
            let mut kept: Vec<[usize; 3]> = faces
                .iter()
                .zip(&visible)
                .filter(|(_, v)| !**v)
                .map(|(f, _)| *f)
                .collect();
            kept.extend(horizon.into_iter().map(|(u, v)| [u, v, idx]));
            faces = kept;
        }

        let mut facets = Vec::with_capacity(faces.len());
        for f in faces {
            if let Some((normal, offset)) = plane(points, f) {
                facets.push(Facet {
                    normal,
                    offset,
                    vertices: f,
                });
            }
        }
        let mut vertices: Vec<usize> = facets.iter().flat_map(|f| f.vertices).collect();
        vertices.sort_unstable();
        vertices.dedup();
        let hull = ConvexHull {
            points: points.to_vec(),
            vertices,
            facets,
        };
        for p in points {
            let worst = hull.max_signed_distance(*p);
            if worst > tol * 10.0 {
                return Err(GeometryError::DegenerateHull(format!(
                    "input point lies {worst:e} outside the constructed hull"
                )));
            }
        }
        Ok(hull)
    }

    /// Largest signed facet distance; non-positive for points on or inside.
    pub fn max_signed_distance(&self, p: Point) -> f64 {
        self.facets
            .iter()
            .map(|f| f.signed_distance(p))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// True iff `p` lies strictly inside every facet plane.
    pub fn contains(&self, p: Point) -> bool {
        self.facets
            .iter()
            .all(|f| f.signed_distance(p) < -STRICT_TOLERANCE)
    }

    /// Minimum distance from `p` to any facet plane.
    pub fn min_facet_distance(&self, p: Point) -> f64 {
        self.facets
            .iter()
            .map(|f| -f.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Volume via the divergence theorem over facets.
    pub fn volume(&self) -> f64 {
        self.facets
            .iter()
            .map(|f| {
                let [a, b, c] = f.vertices.map(|i| self.points[i]);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }
}

/// Hull, arithmetic centroid and the centroid's minimum facet distance.
pub fn hull_and_centroid(points: &[Point]) -> Result<(ConvexHull, Point, f64), GeometryError> {
    let hull = ConvexHull::build(points)?;
    let c = centroid(points).expect("non-empty");
    let d0 = hull.min_facet_distance(c);
    Ok((hull, c, d0))
}

fn plane(points: &[Point], f: [usize; 3]) -> Option<(Point, f64)> {
    let [a, b, c] = f.map(|i| points[i]);
    let n = cross(sub(b, a), sub(c, a));
    let len = norm(n);
    if len == 0.0 {
        return None;
    }
    let n = [n[0] / len, n[1] / len, n[2] / len];
    Some((n, dot(n, a)))
}

fn orient(points: &[Point], f: [usize; 3], interior: Point) -> [usize; 3] {
    let (n, o) = plane(points, f).expect("non-degenerate simplex face");
    if dot(n, interior) - o > 0.0 {
        [f[0], f[2], f[1]]
    } else {
        f
    }
}

fn initial_simplex(points: &[Point], tol: f64) -> Result<[usize; 4], GeometryError> {
    let degenerate = |what: &str| GeometryError::DegenerateHull(what.to_string());
    let i0 = (0..points.len())
        .min_by(|&a, &b| points[a][0].total_cmp(&points[b][0]))
        .expect("non-empty");
    let far = |score: &dyn Fn(Point) -> f64| {
        (0..points.len())
            .max_by(|&a, &b| score(points[a]).total_cmp(&score(points[b])))
            .expect("non-empty")
    };
    let p0 = points[i0];
    let i1 = far(&|p| norm(sub(p, p0)));
    if norm(sub(points[i1], p0)) <= tol {
        return Err(degenerate("all points coincide"));
    }
    let p1 = points[i1];
    let line_dist = |p: Point| norm(cross(sub(p, p0), sub(p1, p0))) / norm(sub(p1, p0));
    let i2 = far(&line_dist);
    if line_dist(points[i2]) <= tol {
        return Err(degenerate("points are collinear"));
    }
    let p2 = points[i2];
    let n = cross(sub(p1, p0), sub(p2, p0));
    let n = [n[0] / norm(n), n[1] / norm(n), n[2] / norm(n)];
    let plane_dist = |p: Point| dot(n, sub(p, p0)).abs();
    let i3 = far(&plane_dist);
    if plane_dist(points[i3]) <= tol {
        return Err(degenerate("points are coplanar"));
    }
    Ok([i0, i1, i2, i3])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_corners() -> Vec<Point> {
        let mut v = Vec::new();
        for x in [-0.5, 0.5] {
            for y in [-0.5, 0.5] {
                for z in [-0.5, 0.5] {
                    v.push([x, y, z]);
                }
            }
        }
        v
    }

    #[test]
    fn cube_hull_volume_and_d0() {
        let (hull, c, d0) = hull_and_centroid(&cube_corners()).unwrap();
        assert!((hull.volume() - 1.0).abs() < 1e-12);
        assert_eq!(hull.vertices.len(), 8);
        assert!(c.iter().all(|v| v.abs() < 1e-15));
        assert!((d0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coplanar_rejected() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert!(matches!(ConvexHull::build(&pts), Err(GeometryError::DegenerateHull(_))));
    }
}
