use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{add, dot, rotate_z, sub, GeometryError, Point};

/// Shape of a solid in its local frame (centered at the origin, z up).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box { half: [f64; 3] },
    /// Vertical cylinder.
    Cylinder { radius: f64, half_height: f64 },
    /// All points within `radius` of the segment `a`-`b`.
    Capsule { a: Point, b: Point, radius: f64 },
    /// Polygon in the xy plane extruded along z.
    Prism {
        polygon: Vec<[f64; 2]>,
        half_height: f64,
    },
    Union { parts: Vec<Solid> },
}

/// A shape placed in the world by a center and a rotation about z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solid {
    pub shape: Shape,
    pub center: Point,
    pub yaw: f64,
}

impl Solid {
    pub fn new(shape: Shape, center: Point, yaw: f64) -> Self {
        Self { shape, center, yaw }
    }

    pub fn cuboid(half: [f64; 3], center: Point) -> Self {
        Self::new(Shape::Box { half }, center, 0.0)
    }

    fn to_local(&self, p: Point) -> Point {
        rotate_z(sub(p, self.center), -self.yaw)
    }

    pub fn contains(&self, p: Point) -> bool {
        let q = self.to_local(p);
        match &self.shape {
            Shape::Box { half } => (0..3).all(|k| q[k].abs() <= half[k]),
            Shape::Cylinder {
                radius,
                half_height,
            } => q[0] * q[0] + q[1] * q[1] <= radius * radius && q[2].abs() <= *half_height,
            Shape::Capsule { a, b, radius } => segment_dist2(q, *a, *b) <= radius * radius,
            Shape::Prism {
                polygon,
                half_height,
            } => q[2].abs() <= *half_height && point_in_polygon([q[0], q[1]], polygon),
            Shape::Union { parts } => parts.iter().any(|s| s.contains(q)),
        }
    }

    fn local_bounds(&self) -> (Point, Point) {
        match &self.shape {
            Shape::Box { half } => ([-half[0], -half[1], -half[2]], *half),
            Shape::Cylinder {
                radius,
                half_height,
            } => (
                [-radius, -radius, -half_height],
                [*radius, *radius, *half_height],
            ),
            Shape::Capsule { a, b, radius } => {
                let lo = [0, 1, 2].map(|k| a[k].min(b[k]) - radius);
                let hi = [0, 1, 2].map(|k| a[k].max(b[k]) + radius);
                (lo, hi)
            }
            Shape::Prism {
                polygon,
                half_height,
            } => {
                let mut lo = [f64::INFINITY, f64::INFINITY, -half_height];
                let mut hi = [f64::NEG_INFINITY, f64::NEG_INFINITY, *half_height];
                for v in polygon {
                    lo[0] = lo[0].min(v[0]);
                    lo[1] = lo[1].min(v[1]);
                    hi[0] = hi[0].max(v[0]);
                    hi[1] = hi[1].max(v[1]);
                }
                (lo, hi)
            }
            Shape::Union { parts } => {
                let mut lo = [f64::INFINITY; 3];
                let mut hi = [f64::NEG_INFINITY; 3];
                for part in parts {
                    let (plo, phi) = part.aabb();
                    for k in 0..3 {
                        lo[k] = lo[k].min(plo[k]);
                        hi[k] = hi[k].max(phi[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// World-frame axis-aligned bounding box.
    pub fn aabb(&self) -> (Point, Point) {
        let (lo, hi) = self.local_bounds();
        let mut wlo = [f64::INFINITY; 3];
        let mut whi = [f64::NEG_INFINITY; 3];
        for corner in 0..8 {
            let c = [
                if corner & 1 == 0 { lo[0] } else { hi[0] },
                if corner & 2 == 0 { lo[1] } else { hi[1] },
                if corner & 4 == 0 { lo[2] } else { hi[2] },
            ];
            let w = add(rotate_z(c, self.yaw), self.center);
            for k in 0..3 {
                wlo[k] = wlo[k].min(w[k]);
                whi[k] = whi[k].max(w[k]);
            }
        }
        (wlo, whi)
    }

    /// Half-size of the world bounding box along each axis.
    pub fn half_extents(&self) -> [f64; 3] {
        let (lo, hi) = self.aabb();
        [0, 1, 2].map(|k| 0.5 * (hi[k] - lo[k]))
    }

    /// Volume of the shape; for unions, the sum of part volumes.
    pub fn volume(&self) -> f64 {
        use std::f64::consts::PI;
        match &self.shape {
            Shape::Box { half } => 8.0 * half[0] * half[1] * half[2],
            Shape::Cylinder {
                radius,
                half_height,
            } => PI * radius * radius * 2.0 * half_height,
            Shape::Capsule { a, b, radius } => {
                let len = dot(sub(*b, *a), sub(*b, *a)).sqrt();
                PI * radius * radius * len + 4.0 / 3.0 * PI * radius.powi(3)
            }
            Shape::Prism {
                polygon,
                half_height,
            } => polygon_area(polygon) * 2.0 * half_height,
            Shape::Union { parts } => parts.iter().map(Solid::volume).sum(),
        }
    }

    fn check_volume(&self) -> Result<(), GeometryError> {
        let ok = match &self.shape {
            Shape::Union { parts } => {
                !parts.is_empty() && parts.iter().all(|p| p.check_volume().is_ok())
            }
            _ => self.volume() > 0.0 && self.volume().is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(GeometryError::DegenerateSolid(format!("{:?}", self.shape)))
        }
    }

    pub fn translated(&self, t: Point) -> Solid {
        Solid {
            shape: self.shape.clone(),
            center: add(self.center, t),
            yaw: self.yaw,
        }
    }

    /// Draws `n` points uniformly from the interior with `rng`.
    pub fn sample_with<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<Point>, GeometryError> {
        self.check_volume()?;
        let (lo, hi) = self.aabb();
        let budget = 10_000 + 2_000 * n;
        let mut out = Vec::with_capacity(n);
        let mut draws = 0;
        while out.len() < n {
            if draws == budget {
                return Err(GeometryError::SamplingExhausted(draws));
            }
            draws += 1;
            let p = [0, 1, 2].map(|k| lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>());
            if self.contains(p) {
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// `n` i.i.d. uniform interior points by rejection against the bounding box.
pub fn sample_interior(solid: &Solid, n: usize, seed: u64) -> Result<Vec<Point>, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    solid.sample_with(n, &mut rng)
}

fn segment_dist2(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(ap, ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = sub(ap, [ab[0] * t, ab[1] * t, ab[2] * t]);
    dot(d, d)
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + n - 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice.abs()
}
