use std::collections::HashSet;

use super::{add, centroid, rotate_z, sub, KdTree, Point};

/// Rotation about z followed by a translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZTransform {
    pub theta: f64,
    pub translation: Point,
}

impl ZTransform {
    pub const IDENTITY: ZTransform = ZTransform {
        theta: 0.0,
        translation: [0.0; 3],
    };

    pub fn apply(&self, p: Point) -> Point {
        add(rotate_z(p, self.theta), self.translation)
    }

    /// Row-major 3x3 rotation part; always of the form Rz(theta).
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let (s, c) = self.theta.sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    }
}

#[derive(Clone, Debug)]
pub struct IcpOptions {
    pub max_iters: usize,
    /// Correspondences farther than this (m) are ignored.
    pub inlier_radius: f64,
    /// Stop once the transform moves less than this between iterations.
    pub tolerance: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            inlier_radius: 0.1,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AlignmentReport {
    /// Maps source points onto the target.
    pub transform: ZTransform,
    /// Inlier correspondences over source size.
    pub fitness: f64,
    /// Mean squared inlier distance (m^2); 0 when there are no inliers.
    pub inlier_mse: f64,
    /// Distinct target points matched by inliers, as a percentage of source size.
    pub correspondence_pct: f64,
    pub iterations: usize,
}

struct Matches {
    pairs: Vec<(usize, usize, f64)>,
}

fn correspond(tree: &KdTree, source: &[Point], tf: &ZTransform, radius: f64) -> Matches {
    let r2 = radius * radius;
    let pairs = source
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (j, d2) = tree.nearest(tf.apply(*p))?;
            (d2 <= r2).then_some((i, j, d2))
        })
        .collect();
    Matches { pairs }
}

/// Best rotation about z plus translation mapping `src` pairs onto `dst`.
fn fit_z_locked(src: &[Point], dst: &[Point]) -> ZTransform {
    let cs = centroid(src).expect("non-empty");
    let ct = centroid(dst).expect("non-empty");
    let (mut num, mut den) = (0.0, 0.0);
    for (s, t) in src.iter().zip(dst) {
        let (s, t) = (sub(*s, cs), sub(*t, ct));
        num += s[0] * t[1] - s[1] * t[0];
        den += s[0] * t[0] + s[1] * t[1];
    }
    let theta = num.atan2(den);
    ZTransform {
        theta,
        translation: sub(ct, rotate_z(cs, theta)),
    }
}

/// Aligns `source` to `target` with translation plus rotation about z only,
/// starting from centroid alignment.
pub fn icp_align_z_locked(source: &[Point], target: &[Point], opts: &IcpOptions) -> AlignmentReport {
    let empty = AlignmentReport {
        transform: ZTransform::IDENTITY,
        fitness: 0.0,
        inlier_mse: 0.0,
        correspondence_pct: 0.0,
        iterations: 0,
    };
    let (Some(cs), Some(ct)) = (centroid(source), centroid(target)) else {
        return empty;
    };
    let tree = KdTree::new(target);
    let mut tf = ZTransform {
        theta: 0.0,
        translation: sub(ct, cs),
    };
    let mut iterations = 0;
    for _ in 0..opts.max_iters {
        let m = correspond(&tree, source, &tf, opts.inlier_radius);
        if m.pairs.is_empty() {
            break;
        }
        iterations += 1;
        let src: Vec<Point> = m.pairs.iter().map(|(i, _, _)| source[*i]).collect();
        let dst: Vec<Point> = m.pairs.iter().map(|(_, j, _)| target[*j]).collect();
        let next = fit_z_locked(&src, &dst);
        let moved = (next.theta - tf.theta).abs()
            + (0..3)
                .map(|k| (next.translation[k] - tf.translation[k]).abs())
                .sum::<f64>();
        tf = next;
        if moved < opts.tolerance {
            break;
        }
    }
    let m = correspond(&tree, source, &tf, opts.inlier_radius);
    if m.pairs.is_empty() {
        return AlignmentReport {
            transform: tf,
            iterations,
            ..empty
        };
    }
    let n = source.len() as f64;
    let distinct: HashSet<usize> = m.pairs.iter().map(|(_, j, _)| *j).collect();
    AlignmentReport {
        transform: tf,
        fitness: m.pairs.len() as f64 / n,
        inlier_mse: m.pairs.iter().map(|(_, _, d)| d).sum::<f64>() / m.pairs.len() as f64,
        correspondence_pct: 100.0 * distinct.len() as f64 / n,
        iterations,
    }
}
