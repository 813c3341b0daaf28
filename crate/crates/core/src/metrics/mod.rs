//! Point-set metrics: Chamfer, Earth Mover's, F1, guiding-point MSE and
//! interpenetration.

mod assignment;

use serde::{Deserialize, Serialize};

pub use assignment::{auction, hungarian, AuctionResult};

use crate::geometry::{bounds, centroid, dist2, ConvexHull, KdTree, Point};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("point sets differ in size: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("empty point set")]
    Empty,
}

/// Mean squared nearest-neighbour distance from `a` to `b` plus the reverse.
pub fn chamfer(a: &[Point], b: &[Point]) -> f64 {
    directional(a, &KdTree::new(b)) + directional(b, &KdTree::new(a))
}

fn directional(from: &[Point], to: &KdTree) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    from.iter()
        .map(|p| to.nearest(*p).map_or(f64::INFINITY, |(_, d)| d))
        .sum::<f64>()
        / from.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmdMode {
    Exact,
    Approx,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmdResult {
    /// Mean matched Euclidean distance.
    pub value: f64,
    /// Relative gap between the assignment cost and its dual bound; zero for exact.
    pub gap: f64,
}

fn distance_matrix(a: &[Point], b: &[Point]) -> Vec<f64> {
    a.iter()
        .flat_map(|p| b.iter().map(move |q| dist2(*p, *q).sqrt()))
        .collect()
}

pub fn emd(a: &[Point], b: &[Point], mode: EmdMode) -> Result<EmdResult, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::SizeMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n == 0 {
        return Err(MetricError::Empty);
    }
    let cost = distance_matrix(a, b);
    match mode {
        EmdMode::Exact => {
            let assign = hungarian(&cost, n);
            let total: f64 = assign.iter().enumerate().map(|(i, j)| cost[i * n + j]).sum();
            Ok(EmdResult {
                value: total / n as f64,
                gap: 0.0,
            })
        }
        EmdMode::Approx => {
            let r = auction(&cost, n);
            let gap = if r.primal > 0.0 {
                ((r.primal - r.dual) / r.primal).max(0.0)
            } else {
                0.0
            };
            Ok(EmdResult {
                value: r.primal / n as f64,
                gap,
            })
        }
    }
}

/// Exact for up to 512 points, auction above.
pub fn emd_auto(a: &[Point], b: &[Point]) -> Result<EmdResult, MetricError> {
    let mode = if a.len() > 512 { EmdMode::Approx } else { EmdMode::Exact };
    emd(a, b, mode)
}

/// Harmonic mean of precision (share of `a` within `tau` of `b`) and recall.
pub fn f1(a: &[Point], b: &[Point], tau: f64) -> f64 {
    let precision = covered(a, &KdTree::new(b), tau);
    let recall = covered(b, &KdTree::new(a), tau);
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn covered(from: &[Point], to: &KdTree, tau: f64) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    let t2 = tau * tau;
    let hits = from
        .iter()
        .filter(|p| to.nearest(**p).is_some_and(|(_, d)| d <= t2))
        .count();
    hits as f64 / from.len() as f64
}

/// Mean squared distance from each guiding point to `target_centroid`.
pub fn guiding_mse(s_tilde: &[Point], target_centroid: Point) -> f64 {
    if s_tilde.is_empty() {
        return 0.0;
    }
    s_tilde.iter().map(|p| dist2(*p, target_centroid)).sum::<f64>() / s_tilde.len() as f64
}

/// Interpenetration of a prediction with scene entities.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpenetration {
    /// Per-entity inside counts summed, over the prediction size, capped at 1.
    pub value: f64,
    /// Entities whose hull could not be built.
    pub skipped: Vec<usize>,
}

/// Counts prediction points inside each entity's convex hull. Entities with
/// degenerate hulls are skipped with a warning.
pub fn ip_3d(pred: &[Point], entities: &[Vec<Point>]) -> Interpenetration {
    let mut skipped = Vec::new();
    let hulls: Vec<ConvexHull> = entities
        .iter()
        .enumerate()
        .filter_map(|(i, cloud)| match ConvexHull::build(cloud) {
            Ok(h) => Some(h),
            Err(e) => {
                tracing::warn!(entity = i, error = %e, "skipping entity in interpenetration");
                skipped.push(i);
                None
            }
        })
        .collect();
    ip_3d_hulls(pred, &hulls, skipped)
}

pub fn ip_3d_hulls(pred: &[Point], hulls: &[ConvexHull], skipped: Vec<usize>) -> Interpenetration {
    if pred.is_empty() {
        return Interpenetration {
            value: 0.0,
            skipped,
        };
    }
    let inside: usize = hulls
        .iter()
        .map(|h| pred.iter().filter(|p| h.contains(**p)).count())
        .sum();
    Interpenetration {
        value: (inside as f64 / pred.len() as f64).min(1.0),
        skipped,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cd: f64,
    pub emd: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guiding_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip3d: Option<f64>,
}

pub const DEFAULT_F1_TAU: f64 = 0.1;

/// CD, EMD and F1 of `pred` against `truth`.
pub fn compare(pred: &[Point], truth: &[Point], tau: f64) -> Result<MetricReport, MetricError> {
    Ok(MetricReport {
        cd: chamfer(pred, truth),
        emd: emd_auto(pred, truth)?.value,
        f1: f1(pred, truth, tau),
        guiding_mse: None,
        ip3d: None,
    })
}

/// Mean of each field over `reports`; optional fields average over the
/// reports that carry them.
pub fn mean_report(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len().max(1) as f64;
    let opt_mean = |f: &dyn Fn(&MetricReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    MetricReport {
        cd: reports.iter().map(|r| r.cd).sum::<f64>() / n,
        emd: reports.iter().map(|r| r.emd).sum::<f64>() / n,
        f1: reports.iter().map(|r| r.f1).sum::<f64>() / n,
        guiding_mse: opt_mean(&|r| r.guiding_mse),
        ip3d: opt_mean(&|r| r.ip3d),
    }
}

/// Similarity frame: `(p - center) * scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub center: Point,
    pub scale: f64,
}

impl SceneFrame {
    pub const IDENTITY: SceneFrame = SceneFrame {
        center: [0.0; 3],
        scale: 1.0,
    };

    /// Centred on the human centroid, scaled so the largest extent of the
    /// entities' bounding box becomes 2.
    pub fn from_entities(human: &[Point], entities: &[&[Point]]) -> Result<Self, MetricError> {
        let center = centroid(human).ok_or(MetricError::Empty)?;
        let all: Vec<Point> = entities.iter().flat_map(|e| e.iter().copied()).collect();
        let (lo, hi) = bounds(&all).ok_or(MetricError::Empty)?;
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        let scale = if extent > 0.0 { 2.0 / extent } else { 1.0 };
        Ok(Self { center, scale })
    }

    pub fn to_frame(&self, p: Point) -> Point {
        [0, 1, 2].map(|k| (p[k] - self.center[k]) * self.scale)
    }

    pub fn to_world(&self, p: Point) -> Point {
        [0, 1, 2].map(|k| p[k] / self.scale + self.center[k])
    }

    pub fn cloud_to_frame(&self, pts: &[Point]) -> Vec<Point> {
        pts.iter().map(|p| self.to_frame(*p)).collect()
    }

    pub fn cloud_to_world(&self, pts: &[Point]) -> Vec<Point> {
        pts.iter().map(|p| self.to_world(*p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chamfer_single_points() {
        assert_eq!(chamfer(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]), 2.0);
    }

    #[test]
    fn emd_shifted_pair() {
        let a = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let b = [[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert_eq!(emd(&a, &b, EmdMode::Exact).unwrap().value, 1.0);
        assert!(emd(&a, &b[..1], EmdMode::Exact).is_err());
    }

    #[test]
    fn f1_half_precision() {
        let a = [[0.0; 3], [5.0, 0.0, 0.0]];
        let b = [[0.0; 3]];
        assert!((f1(&a, &b, 0.1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn frame_round_trip() {
        let human = [[1.0, 1.0, 0.0], [1.0, 1.0, 2.0]];
        let obj = [[3.0, 1.0, 0.0]];
        let f = SceneFrame::from_entities(&human, &[&human, &obj]).unwrap();
        assert_eq!(f.scale, 1.0);
        let p = [0.3, 0.7, -2.0];
        let q = f.to_world(f.to_frame(p));
        assert!((0..3).all(|k| (p[k] - q[k]).abs() < 1e-15));
    }
}
