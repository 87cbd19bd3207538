use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Points sampled on a shape surface, in unit-normalized model space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point {
        centroid(&self.points)
    }

    pub fn max_radius(&self) -> f64 {
        self.points.iter().map(norm).fold(0.0, f64::max)
    }

    /// Same points reordered so that point `i` of the result is point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            points: perm.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

/// Translation and isotropic scale that map raw coordinates to model space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Point,
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, p: &Point) -> Point {
        [
            (p[0] - self.center[0]) * self.scale,
            (p[1] - self.center[1]) * self.scale,
            (p[2] - self.center[2]) * self.scale,
        ]
    }
}

pub(crate) fn distance_sq(a: &Point, b: &Point) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn norm(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for (ci, pi) in c.iter_mut().zip(p) {
            *ci += pi;
        }
    }
    c.map(|v| v / n)
}

/// Centers the cloud at its centroid and scales its largest radius to one.
///
/// A cloud whose points all coincide is only centered.
pub fn normalize_cloud(raw: &[Point]) -> Result<(PointCloud, Normalization)> {
    if raw.is_empty() {
        return Err(Error::InvalidInput("cannot normalize an empty cloud".into()));
    }
    if raw.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite point coordinate".into()));
    }
    let center = centroid(raw);
    let radius = raw
        .iter()
        .map(|p| norm(&[p[0] - center[0], p[1] - center[1], p[2] - center[2]]))
        .fold(0.0, f64::max);
    let scale = if radius > 0.0 { 1.0 / radius } else { 1.0 };
    let tf = Normalization { center, scale };
    let points = raw.iter().map(|p| tf.apply(p)).collect();
    Ok((PointCloud { points }, tf))
}
