use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cloud::{normalize_cloud, Point};
use super::dataset::{Keypoint, ShapeSample};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

const MIN_POINTS: usize = 64;
const MIN_POINTS_PER_PART: usize = 4;
const MAX_BOXES: usize = 16;

/// Synthetic shape family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Tabletop plus four legs; keypoints at the four top corners.
    Table4,
    /// Seat, back and four legs; keypoints at seat corners and back top corners.
    Chair6,
    /// A row of boxes with distinct heights; one keypoint per box.
    Boxes(usize),
}

impl Preset {
    pub fn num_parts(self) -> usize {
        match self {
            Preset::Table4 => 5,
            Preset::Chair6 => 6,
            Preset::Boxes(p) => p,
        }
    }

    pub fn name(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Table4 => f.write_str("table4"),
            Preset::Chair6 => f.write_str("chair6"),
            Preset::Boxes(p) => write!(f, "boxes{p}"),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table4" => Ok(Preset::Table4),
            "chair6" => Ok(Preset::Chair6),
            _ => {
                let p = s
                    .strip_prefix("boxes")
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|p| (1..=MAX_BOXES).contains(p))
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "unknown preset '{s}' (expected table4, chair6 or boxes1..boxes{MAX_BOXES})"
                        ))
                    })?;
                Ok(Preset::Boxes(p))
            }
        }
    }
}

/// Per-shape variation applied by [`generate_family`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyParams {
    /// Relative half-range of the uniform jitter applied to every dimension.
    pub dim_jitter: f64,
    /// Standard deviation of Gaussian noise added to sampled surface points (raw units).
    pub point_noise: f64,
    /// Boxes only: probability that a shape swaps the positions of boxes 0 and 1.
    pub swap_fraction: f64,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self {
            dim_jitter: 0.15,
            point_noise: 0.0,
            swap_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cuboid {
    min: Point,
    max: Point,
}

impl Cuboid {
    fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    fn extent(&self) -> Point {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    fn face_areas(&self) -> [f64; 3] {
        let [x, y, z] = self.extent();
        // Areas of faces normal to x, y, z.
        [y * z, x * z, x * y]
    }

    fn area(&self) -> f64 {
        2.0 * self.face_areas().iter().sum::<f64>()
    }

    fn sample_surface(&self, rng: &mut RngStream) -> Point {
        let areas = self.face_areas();
        let total: f64 = areas.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut axis = 2;
        for (a, &area) in areas.iter().enumerate() {
            if pick < area {
                axis = a;
                break;
            }
            pick -= area;
        }
        let mut p = [0.0; 3];
        for (d, v) in p.iter_mut().enumerate() {
            *v = if d == axis {
                if rng.random::<bool>() {
                    self.max[d]
                } else {
                    self.min[d]
                }
            } else {
                self.min[d] + rng.random::<f64>() * (self.max[d] - self.min[d])
            };
        }
        p
    }
}

struct Blueprint {
    parts: Vec<Cuboid>,
    /// `(label, part, position)`.
    keypoints: Vec<(usize, usize, Point)>,
}

fn jitter(rng: &mut RngStream, base: f64, rel: f64) -> f64 {
    base * (1.0 + rel * rng.random_range(-1.0..=1.0))
}

fn table4(rng: &mut RngStream, j: f64) -> Blueprint {
    let w = jitter(rng, 2.0, j);
    let d = jitter(rng, 1.2, j);
    let t = jitter(rng, 0.1, j);
    let h = jitter(rng, 1.4, j);
    let leg = jitter(rng, 0.12, j);
    let inset = jitter(rng, 0.08, j);

    let mut parts = vec![Cuboid::new([-w / 2.0, h - t, -d / 2.0], [w / 2.0, h, d / 2.0])];
    let lx = w / 2.0 - inset - leg / 2.0;
    let lz = d / 2.0 - inset - leg / 2.0;
    for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        let (cx, cz) = (sx * lx, sz * lz);
        parts.push(Cuboid::new(
            [cx - leg / 2.0, 0.0, cz - leg / 2.0],
            [cx + leg / 2.0, h - t, cz + leg / 2.0],
        ));
    }
    let keypoints = [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)]
        .iter()
        .enumerate()
        .map(|(label, &(sx, sz))| (label, 0, [sx * w / 2.0, h, sz * d / 2.0]))
        .collect();
    Blueprint { parts, keypoints }
}

fn chair6(rng: &mut RngStream, j: f64) -> Blueprint {
    let w = jitter(rng, 1.0, j);
    let d = jitter(rng, 1.0, j);
    let t = jitter(rng, 0.1, j);
    let hs = jitter(rng, 1.0, j);
    let hb = jitter(rng, 1.1, j);
    let tb = jitter(rng, 0.1, j);
    let leg = jitter(rng, 0.1, j);

    let seat = Cuboid::new([-w / 2.0, hs - t, -d / 2.0], [w / 2.0, hs, d / 2.0]);
    let back = Cuboid::new([-w / 2.0, hs, d / 2.0 - tb], [w / 2.0, hs + hb, d / 2.0]);
    let mut parts = vec![seat, back];
    let lx = w / 2.0 - leg / 2.0;
    let lz = d / 2.0 - leg / 2.0;
    for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        let (cx, cz) = (sx * lx, sz * lz);
        parts.push(Cuboid::new(
            [cx - leg / 2.0, 0.0, cz - leg / 2.0],
            [cx + leg / 2.0, hs - t, cz + leg / 2.0],
        ));
    }
    let mut keypoints: Vec<(usize, usize, Point)> = [(-1.0, -1.0), (1.0, -1.0)]
        .iter()
        .enumerate()
        .map(|(label, &(sx, sz))| (label, 0, [sx * w / 2.0, hs, sz * d / 2.0]))
        .collect();
    // Rear seat corners sit under the back; take them at the back's inner face.
    keypoints.push((2, 0, [-w / 2.0, hs, d / 2.0 - tb]));
    keypoints.push((3, 0, [w / 2.0, hs, d / 2.0 - tb]));
    keypoints.push((4, 1, [-w / 2.0, hs + hb, d / 2.0]));
    keypoints.push((5, 1, [w / 2.0, hs + hb, d / 2.0]));
    Blueprint { parts, keypoints }
}

fn boxes(rng: &mut RngStream, j: f64, count: usize, swap: bool) -> Blueprint {
    let gap = jitter(rng, 0.25, j);
    let depth = jitter(rng, 0.8, j);
    let dims: Vec<(f64, f64)> = (0..count)
        .map(|p| {
            let width = jitter(rng, 0.8, j);
            let height = jitter(rng, 0.6 + 0.5 * p as f64, j * 0.5);
            (width, height)
        })
        .collect();
    let mut slots: Vec<usize> = (0..count).collect();
    if swap && count >= 2 {
        slots.swap(0, 1);
    }
    // slots[s] is the part standing in slot s, left to right.
    let mut x = 0.0;
    let mut parts = vec![Cuboid::new([0.0; 3], [0.0; 3]); count];
    for &p in &slots {
        let (w, h) = dims[p];
        parts[p] = Cuboid::new([x, 0.0, 0.0], [x + w, h, depth]);
        x += w + gap;
    }
    let keypoints = parts
        .iter()
        .enumerate()
        .map(|(p, c)| (p, p, [c.max[0], c.max[1], c.max[2]]))
        .collect();
    Blueprint { parts, keypoints }
}

/// Splits `budget` across parts in proportion to area (largest remainder).
fn allocate(areas: &[f64], budget: usize) -> Vec<usize> {
    let total: f64 = areas.iter().sum();
    let shares: Vec<f64> = areas.iter().map(|a| a / total * budget as f64).collect();
    let mut alloc: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut left = budget - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &p in order.iter().cycle() {
        if left == 0 {
            break;
        }
        alloc[p] += 1;
        left -= 1;
    }
    alloc
}

fn generate_one(
    preset: Preset,
    index: usize,
    n_points: usize,
    params: &FamilyParams,
    mut rng: RngStream,
) -> Result<ShapeSample> {
    let swap = rng.random::<f64>() < params.swap_fraction;
    let bp = match preset {
        Preset::Table4 => table4(&mut rng, params.dim_jitter),
        Preset::Chair6 => chair6(&mut rng, params.dim_jitter),
        Preset::Boxes(p) => boxes(&mut rng, params.dim_jitter, p, swap),
    };
    let n_parts = bp.parts.len();
    let fixed = bp.keypoints.len();

    let areas: Vec<f64> = bp.parts.iter().map(Cuboid::area).collect();
    let free = n_points - fixed - n_parts * MIN_POINTS_PER_PART;
    let counts: Vec<usize> = allocate(&areas, free)
        .into_iter()
        .map(|c| c + MIN_POINTS_PER_PART)
        .collect();

    let mut raw: Vec<(Point, usize)> = Vec::with_capacity(n_points);
    // Keypoints are points of the cloud so a perfect prediction is attainable.
    for &(_, part, pos) in &bp.keypoints {
        raw.push((pos, part));
    }
    for (part, (cuboid, &count)) in bp.parts.iter().zip(&counts).enumerate() {
        for _ in 0..count {
            let mut p = cuboid.sample_surface(&mut rng);
            if params.point_noise > 0.0 {
                for v in &mut p {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += params.point_noise * z;
                }
            }
            raw.push((p, part));
        }
    }
    raw.shuffle(&mut rng);

    let coords: Vec<Point> = raw.iter().map(|(p, _)| *p).collect();
    let (cloud, tf) = normalize_cloud(&coords)?;
    let keypoints = bp
        .keypoints
        .iter()
        .map(|&(label, _, pos)| Keypoint {
            label,
            xyz: tf.apply(&pos),
        })
        .collect();

    Ok(ShapeSample {
        shape_id: format!("{preset}-{index:05}"),
        family: preset.name(),
        cloud,
        part_labels: raw.iter().map(|(_, l)| *l).collect(),
        keypoints,
    })
}

/// Generates `count` annotated shapes of one family.
///
/// Shape `i` draws from its own substream, so the dataset does not depend on
/// how generation is scheduled across threads.
pub fn generate_family(
    preset: Preset,
    count: usize,
    n_points: usize,
    params: &FamilyParams,
    rng: &RngStream,
) -> Result<Vec<ShapeSample>> {
    if count == 0 {
        return Err(Error::InvalidConfig("shape count must be at least 1".into()));
    }
    let n_parts = preset.num_parts();
    let needed = (n_parts * (MIN_POINTS_PER_PART + 1)).max(MIN_POINTS);
    if n_points < needed {
        return Err(Error::InvalidConfig(format!(
            "{preset} needs at least {needed} points per shape, got {n_points}"
        )));
    }
    if !(0.0..=1.0).contains(&params.swap_fraction) {
        return Err(Error::InvalidConfig("swap_fraction must lie in [0, 1]".into()));
    }
    if params.swap_fraction > 0.0 && !matches!(preset, Preset::Boxes(p) if p >= 2) {
        return Err(Error::InvalidConfig(
            "swap_fraction only applies to boxes presets with at least 2 boxes".into(),
        ));
    }
    if !(0.0..1.0).contains(&params.dim_jitter) || !(params.point_noise.is_finite() && params.point_noise >= 0.0) {
        return Err(Error::InvalidConfig(
            "dim_jitter must lie in [0, 1) and point_noise must be non-negative".into(),
        ));
    }
    let base = rng.substream("family");
    (0..count)
        .into_par_iter()
        .map(|i| generate_one(preset, i, n_points, params, base.indexed("shape", i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_postconditions(shapes: &[ShapeSample], n: usize, parts: usize, keypoints: usize) {
        for s in shapes {
            s.validate().unwrap();
            assert_eq!(s.n_points(), n);
            assert_eq!(s.num_parts(), parts);
            assert_eq!(s.keypoints.len(), keypoints);
            let c = s.cloud.centroid();
            assert!(c.iter().all(|v| v.abs() < 1e-9));
            assert!((s.cloud.max_radius() - 1.0).abs() < 1e-9);
            for kp in &s.keypoints {
                assert!(s.cloud.points.contains(&kp.xyz), "keypoint is a cloud point");
            }
        }
    }

    #[test]
    fn table4_postconditions() {
        let shapes =
            generate_family(Preset::Table4, 2, 512, &FamilyParams::default(), &RngStream::new(7))
                .unwrap();
        assert_eq!(shapes.len(), 2);
        check_postconditions(&shapes, 512, 5, 4);
        assert_ne!(shapes[0].cloud, shapes[1].cloud);
    }

    #[test]
    fn chair6_postconditions() {
        let shapes =
            generate_family(Preset::Chair6, 1, 512, &FamilyParams::default(), &RngStream::new(3))
                .unwrap();
        check_postconditions(&shapes, 512, 6, 6);
    }

    #[test]
    fn boxes_postconditions_and_swap() {
        let params = FamilyParams {
            swap_fraction: 0.5,
            ..FamilyParams::default()
        };
        let shapes = generate_family(Preset::Boxes(3), 20, 256, &params, &RngStream::new(9)).unwrap();
        check_postconditions(&shapes, 256, 3, 3);
        // Box 0 is left of box 1 unless swapped; both layouts must occur.
        let left_first = shapes
            .iter()
            .filter(|s| s.keypoints[0].xyz[0] < s.keypoints[1].xyz[0])
            .count();
        assert!(left_first > 0 && left_first < 20);
    }

    #[test]
    fn deterministic() {
        let p = FamilyParams::default();
        let a = generate_family(Preset::Table4, 3, 128, &p, &RngStream::new(7)).unwrap();
        let b = generate_family(Preset::Table4, 3, 128, &p, &RngStream::new(7)).unwrap();
        assert_eq!(a, b);
        let c = generate_family(Preset::Table4, 3, 128, &p, &RngStream::new(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn part_budget_follows_area() {
        let shapes =
            generate_family(Preset::Table4, 1, 1024, &FamilyParams::default(), &RngStream::new(1))
                .unwrap();
        let top = shapes[0].part_labels.iter().filter(|&&l| l == 0).count();
        let leg = shapes[0].part_labels.iter().filter(|&&l| l == 1).count();
        assert!(top > 3 * leg);
    }

    #[test]
    fn rejects_bad_configs() {
        let p = FamilyParams::default();
        let rng = RngStream::new(0);
        assert!(matches!(
            generate_family(Preset::Table4, 1, 16, &p, &rng),
            Err(Error::InvalidConfig(_))
        ));
        assert!(generate_family(Preset::Boxes(16), 1, 64, &p, &rng).is_err());
        assert!(generate_family(Preset::Table4, 0, 512, &p, &rng).is_err());
        let swapped = FamilyParams {
            swap_fraction: 0.5,
            ..p
        };
        assert!(generate_family(Preset::Table4, 1, 512, &swapped, &rng).is_err());
    }

    #[test]
    fn preset_names() {
        for name in ["table4", "chair6", "boxes3"] {
            assert_eq!(name.parse::<Preset>().unwrap().to_string(), name);
        }
        assert!("boxes0".parse::<Preset>().is_err());
        assert!("lamp".parse::<Preset>().is_err());
    }
}
