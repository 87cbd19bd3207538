use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cloud::{distance_sq, Point, PointCloud};
use super::dataset::ShapeSample;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Gaussian weighting parameter for keypoint distance functions.
pub const DEFAULT_SIGMA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Indicator,
    KeypointDistance,
    Smooth,
}

/// A scalar function sampled at the points of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFunction {
    pub values: Vec<f64>,
    pub kind: ProbeKind,
}

impl ProbeFunction {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Draws a nonempty subset of `items`: each one kept with probability 1/2, empty draws rejected.
pub fn draw_subset(items: &[usize], rng: &mut RngStream) -> Vec<usize> {
    if items.is_empty() {
        return Vec::new();
    }
    loop {
        let subset: Vec<usize> = items.iter().copied().filter(|_| rng.random::<bool>()).collect();
        if !subset.is_empty() {
            return subset;
        }
    }
}

/// Indicator of the points whose part id is in `subset`.
pub fn part_indicator(labels: &[usize], subset: &[usize]) -> ProbeFunction {
    ProbeFunction {
        values: labels
            .iter()
            .map(|l| if subset.contains(l) { 1.0 } else { 0.0 })
            .collect(),
        kind: ProbeKind::Indicator,
    }
}

/// Indicator of a random nonempty subset of the shape's parts.
pub fn sample_part_indicator(shape: &ShapeSample, rng: &mut RngStream) -> ProbeFunction {
    let parts: Vec<usize> = (0..shape.num_parts()).collect();
    part_indicator(&shape.part_labels, &draw_subset(&parts, rng))
}

/// Flips every entry of an indicator independently with probability `prob`.
pub fn flip_bits(f: &mut ProbeFunction, prob: f64, rng: &mut RngStream) {
    if prob <= 0.0 {
        return;
    }
    for v in &mut f.values {
        if rng.random::<f64>() < prob {
            *v = 1.0 - *v;
        }
    }
}

/// Normalized Gaussian-weighted distance function around `keypoint`:
/// `g_i ∝ exp(-d(p_i, s)² / σ)` with `Σ g_i = 1`.
pub fn keypoint_distance_function(
    cloud: &PointCloud,
    keypoint: &Point,
    sigma: f64,
) -> Result<ProbeFunction> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    if cloud.is_empty() {
        return Err(Error::InvalidInput("empty cloud".into()));
    }
    let d2: Vec<f64> = cloud.points.iter().map(|p| distance_sq(p, keypoint)).collect();
    // Shift by the nearest distance so the largest weight is exactly 1.
    let nearest = d2.iter().copied().fold(f64::INFINITY, f64::min);
    let mut values: Vec<f64> = d2.iter().map(|d| (-(d - nearest) / sigma).exp()).collect();
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    Ok(ProbeFunction {
        values,
        kind: ProbeKind::KeypointDistance,
    })
}

/// Sum of the distance functions of the shape keypoints with the given labels.
pub fn keypoint_subset_function(
    shape: &ShapeSample,
    labels: &[usize],
    sigma: f64,
) -> Result<ProbeFunction> {
    let mut values = vec![0.0; shape.n_points()];
    for &label in labels {
        let kp = shape.keypoint(label).ok_or_else(|| {
            Error::InvalidInput(format!("shape {} has no keypoint {label}", shape.shape_id))
        })?;
        let g = keypoint_distance_function(&shape.cloud, &kp.xyz, sigma)?;
        for (v, gi) in values.iter_mut().zip(&g.values) {
            *v += gi;
        }
    }
    Ok(ProbeFunction {
        values,
        kind: ProbeKind::KeypointDistance,
    })
}

/// Sum of distance functions over a random nonempty subset of the shape's keypoints.
/// Returns the chosen labels alongside the function.
pub fn sample_keypoint_subset(
    shape: &ShapeSample,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<(Vec<usize>, ProbeFunction)> {
    if shape.keypoints.is_empty() {
        return Err(Error::InvalidInput(format!(
            "shape {} has no keypoints",
            shape.shape_id
        )));
    }
    let labels: Vec<usize> = shape.keypoints.iter().map(|k| k.label).collect();
    let subset = draw_subset(&labels, rng);
    let f = keypoint_subset_function(shape, &subset, sigma)?;
    Ok((subset, f))
}

/// `(shape, part)` pairs hidden from subset sampling, for training with partial segmentations.
#[derive(Debug, Clone, Default)]
pub struct PartBlacklist {
    hidden: HashSet<(usize, usize)>,
}

impl PartBlacklist {
    /// Hides `round(fraction · total)` pairs drawn uniformly without replacement.
    /// Every shape keeps at least one visible part.
    pub fn sample(parts_per_shape: &[usize], fraction: f64, rng: &mut RngStream) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidConfig(format!(
                "partial-segmentation fraction must lie in [0, 1], got {fraction}"
            )));
        }
        let pairs: Vec<(usize, usize)> = parts_per_shape
            .iter()
            .enumerate()
            .flat_map(|(s, &p)| (0..p).map(move |part| (s, part)))
            .collect();
        let target = (fraction * pairs.len() as f64).round() as usize;
        let mut hidden: HashSet<(usize, usize)> = sample(rng, pairs.len(), target)
            .into_iter()
            .map(|i| pairs[i])
            .collect();
        for (s, &p) in parts_per_shape.iter().enumerate() {
            if p > 0 && (0..p).all(|part| hidden.contains(&(s, part))) {
                let keep = rng.random_range(0..p);
                hidden.remove(&(s, keep));
            }
        }
        Ok(Self { hidden })
    }

    pub fn is_hidden(&self, shape: usize, part: usize) -> bool {
        self.hidden.contains(&(shape, part))
    }

    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    /// Parts of `shape` still available for sampling.
    pub fn visible(&self, shape: usize, num_parts: usize) -> Vec<usize> {
        (0..num_parts).filter(|&p| !self.is_hidden(shape, p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_family, FamilyParams, Preset};

    fn table() -> ShapeSample {
        generate_family(Preset::Table4, 1, 256, &FamilyParams::default(), &RngStream::new(5))
            .unwrap()
            .remove(0)
    }

    #[test]
    fn indicator_on_chosen_legs() {
        let s = table();
        let f = part_indicator(&s.part_labels, &[1, 3]);
        for (v, l) in f.values.iter().zip(&s.part_labels) {
            assert_eq!(*v, if *l == 1 || *l == 3 { 1.0 } else { 0.0 });
        }
        let all = part_indicator(&s.part_labels, &[0, 1, 2, 3, 4]);
        assert!(all.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn subset_draws_cover_every_part() {
        let s = table();
        let mut rng = RngStream::new(1);
        let mut seen = [false; 5];
        for _ in 0..1000 {
            let f = sample_part_indicator(&s, &mut rng);
            assert!(f.values.contains(&1.0), "empty subset drawn");
            assert!(f.values.iter().all(|&v| v == 0.0 || v == 1.0));
            for (v, &l) in f.values.iter().zip(&s.part_labels) {
                if *v == 1.0 {
                    seen[l] = true;
                }
            }
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn keypoint_function_properties() {
        let s = table();
        let kp = s.keypoints[0].xyz;
        let g = keypoint_distance_function(&s.cloud, &kp, DEFAULT_SIGMA).unwrap();
        assert!((g.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.values.iter().all(|&v| v >= 0.0));
        let j = s.cloud.points.iter().position(|p| *p == kp).unwrap();
        let argmax = g
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, j);
        assert!(matches!(
            keypoint_distance_function(&s.cloud, &kp, 0.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn equidistant_points_get_equal_weight() {
        let cloud = PointCloud {
            points: vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.3, 0.0]],
        };
        let g = keypoint_distance_function(&cloud, &[0.0, 0.0, 0.0], 0.5).unwrap();
        assert!((g.values[0] - g.values[1]).abs() < 1e-12);
    }

    #[test]
    fn keypoint_subsets_sum_to_size() {
        let s = table();
        let mut rng = RngStream::new(77);
        for _ in 0..20 {
            let (labels, f) = sample_keypoint_subset(&s, DEFAULT_SIGMA, &mut rng).unwrap();
            assert!(!labels.is_empty());
            assert!((f.values.iter().sum::<f64>() - labels.len() as f64).abs() < 1e-9);
            let mut manual = vec![0.0; s.n_points()];
            for l in &labels {
                let g = keypoint_distance_function(&s.cloud, &s.keypoint(*l).unwrap().xyz, DEFAULT_SIGMA)
                    .unwrap();
                for (m, v) in manual.iter_mut().zip(&g.values) {
                    *m += v;
                }
            }
            for (a, b) in manual.iter().zip(&f.values) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let mut bare = s.clone();
        bare.keypoints.clear();
        assert!(matches!(
            sample_keypoint_subset(&bare, DEFAULT_SIGMA, &mut rng),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn bit_flips_hit_expected_rate() {
        let mut f = ProbeFunction {
            values: vec![0.0; 20_000],
            kind: ProbeKind::Indicator,
        };
        flip_bits(&mut f, 0.1, &mut RngStream::new(4));
        let flipped = f.values.iter().filter(|&&v| v == 1.0).count() as f64 / 20_000.0;
        assert!((flipped - 0.1).abs() < 0.01);
    }

    #[test]
    fn blacklist_fraction_and_visibility() {
        let parts = vec![5; 100];
        let bl = PartBlacklist::sample(&parts, 0.5, &mut RngStream::new(2)).unwrap();
        assert!((bl.len() as i64 - 250).abs() <= 5);
        for s in 0..100 {
            assert!(!bl.visible(s, 5).is_empty());
        }
        let all = PartBlacklist::sample(&parts, 1.0, &mut RngStream::new(2)).unwrap();
        for s in 0..100 {
            assert_eq!(all.visible(s, 5).len(), 1);
        }
        assert!(PartBlacklist::sample(&parts, 1.5, &mut RngStream::new(2)).is_err());
    }
}
