//! Evaluation metrics: Hungarian-matched IoU, PCK, proposal recall and label confusion.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Keypoint, Point, PointCloud};
use crate::numerics::{hungarian_max, DenseMatrix};

/// Atoms whose largest entry is below this are treated as empty.
pub const EMPTY_ATOM: f64 = 1e-6;

/// Distance assigned to an empty atom; farther than any two points of a normalized cloud.
const MISSING_DISTANCE: f64 = 4.0;

/// Hard per-point atom assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationPrediction {
    pub atoms: Vec<usize>,
    pub k: usize,
}

impl SegmentationPrediction {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Row-wise argmax; ties resolve to the lowest atom index.
pub fn binarize_rows(a: &DenseMatrix) -> SegmentationPrediction {
    let atoms = (0..a.rows())
        .map(|i| {
            let row = a.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    SegmentationPrediction { atoms, k: a.cols() }
}

fn check_lengths(pred: &SegmentationPrediction, gt: &[usize]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "prediction covers {} points, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.atoms.iter().any(|&a| a >= pred.k) {
        return Err(Error::InvalidInput("atom index out of range".into()));
    }
    Ok(())
}

fn label_count(gt: &[usize]) -> usize {
    gt.iter().max().map_or(0, |&m| m + 1)
}

/// IoU between every ground-truth label (rows, `0..num_labels`) and every atom (columns).
pub fn iou_table(pred: &SegmentationPrediction, gt: &[usize], num_labels: usize) -> Result<DenseMatrix> {
    check_lengths(pred, gt)?;
    if gt.iter().any(|&l| l >= num_labels) {
        return Err(Error::InvalidInput(format!("label outside 0..{num_labels}")));
    }
    let k = pred.k;
    let mut inter = vec![0usize; num_labels * k];
    let mut label_size = vec![0usize; num_labels];
    let mut atom_size = vec![0usize; k];
    for (&l, &a) in gt.iter().zip(&pred.atoms) {
        inter[l * k + a] += 1;
        label_size[l] += 1;
        atom_size[a] += 1;
    }
    let mut t = DenseMatrix::zeros(num_labels, k);
    for l in 0..num_labels {
        for a in 0..k {
            let i = inter[l * k + a];
            let union = label_size[l] + atom_size[a] - i;
            if union > 0 {
                t[(l, a)] = i as f64 / union as f64;
            }
        }
    }
    Ok(t)
}

fn present_labels(gt: &[usize], num_labels: usize) -> Vec<bool> {
    let mut present = vec![false; num_labels];
    gt.iter().for_each(|&l| present[l] = true);
    present
}

/// Mean IoU under the mapping `label -> atom`; labels absent from `gt` are skipped.
fn miou_under(table: &DenseMatrix, present: &[bool], mapping: &[Option<usize>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0;
    for (l, &p) in present.iter().enumerate() {
        if p {
            sum += mapping.get(l).copied().flatten().map_or(0.0, |a| table[(l, a)]);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean IoU over the ground-truth parts after the best one-to-one part/atom matching for this shape.
pub fn matched_miou_shape(pred: &SegmentationPrediction, gt: &[usize]) -> Result<f64> {
    let num_labels = label_count(gt);
    if num_labels == 0 {
        return Err(Error::InvalidInput("empty ground truth".into()));
    }
    let table = iou_table(pred, gt, num_labels)?;
    let present = present_labels(gt, num_labels);
    let mut profit = table.clone();
    for (l, &p) in present.iter().enumerate() {
        if !p {
            profit.row_mut(l).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let m = hungarian_max(&profit)?;
    Ok(miou_under(&table, &present, &m.mapping))
}

/// The single label/atom matching that maximizes IoU summed over all tables.
pub fn category_matching(tables: &[DenseMatrix]) -> Result<Vec<Option<usize>>> {
    let first = tables
        .first()
        .ok_or_else(|| Error::InvalidInput("no shapes in category".into()))?;
    let mut total = DenseMatrix::zeros(first.rows(), first.cols());
    for t in tables {
        if (t.rows(), t.cols()) != (total.rows(), total.cols()) {
            return Err(Error::InvalidInput("IoU tables differ in shape".into()));
        }
        for (s, v) in total.as_mut_slice().iter_mut().zip(t.as_slice()) {
            *s += v;
        }
    }
    Ok(hungarian_max(&total)?.mapping)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMiou {
    pub miou: f64,
    /// `mapping[label]` is the atom matched to that label for every shape.
    pub mapping: Vec<Option<usize>>,
    pub per_shape: Vec<f64>,
}

/// mIoU of a category under one fixed label/atom matching shared by all its shapes.
pub fn matched_miou_category(shapes: &[(SegmentationPrediction, Vec<usize>)]) -> Result<CategoryMiou> {
    let num_labels = shapes.iter().map(|(_, gt)| label_count(gt)).max().unwrap_or(0);
    if num_labels == 0 {
        return Err(Error::InvalidInput("no labelled shapes in category".into()));
    }
    let k = shapes[0].0.k;
    if shapes.iter().any(|(p, _)| p.k != k) {
        return Err(Error::InvalidInput("predictions disagree on k".into()));
    }
    let tables = shapes
        .iter()
        .map(|(p, gt)| iou_table(p, gt, num_labels))
        .collect::<Result<Vec<_>>>()?;
    let mapping = category_matching(&tables)?;
    let per_shape: Vec<f64> = tables
        .iter()
        .zip(shapes)
        .map(|(t, (_, gt))| miou_under(t, &present_labels(gt, num_labels), &mapping))
        .collect();
    let miou = per_shape.iter().sum::<f64>() / per_shape.len() as f64;
    Ok(CategoryMiou { miou, mapping, per_shape })
}

/// The point with the largest value in each atom, or `None` for an empty atom.
pub fn predicted_keypoints(a: &DenseMatrix, cloud: &PointCloud) -> Result<Vec<Option<Point>>> {
    if a.rows() != cloud.len() {
        return Err(Error::InvalidInput(format!(
            "dictionary has {} rows for {} points",
            a.rows(),
            cloud.len()
        )));
    }
    Ok((0..a.cols())
        .map(|j| {
            let col = a.col(j);
            let mut best = 0;
            for (i, &v) in col.iter().enumerate().skip(1) {
                if v > col[best] {
                    best = i;
                }
            }
            (col[best] >= EMPTY_ATOM).then(|| cloud.points[best])
        })
        .collect())
}

/// Predicted atom locations and ground-truth keypoints of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointObservation {
    pub predicted: Vec<Option<Point>>,
    pub truth: Vec<Keypoint>,
}

fn distance(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl KeypointObservation {
    /// Distance from each ground-truth keypoint (in `truth` order) to each atom.
    fn distances(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.truth.len(), self.predicted.len());
        for (r, kp) in self.truth.iter().enumerate() {
            for (c, p) in self.predicted.iter().enumerate() {
                d[(r, c)] = p.map_or(MISSING_DISTANCE, |p| distance(&kp.xyz, &p).min(MISSING_DISTANCE));
            }
        }
        d
    }
}

/// Matching that minimizes total distance, as `label-row -> atom`.
fn min_distance_matching(d: &DenseMatrix) -> Result<Vec<Option<usize>>> {
    let mut profit = d.clone();
    profit.as_mut_slice().iter_mut().for_each(|v| *v = MISSING_DISTANCE - *v);
    Ok(hungarian_max(&profit)?.mapping)
}

/// Matched distance per ground-truth keypoint; unmatched keypoints get `MISSING_DISTANCE`.
fn matched_distances(d: &DenseMatrix, mapping: &[Option<usize>]) -> Vec<f64> {
    (0..d.rows())
        .map(|r| mapping.get(r).copied().flatten().map_or(MISSING_DISTANCE, |c| d[(r, c)]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckCurve {
    pub thresholds: Vec<f64>,
    /// Atoms matched to keypoint labels independently for each shape.
    pub per_shape_matching: Vec<f64>,
    /// One atom/label matching shared by all shapes.
    pub global_matching: Vec<f64>,
    /// Per-shape PCK under per-shape matching, `[shape][threshold]`.
    pub shapes: Vec<Vec<f64>>,
}

fn hit_fraction(distances: &[f64], t: f64) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    distances.iter().filter(|&&d| d <= t).count() as f64 / distances.len() as f64
}

/// Percentage of correct keypoints at each threshold, a keypoint counting as correct
/// when its matched atom lies within the threshold distance.
pub fn pck_curve(observations: &[KeypointObservation], thresholds: &[f64]) -> Result<PckCurve> {
    if thresholds.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidConfig("PCK thresholds must be finite and non-negative".into()));
    }
    if observations.is_empty() {
        return Err(Error::InvalidInput("no keypoint observations".into()));
    }
    let num_atoms = observations[0].predicted.len();
    if num_atoms == 0 || observations.iter().any(|o| o.predicted.len() != num_atoms) {
        return Err(Error::InvalidInput("observations disagree on the number of atoms".into()));
    }
    let num_labels = observations
        .iter()
        .flat_map(|o| o.truth.iter().map(|k| k.label + 1))
        .max()
        .unwrap_or(0);

    let mut local_all = Vec::new();
    let mut shapes = Vec::with_capacity(observations.len());
    let mut summed = DenseMatrix::zeros(num_labels.max(1), num_atoms);
    let mut per_obs = Vec::with_capacity(observations.len());
    for o in observations {
        let d = o.distances();
        let local = matched_distances(&d, &min_distance_matching(&d)?);
        shapes.push(thresholds.iter().map(|&t| hit_fraction(&local, t)).collect());
        local_all.extend_from_slice(&local);
        for (r, kp) in o.truth.iter().enumerate() {
            for c in 0..num_atoms {
                summed[(kp.label, c)] += d[(r, c)];
            }
        }
        per_obs.push(d);
    }
    // Convert summed distances to profits against the worst case.
    let worst = MISSING_DISTANCE * observations.len() as f64;
    summed.as_mut_slice().iter_mut().for_each(|v| *v = worst - *v);
    let global_map = hungarian_max(&summed)?.mapping;
    let mut global_all = Vec::new();
    for (o, d) in observations.iter().zip(&per_obs) {
        let mapping: Vec<Option<usize>> = o
            .truth
            .iter()
            .map(|kp| global_map.get(kp.label).copied().flatten())
            .collect();
        global_all.extend(matched_distances(d, &mapping));
    }
    Ok(PckCurve {
        thresholds: thresholds.to_vec(),
        per_shape_matching: thresholds.iter().map(|&t| hit_fraction(&local_all, t)).collect(),
        global_matching: thresholds.iter().map(|&t| hit_fraction(&global_all, t)).collect(),
        shapes,
    })
}

/// A ground-truth instance: its class and the indices of its points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub class: usize,
    pub points: Vec<usize>,
}

/// One instance per part label present in `labels`.
pub fn instances_from_labels(labels: &[usize]) -> Vec<Instance> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    by_label
        .into_iter()
        .map(|(class, points)| Instance { class, points })
        .collect()
}

/// Point sets of the non-empty atoms of a hard segmentation.
pub fn proposals_from_prediction(pred: &SegmentationPrediction) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); pred.k];
    for (i, &a) in pred.atoms.iter().enumerate() {
        sets[a].push(i);
    }
    sets.retain(|s| !s.is_empty());
    sets
}

fn set_iou(a: &[usize], b: &[usize]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    a.dedup();
    b.sort_unstable();
    b.dedup();
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecall {
    pub threshold: f64,
    pub recall: f64,
    pub per_class: BTreeMap<usize, f64>,
}

/// Fraction of ground-truth instances overlapped by some proposal with IoU at or above `threshold`.
/// Each element of `shapes` pairs one shape's proposals with its instances.
pub fn proposal_recall(shapes: &[(Vec<Vec<usize>>, Vec<Instance>)], threshold: f64) -> Result<ProposalRecall> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!("IoU threshold must lie in (0, 1], got {threshold}")));
    }
    let mut covered: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (proposals, instances) in shapes {
        for inst in instances {
            let hit = proposals.iter().any(|p| set_iou(p, &inst.points) >= threshold);
            let e = covered.entry(inst.class).or_default();
            e.0 += usize::from(hit);
            e.1 += 1;
        }
    }
    let (hits, total) = covered.values().fold((0, 0), |(h, t), (a, b)| (h + a, t + b));
    Ok(ProposalRecall {
        threshold,
        recall: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        per_class: covered
            .into_iter()
            .map(|(c, (h, t))| (c, h as f64 / t as f64))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelConfusion {
    /// `matrix[(a, b)]` is the cosine between the atom histograms of labels `a` and `b`.
    pub matrix: DenseMatrix,
    /// Labels that never occur; their rows and columns are zero.
    pub unobserved: Vec<usize>,
}

/// Cosine similarity between labels' atom-usage histograms accumulated over all shapes.
pub fn label_confusion(shapes: &[(SegmentationPrediction, Vec<usize>)], num_labels: usize) -> Result<LabelConfusion> {
    if num_labels == 0 {
        return Err(Error::InvalidInput("no labels".into()));
    }
    let k = shapes.first().map_or(0, |(p, _)| p.k);
    let mut counts = DenseMatrix::zeros(num_labels, k.max(1));
    for (pred, gt) in shapes {
        check_lengths(pred, gt)?;
        if pred.k != k {
            return Err(Error::InvalidInput("predictions disagree on k".into()));
        }
        for (&l, &a) in gt.iter().zip(&pred.atoms) {
            if l >= num_labels {
                return Err(Error::InvalidInput(format!("label {l} outside 0..{num_labels}")));
            }
            counts[(l, a)] += 1.0;
        }
    }
    confusion_from_counts(&counts)
}

/// Cosine matrix of the rows of a label-by-atom count table.
pub fn confusion_from_counts(counts: &DenseMatrix) -> Result<LabelConfusion> {
    let l = counts.rows();
    let norms: Vec<f64> = (0..l)
        .map(|r| counts.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let unobserved: Vec<usize> = (0..l).filter(|&r| norms[r] == 0.0).collect();
    let mut matrix = DenseMatrix::zeros(l, l);
    for a in 0..l {
        for b in 0..l {
            if norms[a] > 0.0 && norms[b] > 0.0 {
                let dot: f64 = counts.row(a).iter().zip(counts.row(b)).map(|(x, y)| x * y).sum();
                matrix[(a, b)] = (dot / (norms[a] * norms[b])).min(1.0);
            }
        }
    }
    Ok(LabelConfusion { matrix, unobserved })
}

/// Mean Euclidean norm of each atom over the given dictionaries.
pub fn atom_mass(dictionaries: &[DenseMatrix]) -> Vec<f64> {
    let Some(first) = dictionaries.first() else {
        return Vec::new();
    };
    let mut mass = vec![0.0; first.cols()];
    for a in dictionaries {
        for (m, n) in mass.iter_mut().zip(a.column_norms()) {
            *m += n / dictionaries.len() as f64;
        }
    }
    mass
}

/// Number of atoms whose mass is below `fraction` of the largest atom's.
pub fn count_faint_atoms(mass: &[f64], fraction: f64) -> usize {
    let top = mass.iter().copied().fold(0.0, f64::max);
    mass.iter().filter(|&&m| m < fraction * top).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeMetrics {
    pub shape_id: String,
    pub category: String,
    pub miou: Option<f64>,
    /// Per-shape PCK at each report threshold.
    pub pck: Vec<f64>,
}

/// Everything `eval` writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: String,
    pub shapes: Vec<ShapeMetrics>,
    pub mean_shape_miou: Option<f64>,
    pub category_miou: BTreeMap<String, CategoryMiou>,
    pub pck: Option<PckCurve>,
    pub proposal_recall: Vec<ProposalRecall>,
    pub confusion: Option<LabelConfusion>,
    pub atom_mass: Vec<f64>,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("metric report", e))
    }

    /// One row per shape: id, category, mIoU, then PCK at each threshold.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("shape_id,category,miou");
        if let Some(p) = &self.pck {
            for t in &p.thresholds {
                let _ = write!(out, ",pck@{t}");
            }
        }
        out.push('\n');
        for s in &self.shapes {
            let miou = s.miou.map_or(String::new(), |v| v.to_string());
            let _ = write!(out, "{},{},{}", s.shape_id, s.category, miou);
            for v in &s.pck {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use proptest::prelude::*;
    use rand::Rng;

    fn seg(atoms: &[usize], k: usize) -> SegmentationPrediction {
        SegmentationPrediction { atoms: atoms.to_vec(), k }
    }

    fn one_hot(atoms: &[usize], k: usize) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(atoms.len(), k);
        for (i, &j) in atoms.iter().enumerate() {
            a[(i, j)] = 1.0;
        }
        a
    }

    #[test]
    fn binarize_examples() {
        let atoms = [2, 0, 1, 1, 3];
        assert_eq!(binarize_rows(&one_hot(&atoms, 4)).atoms, atoms);
        let tie = DenseMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(binarize_rows(&tie).atoms, vec![0]);

        let mut rng = RngStream::new(4);
        let a = DenseMatrix::from_vec(50, 6, (0..300).map(|_| rng.random_range(0..4) as f64).collect()).unwrap();
        let naive: Vec<usize> = (0..50)
            .map(|i| {
                let mut best = (f64::NEG_INFINITY, 0);
                for j in 0..6 {
                    if a[(i, j)] > best.0 {
                        best = (a[(i, j)], j);
                    }
                }
                best.1
            })
            .collect();
        assert_eq!(binarize_rows(&a).atoms, naive);
    }

    #[test]
    fn shape_miou_examples() {
        let gt = [0, 0, 1, 1, 2, 2];
        assert_eq!(matched_miou_shape(&seg(&[3, 3, 0, 0, 1, 1], 5), &gt).unwrap(), 1.0);
        // Each atom covers one point of each part: every IoU is 1/3.
        let crossed = matched_miou_shape(&seg(&[0, 1, 0, 1], 2), &[0, 0, 1, 1]).unwrap();
        assert!((crossed - 1.0 / 3.0).abs() < 1e-12);
        let merged = matched_miou_shape(&seg(&[0, 0, 0, 0], 3), &[0, 0, 1, 1]).unwrap();
        assert!((merged - 0.25).abs() < 1e-12);
    }

    #[test]
    fn category_examples() {
        let gt = vec![0, 0, 1, 1, 2, 2];
        let a = seg(&[1, 1, 2, 2, 0, 0], 3);
        let consistent = vec![(a.clone(), gt.clone()), (a.clone(), gt.clone())];
        let c = matched_miou_category(&consistent).unwrap();
        assert!((c.miou - 1.0).abs() < 1e-12);
        assert_eq!(c.mapping, vec![Some(1), Some(2), Some(0)]);

        let swapped = seg(&[2, 2, 1, 1, 0, 0], 3);
        let mixed = vec![(a, gt.clone()), (swapped, gt)];
        let c = matched_miou_category(&mixed).unwrap();
        let per_shape_mean = mixed
            .iter()
            .map(|(p, g)| matched_miou_shape(p, g).unwrap())
            .sum::<f64>()
            / 2.0;
        assert!(c.miou < per_shape_mean);
        // One of the two is fit exactly; the other keeps only the shared part.
        assert!((c.miou - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn category_matching_equals_enumeration() {
        let tables = [
            DenseMatrix::from_rows(&[vec![0.9, 0.1, 0.0], vec![0.2, 0.5, 0.3], vec![0.0, 0.3, 0.6]]).unwrap(),
            DenseMatrix::from_rows(&[vec![0.1, 0.8, 0.1], vec![0.7, 0.2, 0.0], vec![0.1, 0.0, 0.9]]).unwrap(),
            DenseMatrix::from_rows(&[vec![0.6, 0.3, 0.0], vec![0.1, 0.1, 0.7], vec![0.2, 0.6, 0.1]]).unwrap(),
        ];
        let mapping = category_matching(&tables).unwrap();
        let score = |perm: &[usize]| -> f64 {
            tables
                .iter()
                .map(|t| (0..3).map(|l| t[(l, perm[l])]).sum::<f64>())
                .sum()
        };
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms.iter().map(|p| score(p)).fold(f64::NEG_INFINITY, f64::max);
        let found: Vec<usize> = mapping.iter().map(|m| m.unwrap()).collect();
        assert!((score(&found) - best).abs() < 1e-12);
        // Summed table diagonal: 1.6 + 0.8 + 1.6 = 4.0, the best of the six permutations.
        assert!((best - 4.0).abs() < 1e-12);
        assert_eq!(found, vec![0, 1, 2]);
    }

    fn kp(label: usize, xyz: Point) -> Keypoint {
        Keypoint { label, xyz }
    }

    #[test]
    fn pck_examples() {
        let truth = vec![kp(0, [0.0, 0.0, 0.0]), kp(1, [1.0, 0.0, 0.0])];
        let exact = KeypointObservation {
            predicted: vec![Some([1.0, 0.0, 0.0]), Some([0.0, 0.0, 0.0]), None],
            truth: truth.clone(),
        };
        let c = pck_curve(&[exact], &[0.01, 0.05]).unwrap();
        assert_eq!(c.per_shape_matching, vec![1.0, 1.0]);
        assert_eq!(c.global_matching, vec![1.0, 1.0]);

        let far = KeypointObservation {
            predicted: vec![Some([0.0, 2.0, 0.0]), Some([1.0, 2.0, 0.0])],
            truth: truth.clone(),
        };
        let c = pck_curve(&[far], &[0.1, 0.5]).unwrap();
        assert_eq!(c.per_shape_matching, vec![0.0, 0.0]);

        let toy = KeypointObservation {
            predicted: vec![Some([0.01, 0.0, 0.0]), Some([1.0, 0.05, 0.0])],
            truth,
        };
        let c = pck_curve(&[toy], &[0.02, 0.1]).unwrap();
        assert_eq!(c.per_shape_matching, vec![0.5, 1.0]);
        assert_eq!(c.global_matching, vec![0.5, 1.0]);
        assert_eq!(c.shapes, vec![vec![0.5, 1.0]]);
    }

    #[test]
    fn global_pck_penalizes_reordering() {
        let truth = vec![kp(0, [0.0, 0.0, 0.0]), kp(1, [1.0, 0.0, 0.0])];
        let a = KeypointObservation {
            predicted: vec![Some([0.0, 0.0, 0.0]), Some([1.0, 0.0, 0.0])],
            truth: truth.clone(),
        };
        let b = KeypointObservation {
            predicted: vec![Some([1.0, 0.0, 0.0]), Some([0.0, 0.0, 0.0])],
            truth,
        };
        let c = pck_curve(&[a, b], &[0.05]).unwrap();
        assert_eq!(c.per_shape_matching, vec![1.0]);
        assert_eq!(c.global_matching, vec![0.5]);
    }

    #[test]
    fn predicted_keypoints_skip_empty_atoms() {
        let cloud = PointCloud {
            points: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        };
        let a = DenseMatrix::from_rows(&[vec![0.1, 0.0], vec![0.7, 1e-7], vec![0.2, 0.0]]).unwrap();
        assert_eq!(predicted_keypoints(&a, &cloud).unwrap(), vec![Some([1.0, 0.0, 0.0]), None]);
    }

    #[test]
    fn recall_examples() {
        let labels = [0, 0, 1, 1, 1, 2];
        let inst = instances_from_labels(&labels);
        let same = proposals_from_prediction(&seg(&labels, 3));
        let r = proposal_recall(&[(same, inst.clone())], 0.5).unwrap();
        assert_eq!(r.recall, 1.0);
        let r = proposal_recall(&[(Vec::new(), inst)], 0.5).unwrap();
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.per_class.len(), 3);

        // IoU({0,1}, {0,1,2,3}) = 2/4 exactly.
        let gt = vec![Instance { class: 7, points: vec![0, 1] }];
        let r = proposal_recall(&[(vec![vec![0, 1, 2, 3]], gt.clone())], 0.5).unwrap();
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.per_class[&7], 1.0);
        let r = proposal_recall(&[(vec![vec![0, 1, 2, 3]], gt)], 0.51).unwrap();
        assert_eq!(r.recall, 0.0);
        assert!(proposal_recall(&[], 0.0).is_err());
    }

    #[test]
    fn confusion_examples() {
        let gt = vec![0, 0, 1, 1, 2];
        let own = label_confusion(&[(seg(&[2, 2, 0, 0, 1], 3), gt.clone())], 3).unwrap();
        assert_eq!(own.matrix, DenseMatrix::identity(3));
        let merged = label_confusion(&[(seg(&[1, 1, 1, 1, 0], 3), gt)], 4).unwrap();
        assert!((merged.matrix[(0, 1)] - 1.0).abs() < 1e-12);
        assert_eq!(merged.unobserved, vec![3]);
        assert!(merged.matrix.row(3).iter().all(|&v| v == 0.0));

        // v_0 = (3, 1), v_1 = (1, 2): cos = 5 / (sqrt(10) sqrt(5)) = 1/sqrt(2).
        let counts = DenseMatrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let c = confusion_from_counts(&counts).unwrap();
        assert!((c.matrix[(0, 1)] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(c.matrix[(0, 1)], c.matrix[(1, 0)]);
    }

    #[test]
    fn faint_atoms() {
        let a = DenseMatrix::from_rows(&[vec![0.6, 0.01, 0.0], vec![0.8, 0.1, 0.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![0.0, 0.03, 3.0], vec![1.0, 0.04, 4.0]]).unwrap();
        let m = atom_mass(&[a, b]);
        assert_eq!(m[0], 1.0);
        assert!((m[2] - 2.5).abs() < 1e-12);
        assert_eq!(count_faint_atoms(&m, 0.05), 1);
    }

    #[test]
    fn csv_matches_json() {
        let report = MetricReport {
            mode: "key".into(),
            shapes: vec![ShapeMetrics {
                shape_id: "s0".into(),
                category: "table4".into(),
                miou: Some(0.125),
                pck: vec![0.5, 1.0],
            }],
            mean_shape_miou: Some(0.125),
            category_miou: BTreeMap::new(),
            pck: Some(PckCurve {
                thresholds: vec![0.02, 0.1],
                per_shape_matching: vec![0.5, 1.0],
                global_matching: vec![0.5, 1.0],
                shapes: vec![vec![0.5, 1.0]],
            }),
            proposal_recall: Vec::new(),
            confusion: None,
            atom_mass: Vec::new(),
        };
        assert_eq!(report.to_csv(), "shape_id,category,miou,pck@0.02,pck@0.1\ns0,table4,0.125,0.5,1\n");
        let back: MetricReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }

    proptest! {
        #[test]
        fn miou_invariant_to_atom_relabeling(
            gt in proptest::collection::vec(0usize..4, 8..40),
            atoms_seed in any::<u64>(),
        ) {
            let mut rng = RngStream::new(atoms_seed);
            let atoms: Vec<usize> = gt.iter().map(|_| rng.random_range(0..5)).collect();
            let perm = [3, 0, 4, 1, 2];
            let relabeled: Vec<usize> = atoms.iter().map(|&a| perm[a]).collect();
            let x = matched_miou_shape(&seg(&atoms, 5), &gt).unwrap();
            let y = matched_miou_shape(&seg(&relabeled, 5), &gt).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&x));
        }

        #[test]
        fn shape_miou_dominates_category(seed in any::<u64>()) {
            let mut rng = RngStream::new(seed);
            let shapes: Vec<(SegmentationPrediction, Vec<usize>)> = (0..4)
                .map(|_| {
                    let gt: Vec<usize> = (0..30).map(|i| i % 3).collect();
                    let atoms = (0..30).map(|_| rng.random_range(0..4)).collect();
                    (SegmentationPrediction { atoms, k: 4 }, gt)
                })
                .collect();
            let cat = matched_miou_category(&shapes).unwrap();
            for ((p, g), c) in shapes.iter().zip(&cat.per_shape) {
                prop_assert!(matched_miou_shape(p, g).unwrap() >= c - 1e-12);
            }
        }

        #[test]
        fn pck_is_monotone(seed in any::<u64>()) {
            let mut rng = RngStream::new(seed);
            let mut pt = || -> Point { [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0] };
            let obs: Vec<KeypointObservation> = (0..3)
                .map(|_| KeypointObservation {
                    predicted: (0..5).map(|_| Some(pt())).collect(),
                    truth: (0..4).map(|l| kp(l, pt())).collect(),
                })
                .collect();
            let ts = [0.0, 0.1, 0.2, 0.4, 0.8, 1.6, 3.0];
            let c = pck_curve(&obs, &ts).unwrap();
            for w in c.per_shape_matching.windows(2).chain(c.global_matching.windows(2)) {
                prop_assert!(w[0] <= w[1]);
            }
        }
    }
}
