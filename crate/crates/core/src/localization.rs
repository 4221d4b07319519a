//! Semantic localization of the target vehicle.
//!
//! Training GPS fixes are standardized and clustered with Lloyd's k-means.
//! Every cluster is mapped to the image division of the most frequent beam
//! label among its members. At inference the nearest centroid to the
//! target's GPS fix picks a division; a window of `±Ψ` divisions around it
//! selects one detection, whose mask becomes the target-only mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BBox, BinaryImage, Detection};

pub type GpsPoint = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Standardizer {
    pub fn transform(&self, p: GpsPoint) -> GpsPoint {
        [(p[0] - self.mean[0]) / self.std[0], (p[1] - self.mean[1]) / self.std[1]]
    }
}

/// Per-coordinate mean and population standard deviation. Axes with zero
/// spread get a standard deviation of 1.
pub fn fit_standardizer(points: &[GpsPoint]) -> Result<Standardizer> {
    if points.len() < 2 {
        return Err(Error::NotEnoughPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let mut mean = [0.0; 2];
    for p in points {
        mean[0] += p[0];
        mean[1] += p[1];
    }
    mean = [mean[0] / n, mean[1] / n];
    let mut var = [0.0; 2];
    for p in points {
        var[0] += (p[0] - mean[0]).powi(2);
        var[1] += (p[1] - mean[1]).powi(2);
    }
    let std = var.map(|v| {
        let s = (v / n).sqrt();
        if s > 0.0 && s.is_finite() {
            s
        } else {
            1.0
        }
    });
    Ok(Standardizer { mean, std })
}

fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the smaller index.
pub fn nearest_centroid<const D: usize>(p: &[f64; D], centroids: &[[f64; D]]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// `J = Σ_i min_j ‖p_i − μ_j‖²`.
pub fn kmeans_objective<const D: usize>(points: &[[f64; D]], centroids: &[[f64; D]]) -> f64 {
    points
        .iter()
        .map(|p| dist2(p, &centroids[nearest_centroid(p, centroids)]))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<const D: usize> {
    pub centroids: Vec<[f64; D]>,
    pub assignments: Vec<usize>,
    /// Objective after the initial assignment and after every iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

fn assign<const D: usize>(points: &[[f64; D]], centroids: &[[f64; D]]) -> (Vec<usize>, f64) {
    let mut j = 0.0;
    let a = points
        .iter()
        .map(|p| {
            let c = nearest_centroid(p, centroids);
            j += dist2(p, &centroids[c]);
            c
        })
        .collect();
    (a, j)
}

/// k-means++ seeding.
fn init_centroids<const D: usize, R: Rng>(points: &[[f64; D]], k: usize, rng: &mut R) -> Vec<[f64; D]> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            while d2[chosen] == 0.0 && chosen > 0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding. Stops when assignments stop
/// changing, the largest centroid shift drops below `tol`, or after
/// `max_iters` updates. An empty cluster is reseeded to the point farthest
/// from its previous centroid.
pub fn kmeans_fit<const D: usize>(
    points: &[[f64; D]],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansFit<D>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::NotEnoughPoints {
            needed: k,
            got: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_centroids(points, k, &mut rng);
    let (mut assignments, j0) = assign(points, &centroids);
    let mut history = vec![j0];
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let mut sums = vec![[0.0; D]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut reseeded: Vec<usize> = Vec::new();
        let mut shift: f64 = 0.0;
        let mut updated = centroids.clone();
        for j in 0..k {
            if counts[j] > 0 {
                updated[j] = sums[j].map(|s| s / counts[j] as f64);
            } else {
                let mut far = (usize::MAX, -1.0);
                for (i, p) in points.iter().enumerate() {
                    let d = dist2(p, &centroids[j]);
                    if d > far.1 && !reseeded.contains(&i) {
                        far = (i, d);
                    }
                }
                if far.0 != usize::MAX {
                    reseeded.push(far.0);
                    updated[j] = points[far.0];
                }
            }
            shift = shift.max(dist2(&updated[j], &centroids[j]).sqrt());
        }
        centroids = updated;
        let (next, j) = assign(points, &centroids);
        history.push(j);
        let unchanged = next == assignments;
        assignments = next;
        if (unchanged && reseeded.is_empty()) || shift < tol {
            break;
        }
    }

    Ok(KMeansFit {
        centroids,
        assignments,
        objective_history: history,
        iterations,
    })
}

/// Most frequent label; ties go to the smaller label.
pub fn mode_label(labels: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut counts = std::collections::BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let mut best: Option<(usize, usize)> = None;
    for (label, count) in counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((label, count));
        }
    }
    best.map(|(l, _)| l)
}

/// Beam index `[0, N)` to 1-based division `[1, Ϝ]`.
pub fn division_for_label(label: usize, divisions: usize, num_beams: usize) -> usize {
    (label * divisions / num_beams + 1).min(divisions)
}

/// Columns `[lo, hi)` of 1-based division `d` when `cols` columns are split into `divisions` strips.
pub fn division_columns(d: usize, divisions: usize, cols: usize) -> (usize, usize) {
    ((d - 1) * cols / divisions, d * cols / divisions)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbParams {
    pub clusters: usize,
    pub divisions: usize,
    pub window_half_width: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for KbParams {
    fn default() -> Self {
        Self {
            clusters: 64,
            divisions: 64,
            window_half_width: 2,
            seed: 0,
            max_iters: 300,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub standardizer: Standardizer,
    pub centroids: Vec<GpsPoint>,
    /// 1-based division per centroid.
    pub centroid_division: Vec<usize>,
    pub num_divisions: usize,
    pub window_half_width: usize,
    pub k: usize,
    pub seed: u64,
    pub num_beams: usize,
}

pub fn build_kb(training: &[(GpsPoint, usize)], num_beams: usize, params: &KbParams) -> Result<KnowledgeBase> {
    if training.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if params.divisions == 0 {
        return Err(Error::InvalidConfig("divisions must be >= 1".into()));
    }
    if let Some(&(_, l)) = training.iter().find(|(_, l)| *l >= num_beams) {
        return Err(Error::InvalidInput(format!("label {l} >= num_beams {num_beams}")));
    }
    let raw: Vec<GpsPoint> = training.iter().map(|(p, _)| *p).collect();
    let standardizer = fit_standardizer(&raw)?;
    let points: Vec<GpsPoint> = raw.iter().map(|p| standardizer.transform(*p)).collect();
    let fit = kmeans_fit(&points, params.clusters, params.seed, params.max_iters, params.tol)?;

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); params.clusters];
    for (i, &a) in fit.assignments.iter().enumerate() {
        members[a].push(training[i].1);
    }
    let centroid_division = members
        .iter()
        .zip(&fit.centroids)
        .map(|(labels, c)| {
            let mode = mode_label(labels.iter().copied()).unwrap_or_else(|| {
                // empty cluster: borrow the label of the nearest training point
                let i = nearest_centroid(c, &points);
                training[i].1
            });
            division_for_label(mode, params.divisions, num_beams)
        })
        .collect();

    Ok(KnowledgeBase {
        standardizer,
        centroids: fit.centroids,
        centroid_division,
        num_divisions: params.divisions,
        window_half_width: params.window_half_width,
        k: params.clusters,
        seed: params.seed,
        num_beams,
    })
}

impl KnowledgeBase {
    pub fn division_for(&self, gps: GpsPoint) -> usize {
        let p = self.standardizer.transform(gps);
        self.centroid_division[nearest_centroid(&p, &self.centroids)]
    }

    /// Column span `[lo, hi)` of the window around division `d`, clamped to the image.
    pub fn window_columns(&self, d: usize, cols: usize) -> (usize, usize) {
        let lo = d.saturating_sub(self.window_half_width).max(1);
        let hi = (d + self.window_half_width).min(self.num_divisions);
        ((lo - 1) * cols / self.num_divisions, hi * cols / self.num_divisions)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let kb: Self = serde_json::from_str(text)?;
        if kb.centroids.len() != kb.centroid_division.len() {
            return Err(Error::Malformed {
                what: "knowledge base",
                detail: "centroid and division counts differ".into(),
            });
        }
        if kb.centroid_division.iter().any(|&d| d == 0 || d > kb.num_divisions) {
            return Err(Error::Malformed {
                what: "knowledge base",
                detail: "division index out of range".into(),
            });
        }
        Ok(kb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMask {
    pub mask: BinaryImage,
    /// Index into the detection list.
    pub selected: usize,
    pub bbox: BBox,
    pub division: usize,
    /// Window columns `[lo, hi)`.
    pub window: (usize, usize),
}

pub fn localize_target(
    detections: &[Detection],
    full_mask: &BinaryImage,
    kb: &KnowledgeBase,
    query_gps: GpsPoint,
) -> Result<TargetMask> {
    let division = kb.division_for(query_gps);
    let (lo, hi) = kb.window_columns(division, full_mask.cols());
    let candidates: Vec<usize> = detections
        .iter()
        .enumerate()
        .filter(|(_, d)| d.bbox.overlaps_columns(lo, hi))
        .map(|(i, _)| i)
        .collect();
    let selected = match candidates.as_slice() {
        [] => return Err(Error::NoDetectionInWindow),
        [only] => *only,
        many => {
            let mut best = (many[0], full_mask.count_in(&detections[many[0]].bbox, lo, hi));
            for &i in &many[1..] {
                let area = full_mask.count_in(&detections[i].bbox, lo, hi);
                if area > best.1 {
                    best = (i, area);
                }
            }
            best.0
        }
    };
    let bbox = detections[selected].bbox;
    Ok(TargetMask {
        mask: full_mask.masked_to(&bbox),
        selected,
        bbox,
        division,
        window: (lo, hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizer_two_points() {
        let s = fit_standardizer(&[[0.0, 0.0], [2.0, 2.0]]).unwrap();
        assert_eq!(s.mean, [1.0, 1.0]);
        assert_eq!(s.std, [1.0, 1.0]);
        assert_eq!(s.transform([0.0, 0.0]), [-1.0, -1.0]);
        assert_eq!(s.transform([2.0, 2.0]), [1.0, 1.0]);
    }

    #[test]
    fn standardizer_degenerate() {
        let s = fit_standardizer(&[[3.0, -1.0]; 5]).unwrap();
        assert_eq!(s.std, [1.0, 1.0]);
        assert_eq!(s.transform([3.0, -1.0]), [0.0, 0.0]);
        assert!(matches!(
            fit_standardizer(&[[0.0, 0.0]]),
            Err(Error::NotEnoughPoints { .. })
        ));
    }

    #[test]
    fn standardized_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<GpsPoint> = (0..100)
            .map(|_| [rng.random_range(-111.9..-111.8), rng.random_range(33.4..33.41)])
            .collect();
        let s = fit_standardizer(&pts).unwrap();
        let t: Vec<GpsPoint> = pts.iter().map(|p| s.transform(*p)).collect();
        for axis in 0..2 {
            let m = t.iter().map(|p| p[axis]).sum::<f64>() / 100.0;
            let v = t.iter().map(|p| (p[axis] - m).powi(2)).sum::<f64>() / 100.0;
            assert!(m.abs() < 1e-9);
            assert!((v.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kmeans_separated_blobs() {
        let mut pts = Vec::new();
        for i in 0..10 {
            let e = i as f64 * 0.01;
            pts.push([e, -e]);
            pts.push([100.0 + e, 50.0 + e]);
        }
        let fit = kmeans_fit(&pts, 2, 1, 100, 0.0).unwrap();
        let mut cs = fit.centroids.clone();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!((cs[0][0] - 0.045).abs() < 1e-12 && (cs[0][1] + 0.045).abs() < 1e-12);
        assert!((cs[1][0] - 100.045).abs() < 1e-9 && (cs[1][1] - 50.045).abs() < 1e-9);
    }

    #[test]
    fn kmeans_k_equals_n() {
        let pts: Vec<[f64; 2]> = (0..7).map(|i| [i as f64, (i * i) as f64]).collect();
        let fit = kmeans_fit(&pts, 7, 3, 50, 0.0).unwrap();
        assert_eq!(*fit.objective_history.last().unwrap(), 0.0);
        let mut cs = fit.centroids.clone();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cs, pts);
    }

    #[test]
    fn kmeans_too_many_clusters() {
        assert!(matches!(
            kmeans_fit(&[[0.0, 0.0]], 2, 0, 10, 0.0),
            Err(Error::NotEnoughPoints { .. })
        ));
    }

    #[test]
    fn kmeans_objective_oracle_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<[f64; 2]> = (0..50).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let fit = kmeans_fit(&pts, 3, 5, 100, 0.0).unwrap();
        // independent recomputation: brute-force min over centroids
        let oracle: f64 = pts
            .iter()
            .map(|p| {
                fit.centroids
                    .iter()
                    .map(|c| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        assert!((fit.objective_history.last().unwrap() - oracle).abs() < 1e-9);
        for w in fit.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn mode_ties_and_division() {
        assert_eq!(mode_label([3, 3, 5]), Some(3));
        assert_eq!(mode_label([5, 3]), Some(3));
        assert_eq!(mode_label(std::iter::empty()), None);
        assert_eq!(division_for_label(3, 64, 64), 4);
        assert_eq!(division_for_label(63, 64, 64), 64);
        assert_eq!(division_for_label(63, 16, 64), 16);
        assert_eq!(division_for_label(0, 16, 64), 1);
    }

    #[test]
    fn divisions_partition_columns() {
        for (div, cols) in [(64, 960), (7, 100), (64, 64), (5, 3)] {
            let mut covered = vec![0; cols];
            for d in 1..=div {
                let (lo, hi) = division_columns(d, div, cols);
                for c in covered.iter_mut().take(hi).skip(lo) {
                    *c += 1;
                }
            }
            assert!(covered.iter().all(|&c| c == 1));
        }
    }

    fn toy_kb(divisions: usize, psi: usize) -> KnowledgeBase {
        KnowledgeBase {
            standardizer: Standardizer {
                mean: [0.0, 0.0],
                std: [1.0, 1.0],
            },
            centroids: vec![[0.0, 0.0], [10.0, 0.0]],
            centroid_division: vec![3, 8],
            num_divisions: divisions,
            window_half_width: psi,
            k: 2,
            seed: 0,
            num_beams: divisions,
        }
    }

    #[test]
    fn window_clamps() {
        let kb = toy_kb(10, 2);
        assert_eq!(kb.window_columns(3, 100), (0, 50));
        assert_eq!(kb.window_columns(1, 100), (0, 30));
        assert_eq!(kb.window_columns(10, 100), (70, 100));
    }

    fn det(x0: usize, x1: usize) -> Detection {
        Detection {
            bbox: BBox::new(x0, 2, x1, 8),
            vehicle_id: None,
        }
    }

    #[test]
    fn single_candidate_selected() {
        let kb = toy_kb(10, 1);
        let dets = vec![det(25, 28), det(80, 90)];
        let mut mask = BinaryImage::zeros(10, 100);
        for d in &dets {
            mask.fill_rect(&d.bbox);
        }
        let t = localize_target(&dets, &mask, &kb, [0.1, 0.0]).unwrap();
        assert_eq!(t.selected, 0);
        assert_eq!(t.division, 3);
        assert_eq!(t.window, (10, 40));
        assert!(t.mask.is_subset_of(&mask));
        assert_eq!(t.mask.count_ones(), 18);
    }

    #[test]
    fn largest_in_window_area_wins() {
        let kb = toy_kb(10, 1);
        // two boxes in window [10, 40): in-window areas 6*2=12... build 100 vs 40 exactly
        let mut mask = BinaryImage::zeros(20, 100);
        let a = Detection {
            bbox: BBox::new(12, 0, 22, 10),
            vehicle_id: Some(1),
        };
        let b = Detection {
            bbox: BBox::new(30, 0, 50, 4),
            vehicle_id: Some(2),
        };
        mask.fill_rect(&a.bbox);
        mask.fill_rect(&b.bbox);
        assert_eq!(mask.count_in(&a.bbox, 10, 40), 100);
        assert_eq!(mask.count_in(&b.bbox, 10, 40), 40);
        let t = localize_target(&[b, a], &mask, &kb, [0.0, 0.0]).unwrap();
        assert_eq!(t.selected, 1);
        assert_eq!(t.bbox, a.bbox);
    }

    #[test]
    fn no_detection_in_window() {
        let kb = toy_kb(10, 1);
        let mask = BinaryImage::zeros(10, 100);
        assert!(matches!(
            localize_target(&[], &mask, &kb, [0.0, 0.0]),
            Err(Error::NoDetectionInWindow)
        ));
        assert!(matches!(
            localize_target(&[det(80, 90)], &mask, &kb, [0.0, 0.0]),
            Err(Error::NoDetectionInWindow)
        ));
    }

    #[test]
    fn build_kb_modes() {
        // two far-apart clusters with label histograms {7x10, 3x20} and {9x40}
        let mut training = Vec::new();
        for i in 0..10 {
            let e = i as f64 * 1e-3;
            let label = if i < 7 { 10 } else { 20 };
            training.push(([e, e], label));
        }
        for i in 0..9 {
            let e = i as f64 * 1e-3;
            training.push(([50.0 + e, 50.0 - e], 40));
        }
        let kb = build_kb(
            &training,
            64,
            &KbParams {
                clusters: 2,
                ..KbParams::default()
            },
        )
        .unwrap();
        let low = kb.division_for([0.0, 0.0]);
        let high = kb.division_for([50.0, 50.0]);
        assert_eq!(low, 11);
        assert_eq!(high, 41);
        let back = KnowledgeBase::from_json(&kb.to_json().unwrap()).unwrap();
        assert_eq!(back, kb);
    }

    #[test]
    fn build_kb_rejects_bad_labels() {
        assert!(build_kb(&[([0.0, 0.0], 70), ([1.0, 1.0], 1)], 64, &KbParams::default()).is_err());
        assert!(matches!(
            build_kb(&[], 64, &KbParams::default()),
            Err(Error::EmptyDataset)
        ));
    }
}
