//! Hierarchical localization against a posed tour.
//!
//! Coarse step: k nearest tour frames by global descriptor. Fine step: for
//! each candidate, the query's features that share a landmark with the
//! candidate frame become 2D-3D correspondences, and a RANSAC loop over
//! minimal 3-point samples solves the planar camera pose by Gauss-Newton on
//! pixel reprojection error. The candidate whose pose explains the most
//! correspondences wins. Feature-sparse queries fall back to the last pose.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, CameraModel, Landmark3, Observation2, Pose2};
use crate::tour::Tour;

/// Residual stand-in for points that end up behind the camera.
const BEHIND_PENALTY: f64 = 1e8;
const HEADING_SEEDS: usize = 36;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LocalizationError {
    #[error("descriptor index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query descriptor has dimension {found}, index has {expected}")]
    Dimension { found: usize, expected: usize },
    #[error("need at least 3 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("best hypothesis has {best} inliers, {required} required")]
    NoConsensus { best: usize, required: usize },
    #[error("tour frame {0} has no pose")]
    MissingPose(usize),
    #[error("no samples to evaluate")]
    EmptyInput,
}

/// Global image descriptor computed from the landmarks a view sees.
pub trait GlobalDescriptor: Send + Sync {
    fn dim(&self) -> usize;
    /// `visible` holds `(landmark id, range in meters)` pairs.
    fn describe(&self, visible: &[(u32, f64)]) -> Vec<f64>;
}

/// Each landmark id hashes to one coordinate, weighted `1 / (1 + range)`;
/// the vector is then L2-normalized. A view with nothing in it maps to the
/// uniform unit vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkHashDescriptor {
    pub dim: usize,
}

impl Default for LandmarkHashDescriptor {
    fn default() -> Self {
        Self { dim: 64 }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl GlobalDescriptor for LandmarkHashDescriptor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn describe(&self, visible: &[(u32, f64)]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(id, range) in visible {
            v[(splitmix64(id as u64) % self.dim as u64) as usize] += 1.0 / (1.0 + range);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            let u = 1.0 / (self.dim as f64).sqrt();
            v.iter_mut().for_each(|x| *x = u);
        }
        v
    }
}

/// Camera observation to localize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryObservation {
    pub descriptor: Vec<f64>,
    pub observations: Vec<Observation2>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorIndex {
    dim: usize,
    entries: Vec<(usize, Vec<f64>)>,
}

impl DescriptorIndex {
    pub fn from_tour(tour: &Tour) -> Self {
        Self {
            dim: tour.descriptor_dim(),
            entries: tour
                .frames()
                .iter()
                .map(|f| (f.index, f.descriptor.clone()))
                .collect(),
        }
    }

    pub fn new(dim: usize, entries: Vec<(usize, Vec<f64>)>) -> Self {
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Frame indices of the `k` entries closest to `descriptor` in L2,
    /// nearest first, ties to the smaller frame index.
    pub fn knn(&self, descriptor: &[f64], k: usize) -> Result<Vec<usize>, LocalizationError> {
        if self.entries.is_empty() {
            return Err(LocalizationError::EmptyIndex);
        }
        if k == 0 {
            return Err(LocalizationError::ZeroK);
        }
        if descriptor.len() != self.dim {
            return Err(LocalizationError::Dimension {
                found: descriptor.len(),
                expected: self.dim,
            });
        }
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .map(|(idx, d)| {
                let dist = d.iter().zip(descriptor).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                (dist, *idx)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(k);
        Ok(scored.into_iter().map(|(_, i)| i).collect())
    }
}

pub fn knn_candidates(
    index: &DescriptorIndex,
    q: &QueryObservation,
    k: usize,
) -> Result<Vec<usize>, LocalizationError> {
    index.knn(&q.descriptor, k)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub pixel: (f64, f64),
    pub point: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_px: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            inlier_px: 2.0,
            min_inliers: 6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSolution {
    pub pose: Pose2,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    /// Summed squared reprojection error over the inliers.
    pub cost: f64,
}

/// Squared pixel error of one correspondence, or `None` behind the camera.
pub fn reprojection_error_sq(cam: &CameraModel, pose: &Pose2, c: &Correspondence) -> Option<f64> {
    let (u, v) = cam.project_point(pose, &c.point)?;
    Some((u - c.pixel.0).powi(2) + (v - c.pixel.1).powi(2))
}

/// Summed squared reprojection error with a fixed penalty for points behind
/// the camera.
pub fn reprojection_cost(cam: &CameraModel, pose: &Pose2, corrs: &[Correspondence]) -> f64 {
    corrs
        .iter()
        .map(|c| reprojection_error_sq(cam, pose, c).unwrap_or(BEHIND_PENALTY))
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussNewtonTrace {
    pub pose: Pose2,
    /// Cost before the first step and after every accepted step.
    pub costs: Vec<f64>,
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                #[allow(clippy::needless_range_loop)]
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Gauss-Newton on squared pixel residuals over `(x, y, theta)`, halving the
/// step whenever it would increase the cost.
pub fn gauss_newton(
    cam: &CameraModel,
    corrs: &[Correspondence],
    start: Pose2,
    max_iterations: usize,
) -> GaussNewtonTrace {
    let mut pose = start;
    let mut cost = reprojection_cost(cam, &pose, corrs);
    let mut costs = vec![cost];
    for _ in 0..max_iterations {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for c in corrs {
            let Some((r, j)) = cam.residual_jacobian(&pose, &c.point, c.pixel) else {
                continue;
            };
            for row in 0..2 {
                for a in 0..3 {
                    jtr[a] += j[row][a] * r[row];
                    for b in 0..3 {
                        jtj[a][b] += j[row][a] * j[row][b];
                    }
                }
            }
        }
        let Some(delta) = solve3(jtj, [-jtr[0], -jtr[1], -jtr[2]]) else {
            break;
        };
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let cand = Pose2::new(
                pose.x + step * delta[0],
                pose.y + step * delta[1],
                pose.theta + step * delta[2],
            );
            let c = reprojection_cost(cam, &cand, corrs);
            if c <= cost {
                accepted = Some((cand, c));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_cost)) = accepted else {
            break;
        };
        let moved = (delta[0] * step).hypot(delta[1] * step) + (delta[2] * step).abs();
        pose = next;
        let improvement = cost - next_cost;
        cost = next_cost;
        costs.push(cost);
        if moved < 1e-12 || improvement <= 1e-14 * cost.max(1e-30) {
            break;
        }
    }
    GaussNewtonTrace { pose, costs }
}

/// Camera position for a fixed heading: least-squares intersection of the
/// viewing rays implied by each pixel's horizontal bearing.
fn position_for_heading(cam: &CameraModel, corrs: &[Correspondence], theta: f64) -> Option<Pose2> {
    let mut a = [[0.0; 2]; 2];
    let mut b = [0.0; 2];
    for c in corrs {
        let phi = theta + ((cam.cx - c.pixel.0) / cam.fx).atan();
        let n = [-phi.sin(), phi.cos()];
        let rhs = n[0] * c.point[0] + n[1] * c.point[1];
        for i in 0..2 {
            b[i] += n[i] * rhs;
            for j in 0..2 {
                a[i][j] += n[i] * n[j];
            }
        }
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < 1e-12 {
        return None;
    }
    Some(Pose2::new(
        (b[0] * a[1][1] - b[1] * a[0][1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
        theta,
    ))
}

/// Pose fitted to a handful of correspondences: a sweep over headings seeds
/// Gauss-Newton from the best few starts.
pub fn fit_pose(cam: &CameraModel, corrs: &[Correspondence]) -> Option<Pose2> {
    let mut starts: Vec<(f64, Pose2)> = (0..HEADING_SEEDS)
        .filter_map(|i| {
            let theta = -PI + 2.0 * PI * i as f64 / HEADING_SEEDS as f64;
            position_for_heading(cam, corrs, theta)
        })
        .map(|p| (reprojection_cost(cam, &p, corrs), p))
        .collect();
    starts.sort_by(|a, b| a.0.total_cmp(&b.0));
    starts
        .iter()
        .take(3)
        .map(|(_, p)| {
            let t = gauss_newton(cam, corrs, *p, 30);
            (*t.costs.last().unwrap(), t.pose)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, p)| p)
}

fn score(cam: &CameraModel, pose: &Pose2, corrs: &[Correspondence], inlier_px: f64) -> (Vec<bool>, usize, f64) {
    let thresh = inlier_px * inlier_px;
    let mut mask = Vec::with_capacity(corrs.len());
    let mut count = 0;
    let mut cost = 0.0;
    for c in corrs {
        let inlier = match reprojection_error_sq(cam, pose, c) {
            Some(e) if e <= thresh => {
                cost += e;
                true
            }
            _ => false,
        };
        count += inlier as usize;
        mask.push(inlier);
    }
    (mask, count, cost)
}

fn minimal_samples(n: usize, cfg: &RansacConfig) -> Vec<[usize; 3]> {
    let combos = n * (n - 1) * (n - 2) / 6;
    if combos <= cfg.iterations {
        let mut out = Vec::with_capacity(combos);
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    out.push([a, b, c]);
                }
            }
        }
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.iterations)
        .map(|_| {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let mut c = rng.random_range(0..n - 2);
            for lo in [a.min(b), a.max(b)] {
                if c >= lo {
                    c += 1;
                }
            }
            [a, b, c]
        })
        .collect()
}

/// RANSAC over minimal 3-correspondence samples followed by refinement on
/// the consensus set. Small problems enumerate every triple; larger ones draw
/// `iterations` seeded samples.
pub fn solve_pose(
    cam: &CameraModel,
    corrs: &[Correspondence],
    cfg: &RansacConfig,
) -> Result<PoseSolution, LocalizationError> {
    let n = corrs.len();
    if n < 3 {
        return Err(LocalizationError::TooFewCorrespondences(n));
    }
    let mut best: Option<PoseSolution> = None;
    for sample in minimal_samples(n, cfg) {
        let subset = sample.map(|i| corrs[i]);
        let Some(pose) = fit_pose(cam, &subset) else {
            continue;
        };
        let (mask, count, cost) = score(cam, &pose, corrs, cfg.inlier_px);
        let better = best
            .as_ref()
            .is_none_or(|b| count > b.inlier_count || (count == b.inlier_count && cost < b.cost));
        if better {
            best = Some(PoseSolution {
                pose,
                inliers: mask,
                inlier_count: count,
                cost,
            });
            if count == n {
                break;
            }
        }
    }
    let mut best = best.ok_or(LocalizationError::NoConsensus {
        best: 0,
        required: cfg.min_inliers,
    })?;

    // refine on the consensus set until it stops growing; this also polishes
    // an early all-inlier exit
    for _ in 0..4 {
        if best.inlier_count < 3 {
            break;
        }
        let support: Vec<Correspondence> = corrs
            .iter()
            .zip(&best.inliers)
            .filter_map(|(c, &keep)| keep.then_some(*c))
            .collect();
        let refined = gauss_newton(cam, &support, best.pose, 50).pose;
        let (mask, count, cost) = score(cam, &refined, corrs, cfg.inlier_px);
        if count < best.inlier_count || (count == best.inlier_count && cost > best.cost) {
            break;
        }
        let grew = count > best.inlier_count;
        best = PoseSolution {
            pose: refined,
            inliers: mask,
            inlier_count: count,
            cost,
        };
        if !grew {
            break;
        }
    }
    if best.inlier_count < cfg.min_inliers {
        return Err(LocalizationError::NoConsensus {
            best: best.inlier_count,
            required: cfg.min_inliers,
        });
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizerConfig {
    pub k: usize,
    pub ransac: RansacConfig,
    pub min_features: usize,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            k: 5,
            ransac: RansacConfig::default(),
            min_features: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub pose: Pose2,
    /// Frame index of the tour vertex nearest to `pose`.
    pub nearest_vertex: usize,
    pub inliers: usize,
    /// Candidate frame the pose was solved against; `None` on fallback.
    pub candidate: Option<usize>,
    pub fallback: bool,
}

/// Everything the localizer needs from the offline reconstruction.
#[derive(Clone, Debug)]
pub struct LocalizationMap {
    index: DescriptorIndex,
    camera: CameraModel,
    landmarks: HashMap<u32, Landmark3>,
    frame_landmarks: HashMap<usize, HashSet<u32>>,
    vertices: Vec<(usize, Pose2)>,
}

impl LocalizationMap {
    pub fn new(tour: &Tour, camera: CameraModel, landmarks: &[Landmark3]) -> Result<Self, LocalizationError> {
        let vertices = tour
            .frames()
            .iter()
            .map(|f| f.pose.map(|p| (f.index, p)).ok_or(LocalizationError::MissingPose(f.index)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            index: DescriptorIndex::from_tour(tour),
            camera,
            landmarks: landmarks.iter().map(|l| (l.id, *l)).collect(),
            frame_landmarks: tour
                .frames()
                .iter()
                .map(|f| (f.index, f.observations.iter().map(|o| o.landmark_id).collect()))
                .collect(),
            vertices,
        })
    }

    pub fn index(&self) -> &DescriptorIndex {
        &self.index
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    /// Frame index of the vertex nearest to `(x, y)`; ties to the smaller index.
    pub fn nearest_vertex(&self, x: f64, y: f64) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for &(idx, p) in &self.vertices {
            let d = (p.x - x).powi(2) + (p.y - y).powi(2);
            if d < best.0 || (d == best.0 && idx < best.1) {
                best = (d, idx);
            }
        }
        best.1
    }

    /// Query features whose landmark also appears in `frame`.
    pub fn correspondences(&self, q: &QueryObservation, frame: usize) -> Vec<Correspondence> {
        let Some(seen) = self.frame_landmarks.get(&frame) else {
            return vec![];
        };
        q.observations
            .iter()
            .filter(|o| seen.contains(&o.landmark_id))
            .filter_map(|o| {
                self.landmarks.get(&o.landmark_id).map(|l| Correspondence {
                    pixel: (o.u, o.v),
                    point: l.position,
                })
            })
            .collect()
    }

    pub fn localize(&self, q: &QueryObservation, last: Pose2, cfg: &LocalizerConfig) -> LocalizationResult {
        let fallback = || LocalizationResult {
            pose: last,
            nearest_vertex: self.nearest_vertex(last.x, last.y),
            inliers: 0,
            candidate: None,
            fallback: true,
        };
        if q.observations.len() < cfg.min_features {
            return fallback();
        }
        let Ok(candidates) = self.index.knn(&q.descriptor, cfg.k) else {
            return fallback();
        };
        let mut best: Option<(usize, f64, usize, Pose2)> = None;
        for &frame in &candidates {
            let corrs = self.correspondences(q, frame);
            let ransac = RansacConfig {
                seed: cfg.ransac.seed ^ splitmix64(frame as u64),
                ..cfg.ransac
            };
            let Ok(sol) = solve_pose(&self.camera, &corrs, &ransac) else {
                continue;
            };
            let better = best.is_none_or(|(count, cost, _, _)| {
                sol.inlier_count > count || (sol.inlier_count == count && sol.cost < cost)
            });
            if better {
                best = Some((sol.inlier_count, sol.cost, frame, sol.pose));
            }
        }
        match best {
            Some((inliers, _, candidate, pose)) => LocalizationResult {
                pose,
                nearest_vertex: self.nearest_vertex(pose.x, pose.y),
                inliers,
                candidate: Some(candidate),
                fallback: false,
            },
            None => fallback(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteSummary {
    pub median: f64,
    pub mean: f64,
    pub per_sample: Vec<f64>,
}

/// Absolute trajectory error: planar position error per (estimate, truth) pair.
pub fn evaluate_ate(pairs: &[(Pose2, Pose2)]) -> Result<AteSummary, LocalizationError> {
    if pairs.is_empty() {
        return Err(LocalizationError::EmptyInput);
    }
    let per_sample: Vec<f64> = pairs.iter().map(|(e, t)| e.distance(t)).collect();
    let mut sorted = per_sample.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mean = per_sample.iter().sum::<f64>() / n as f64;
    Ok(AteSummary {
        median,
        mean,
        per_sample,
    })
}

/// Heading error wrapped to `[0, π]`.
pub fn heading_error(a: &Pose2, b: &Pose2) -> f64 {
    normalize_angle(a.theta - b.theta).abs()
}
