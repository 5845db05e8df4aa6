//! Synthetic landmark world: generation, tours, rendering and noisy execution.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, Landmark3, Observation2, Pose2, WaypointAction};
use crate::localization::{GlobalDescriptor, LandmarkHashDescriptor, QueryObservation};
use crate::tour::{Tour, TourFrame};

pub const WORLD_FORMAT_VERSION: u32 = 1;
/// Distance of the outer patrol lane from the world boundary.
pub const LANE_MARGIN: f64 = 2.5;
/// Gap between the two opposite-direction patrol lanes.
pub const LANE_GAP: f64 = 0.6;
const CORNER_RADIUS: f64 = 1.0;
const WALL_CLEARANCE: f64 = 0.3;
const MAX_LANDMARK_HEIGHT: f64 = 2.5;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("infeasible world spec: {0}")]
    Infeasible(String),
    #[error("pose ({x:.3}, {y:.3}) is outside the world bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid noise model: {0}")]
    Noise(String),
    #[error("unsupported world format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed world file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tour(#[from] crate::tour::TourError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (x.clamp(self.min_x, self.max_x), y.clamp(self.min_y, self.max_y))
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }
}

/// Full-height wall segment; blocks line of sight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

fn orient(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
}

fn on_segment(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> bool {
    r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
}

/// Closed segment intersection test.
pub fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

fn point_segment_distance(p: [f64; 2], w: &Wall) -> f64 {
    let (ax, ay) = (w.a[0], w.a[1]);
    let (dx, dy) = (w.b[0] - ax, w.b[1] - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - ax) * dx + (p[1] - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    (p[0] - ax - t * dx).hypot(p[1] - ay - t * dy)
}

/// Ground truth behind one evaluation instruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionTag {
    pub instruction: String,
    /// Where the instruction image is taken from, for multimodal instructions.
    pub image_pose: Option<Pose2>,
    pub goal_pose: Pose2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub bounds: Bounds,
    pub walls: Vec<Wall>,
    pub landmarks: Vec<Landmark3>,
    pub camera: CameraModel,
    pub instruction_tags: Vec<InstructionTag>,
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    version: u32,
    #[serde(flatten)]
    world: World,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WallLayout {
    Open,
    #[default]
    Offices,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub seed: u64,
    pub width: f64,
    pub height: f64,
    pub landmark_count: usize,
    /// Extra landmarks mounted on the outer boundary, spread by perimeter length.
    pub perimeter_landmarks: usize,
    pub wall_layout: WallLayout,
    pub instruction_count: usize,
    pub camera: CameraModel,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 40.0,
            height: 20.0,
            landmark_count: 800,
            perimeter_landmarks: 360,
            wall_layout: WallLayout::Offices,
            instruction_count: 20,
            camera: CameraModel::default(),
        }
    }
}

/// Additive noise applied when rendering and executing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct NoiseModel {
    pub pixel_sigma: f64,
    pub outlier_rate: f64,
    pub action_sigma_xy: f64,
    pub action_sigma_theta: f64,
    /// Probability that an observation comes back feature-sparse.
    pub drop_rate: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let all = [
            self.pixel_sigma,
            self.outlier_rate,
            self.action_sigma_xy,
            self.action_sigma_theta,
            self.drop_rate,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(SimError::Noise("all parameters must be finite and non-negative".into()));
        }
        if self.outlier_rate >= 1.0 {
            return Err(SimError::Noise(format!("outlier_rate {} must be < 1", self.outlier_rate)));
        }
        if self.drop_rate > 1.0 {
            return Err(SimError::Noise(format!("drop_rate {} must be <= 1", self.drop_rate)));
        }
        Ok(())
    }
}

const PLACES: [&str; 24] = [
    "printer",
    "kitchen",
    "whiteboard",
    "exit",
    "building map",
    "ladder",
    "paper cups",
    "gray trash can",
    "blue area",
    "scooter",
    "conference room",
    "coffee machine",
    "mail room",
    "robot lab",
    "sofa",
    "supply shelf",
    "water fountain",
    "bike rack",
    "phone booth",
    "library corner",
    "plant wall",
    "server closet",
    "reception desk",
    "fridge",
];

fn instruction_text(i: usize) -> (String, bool) {
    let place = match PLACES.get(i) {
        Some(p) => p.to_string(),
        None => format!("marker {i}"),
    };
    // every fourth instruction comes with an image
    if i % 4 == 3 {
        (format!("Where should I return this? It belongs by the {place}."), true)
    } else {
        (format!("Take me to the {place}."), false)
    }
}

fn lane_rects(bounds: &Bounds) -> [(f64, f64, f64, f64); 2] {
    let inset = |m: f64| (bounds.min_x + m, bounds.min_y + m, bounds.max_x - m, bounds.max_y - m);
    [inset(LANE_MARGIN), inset(LANE_MARGIN + LANE_GAP)]
}

/// Uniformly spaced poses along a rounded rectangle, tangent headings.
fn rounded_rect(rect: (f64, f64, f64, f64), radius: f64, ccw: bool, spacing: f64, offset: f64) -> Vec<Pose2> {
    let (x0, y0, x1, y1) = rect;
    let r = radius.min((x1 - x0) / 2.0).min((y1 - y0) / 2.0);
    let w = x1 - x0 - 2.0 * r;
    let h = y1 - y0 - 2.0 * r;
    let arc = FRAC_PI_2 * r;
    let total = 2.0 * (w + h) + 4.0 * arc;
    // counterclockwise from the bottom edge: bottom, BR arc, right, TR, top, TL, left, BL
    let at = |s: f64| -> Pose2 {
        let mut s = s.rem_euclid(total);
        let edges: [(f64, [f64; 2], f64); 4] = [
            (w, [x0 + r, y0], 0.0),
            (h, [x1, y0 + r], FRAC_PI_2),
            (w, [x1 - r, y1], PI),
            (h, [x0, y1 - r], -FRAC_PI_2),
        ];
        let centers = [[x1 - r, y0 + r], [x1 - r, y1 - r], [x0 + r, y1 - r], [x0 + r, y0 + r]];
        for k in 0..4 {
            let (len, start, heading) = edges[k];
            if s < len {
                return Pose2::new(start[0] + s * heading.cos(), start[1] + s * heading.sin(), heading);
            }
            s -= len;
            if s < arc {
                let a = heading - FRAC_PI_2 + s / r;
                let c = centers[k];
                return Pose2::new(c[0] + r * a.cos(), c[1] + r * a.sin(), a + FRAC_PI_2);
            }
            s -= arc;
        }
        Pose2::new(x0 + r, y0, 0.0)
    };
    let n = (total / spacing).round().max(1.0) as usize;
    let step = total / n as f64;
    (0..n)
        .map(|i| {
            let s = offset + i as f64 * step;
            if ccw {
                at(s)
            } else {
                // walk the same loop backwards
                let p = at(-s);
                Pose2::new(p.x, p.y, p.theta + PI)
            }
        })
        .collect()
}

fn rounded_rect_length(rect: (f64, f64, f64, f64), radius: f64) -> f64 {
    let (x0, y0, x1, y1) = rect;
    let r = radius.min((x1 - x0) / 2.0).min((y1 - y0) / 2.0);
    2.0 * (x1 - x0 - 2.0 * r + y1 - y0 - 2.0 * r) + 2.0 * PI * r
}

impl World {
    pub fn contains(&self, pose: &Pose2) -> bool {
        self.bounds.contains(pose.x, pose.y)
    }

    pub fn landmark(&self, id: u32) -> Option<&Landmark3> {
        self.landmarks.iter().find(|l| l.id == id)
    }

    pub fn tag(&self, instruction: &str) -> Option<&InstructionTag> {
        self.instruction_tags.iter().find(|t| t.instruction == instruction)
    }

    pub fn occluded(&self, from: [f64; 2], to: [f64; 2]) -> bool {
        self.walls.iter().any(|w| segments_intersect(from, to, w.a, w.b))
    }

    /// Visible, unoccluded landmarks with their noiseless pixels and ranges.
    pub fn visible(&self, pose: &Pose2) -> Vec<(Observation2, f64)> {
        let cam = &self.camera;
        self.landmarks
            .iter()
            .filter_map(|lm| {
                let obs = cam.project(pose, lm)?;
                if self.occluded([pose.x, pose.y], [lm.position[0], lm.position[1]]) {
                    return None;
                }
                Some((obs, cam.range(pose, &lm.position)))
            })
            .collect()
    }

    /// Closed patrol loop walked counterclockwise on an outer lane, then
    /// clockwise on an inner lane, sampled into roughly `frames` poses.
    pub fn patrol_route(&self, frames: usize) -> Vec<Pose2> {
        let [outer, inner] = lane_rects(&self.bounds);
        let total = rounded_rect_length(outer, CORNER_RADIUS) + rounded_rect_length(inner, CORNER_RADIUS);
        let spacing = total / frames.max(2) as f64;
        let mut poses = rounded_rect(outer, CORNER_RADIUS, true, spacing, 0.0);
        poses.extend(rounded_rect(inner, CORNER_RADIUS, false, spacing, 0.0));
        poses
    }

    pub fn render(&self, pose: &Pose2, noise: &NoiseModel, seed: u64) -> Result<QueryObservation, SimError> {
        self.render_with(&LandmarkHashDescriptor::default(), pose, noise, seed)
    }

    /// Renders the camera observation at `pose`. The descriptor always comes
    /// from the noiseless visible set; noise and outliers only touch the
    /// feature list.
    pub fn render_with(
        &self,
        descriptor: &dyn GlobalDescriptor,
        pose: &Pose2,
        noise: &NoiseModel,
        seed: u64,
    ) -> Result<QueryObservation, SimError> {
        if !self.contains(pose) {
            return Err(SimError::OutOfBounds { x: pose.x, y: pose.y });
        }
        noise.validate()?;
        let visible = self.visible(pose);
        let ranges: Vec<(u32, f64)> = visible.iter().map(|(o, r)| (o.landmark_id, *r)).collect();
        let desc = descriptor.describe(&ranges);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if noise.drop_rate > 0.0 && rng.random::<f64>() < noise.drop_rate {
            return Ok(QueryObservation {
                descriptor: desc,
                observations: vec![],
            });
        }
        let mut observations: Vec<Observation2> = visible.into_iter().map(|(o, _)| o).collect();
        if noise.pixel_sigma > 0.0 {
            let normal = Normal::new(0.0, noise.pixel_sigma).expect("sigma validated");
            let cam = self.camera;
            observations = observations
                .into_iter()
                .filter_map(|mut o| {
                    o.u += normal.sample(&mut rng);
                    o.v += normal.sample(&mut rng);
                    cam.in_image(o.u, o.v).then_some(o)
                })
                .collect();
        }
        let corrupt = (noise.outlier_rate * observations.len() as f64).floor() as usize;
        if corrupt > 0 && self.landmarks.len() > 1 {
            for i in sample(&mut rng, observations.len(), corrupt) {
                let true_id = observations[i].landmark_id;
                let wrong = loop {
                    let cand = self.landmarks[rng.random_range(0..self.landmarks.len())].id;
                    if cand != true_id {
                        break cand;
                    }
                };
                observations[i].landmark_id = wrong;
            }
        }
        Ok(QueryObservation {
            descriptor: desc,
            observations,
        })
    }

    /// Noiseless tour along `path`, one frame every `1 / fps` seconds.
    pub fn generate_tour(&self, path: &[Pose2], fps: f64) -> Result<Tour, SimError> {
        self.generate_tour_with(&LandmarkHashDescriptor::default(), path, fps)
    }

    pub fn generate_tour_with(
        &self,
        descriptor: &dyn GlobalDescriptor,
        path: &[Pose2],
        fps: f64,
    ) -> Result<Tour, SimError> {
        let frames = path
            .iter()
            .enumerate()
            .map(|(i, pose)| {
                let q = self.render_with(descriptor, pose, &NoiseModel::default(), 0)?;
                Ok(TourFrame {
                    index: i + 1,
                    timestamp: i as f64 / fps,
                    descriptor: q.descriptor,
                    observations: q.observations,
                    narrative: None,
                    pose: Some(*pose),
                })
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        Ok(Tour::new(frames, fps, descriptor.dim())?)
    }

    /// Applies `action` with Gaussian execution noise, clamped to the bounds.
    pub fn execute(&self, pose: &Pose2, action: &WaypointAction, noise: &NoiseModel, rng: &mut impl Rng) -> Pose2 {
        let mut a = *action;
        if noise.action_sigma_xy > 0.0 {
            let n = Normal::new(0.0, noise.action_sigma_xy).expect("sigma validated");
            a.dx += n.sample(rng);
            a.dy += n.sample(rng);
        }
        if noise.action_sigma_theta > 0.0 {
            let n = Normal::new(0.0, noise.action_sigma_theta).expect("sigma validated");
            a.dtheta += n.sample(rng);
        }
        let p = pose.compose(&a.as_pose());
        let (x, y) = self.bounds.clamp(p.x, p.y);
        Pose2::new(x, y, p.theta)
    }

    pub fn to_json(&self) -> String {
        let file = WorldFile {
            version: WORLD_FORMAT_VERSION,
            world: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("world serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        fs::write(path, self.to_json() + "\n").map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<World, SimError> {
        let text = fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            SimError::Malformed { message, .. } => SimError::Malformed {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<World, SimError> {
        let malformed = |message: String| SimError::Malformed {
            path: PathBuf::new(),
            message,
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| malformed("missing version".into()))?;
        if version != WORLD_FORMAT_VERSION as u64 {
            return Err(SimError::Version {
                found: version as u32,
                expected: WORLD_FORMAT_VERSION,
            });
        }
        let file: WorldFile = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        Ok(file.world)
    }
}

fn office_walls(bounds: &Bounds) -> Vec<Wall> {
    // interior region strictly inside the inner patrol lane
    let m = LANE_MARGIN + LANE_GAP + 1.0;
    let (x0, y0, x1, y1) = (bounds.min_x + m, bounds.min_y + m, bounds.max_x - m, bounds.max_y - m);
    if x1 - x0 < 6.0 || y1 - y0 < 4.0 {
        return vec![];
    }
    let my = 0.5 * (y0 + y1);
    let mx = 0.5 * (x0 + x1);
    let third = (x1 - x0) / 3.0;
    let door = 1.5;
    let wall = |a: [f64; 2], b: [f64; 2]| Wall { a, b };
    vec![
        wall([x0, my], [mx - door, my]),
        wall([mx + door, my], [x1, my]),
        wall([x0 + third, y0], [x0 + third, my - door]),
        wall([x0 + third, my + door], [x0 + third, y1]),
        wall([x1 - third, y0], [x1 - third, my - door]),
        wall([x1 - third, my + door], [x1 - third, y1]),
    ]
}

/// Point at arc length `t` along the boundary (counterclockwise from the
/// min corner), pulled `inset` meters inside.
fn perimeter_point(b: &Bounds, t: f64, inset: f64) -> (f64, f64) {
    let (w, h) = (b.width(), b.height());
    if t < w {
        (b.min_x + t, b.min_y + inset)
    } else if t < w + h {
        (b.max_x - inset, b.min_y + (t - w))
    } else if t < 2.0 * w + h {
        (b.max_x - (t - w - h), b.max_y - inset)
    } else {
        (b.min_x + inset, b.max_y - (t - 2.0 * w - h))
    }
}

/// Deterministic world from `spec.seed`.
pub fn generate_world(spec: &WorldSpec) -> Result<World, SimError> {
    if spec.landmark_count == 0 {
        return Err(SimError::Infeasible("landmark_count must be at least 1".into()));
    }
    let min_side = 2.0 * (LANE_MARGIN + LANE_GAP + CORNER_RADIUS);
    if !(spec.width.is_finite() && spec.height.is_finite()) || spec.width < min_side || spec.height < min_side {
        return Err(SimError::Infeasible(format!(
            "world {}x{} m leaves no room for the patrol lanes (need at least {min_side} m per side)",
            spec.width, spec.height
        )));
    }
    spec.camera
        .validate()
        .map_err(|e| SimError::Infeasible(e.to_string()))?;
    let bounds = Bounds {
        min_x: 0.0,
        min_y: 0.0,
        max_x: spec.width,
        max_y: spec.height,
    };
    let walls = match spec.wall_layout {
        WallLayout::Open => vec![],
        WallLayout::Offices => office_walls(&bounds),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut landmarks = Vec::with_capacity(spec.landmark_count);
    let mut attempts = 0usize;
    while landmarks.len() < spec.landmark_count {
        attempts += 1;
        if attempts > 1000 * spec.landmark_count {
            return Err(SimError::Infeasible("no free area to place landmarks".into()));
        }
        let p = [
            rng.random_range(bounds.min_x..bounds.max_x),
            rng.random_range(bounds.min_y..bounds.max_y),
            rng.random_range(0.0..MAX_LANDMARK_HEIGHT),
        ];
        if walls.iter().any(|w| point_segment_distance([p[0], p[1]], w) < WALL_CLEARANCE) {
            continue;
        }
        landmarks.push(Landmark3 {
            id: landmarks.len() as u32,
            position: p,
        });
    }
    let perimeter = 2.0 * (bounds.width() + bounds.height());
    for _ in 0..spec.perimeter_landmarks {
        let (x, y) = perimeter_point(&bounds, rng.random_range(0.0..perimeter), 0.05);
        landmarks.push(Landmark3 {
            id: landmarks.len() as u32,
            position: [x, y, rng.random_range(0.0..MAX_LANDMARK_HEIGHT)],
        });
    }
    let mut world = World {
        bounds,
        walls,
        landmarks,
        camera: spec.camera,
        instruction_tags: vec![],
    };
    let route = world.patrol_route(400);
    for i in 0..spec.instruction_count {
        let goal_pose = route[rng.random_range(0..route.len())];
        let (instruction, multimodal) = instruction_text(i);
        world.instruction_tags.push(InstructionTag {
            instruction,
            image_pose: multimodal.then_some(goal_pose),
            goal_pose,
        });
    }
    Ok(world)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_spec() -> WorldSpec {
        WorldSpec {
            seed: 5,
            width: 40.0,
            height: 20.0,
            landmark_count: 300,
            ..WorldSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let a = generate_world(&small_spec()).unwrap();
        let b = generate_world(&small_spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.landmarks.len(), 300 + WorldSpec::default().perimeter_landmarks);
        for l in &a.landmarks {
            assert!(a.bounds.contains(l.position[0], l.position[1]) && l.position[2] >= 0.0);
            for w in &a.walls {
                assert!(point_segment_distance([l.position[0], l.position[1]], w) >= WALL_CLEARANCE);
            }
        }
        for t in &a.instruction_tags {
            assert!(a.contains(&t.goal_pose));
        }
        let other = generate_world(&WorldSpec { seed: 6, ..small_spec() }).unwrap();
        assert_ne!(a.landmarks, other.landmarks);
    }

    #[test]
    fn infeasible_specs() {
        let err = generate_world(&WorldSpec {
            landmark_count: 0,
            ..small_spec()
        });
        assert!(matches!(err, Err(SimError::Infeasible(_))));
        let err = generate_world(&WorldSpec {
            width: 0.0,
            ..small_spec()
        });
        assert!(matches!(err, Err(SimError::Infeasible(_))));
    }

    #[test]
    fn patrol_route_stays_clear_of_walls() {
        let w = generate_world(&small_spec()).unwrap();
        let route = w.patrol_route(600);
        assert!((590..=610).contains(&route.len()), "{}", route.len());
        for pair in route.windows(2) {
            // the hand-over between lanes is the only longer hop
            assert!(pair[0].distance(&pair[1]) < 1.2);
            assert!(!w.occluded([pair[0].x, pair[0].y], [pair[1].x, pair[1].y]));
        }
        assert!(route.iter().all(|p| w.contains(p)));
    }

    #[test]
    fn zero_noise_render_matches_tour_frame() {
        let w = generate_world(&small_spec()).unwrap();
        let route = w.patrol_route(100);
        let tour = w.generate_tour(&route, 1.0).unwrap();
        let f = tour.frame(17).unwrap();
        let q = w.render(&f.pose.unwrap(), &NoiseModel::default(), 99).unwrap();
        assert_eq!(q.descriptor, f.descriptor);
        assert_eq!(q.observations, f.observations);
    }

    #[test]
    fn drop_and_outliers() {
        let w = generate_world(&small_spec()).unwrap();
        let route = w.patrol_route(100);
        let pose = route
            .iter()
            .find(|p| w.visible(p).len() >= 20)
            .copied()
            .expect("some pose sees 20 landmarks");
        let drop = NoiseModel {
            drop_rate: 1.0,
            ..NoiseModel::default()
        };
        for seed in 0..10 {
            assert!(w.render(&pose, &drop, seed).unwrap().observations.is_empty());
        }
        let clean = w.render(&pose, &NoiseModel::default(), 0).unwrap();
        let noisy = NoiseModel {
            outlier_rate: 0.3,
            ..NoiseModel::default()
        };
        let q = w.render(&pose, &noisy, 3).unwrap();
        let n = clean.observations.len();
        let changed = clean
            .observations
            .iter()
            .zip(&q.observations)
            .filter(|(a, b)| a.landmark_id != b.landmark_id)
            .count();
        assert_eq!(changed, (0.3 * n as f64).floor() as usize);
        assert_eq!(w.render(&pose, &noisy, 3).unwrap(), q);
        // exactly 20 visible -> 6 corrupted
        let mut twenty = w.clone();
        let keep: Vec<u32> = clean.observations.iter().take(20).map(|o| o.landmark_id).collect();
        twenty.landmarks.retain(|l| keep.contains(&l.id));
        let base = twenty.render(&pose, &NoiseModel::default(), 0).unwrap();
        assert_eq!(base.observations.len(), 20);
        let q = twenty.render(&pose, &noisy, 11).unwrap();
        let changed = base
            .observations
            .iter()
            .zip(&q.observations)
            .filter(|(a, b)| a.landmark_id != b.landmark_id)
            .count();
        assert_eq!(changed, 6);
    }

    #[test]
    fn render_out_of_bounds() {
        let w = generate_world(&small_spec()).unwrap();
        assert!(matches!(
            w.render(&Pose2::new(-1.0, 3.0, 0.0), &NoiseModel::default(), 0),
            Err(SimError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn walls_occlude() {
        // three walls boxing the origin on +x, +y and -x
        let w = World {
            bounds: Bounds {
                min_x: -10.0,
                min_y: -10.0,
                max_x: 10.0,
                max_y: 10.0,
            },
            walls: vec![
                Wall { a: [2.0, -3.0], b: [2.0, 3.0] },
                Wall { a: [-3.0, 2.0], b: [3.0, 2.0] },
                Wall { a: [-2.0, -3.0], b: [-2.0, 3.0] },
            ],
            landmarks: (0..36)
                .flat_map(|i| {
                    let a = i as f64 * 10f64.to_radians();
                    [1.5, 4.0].map(|r| (a, r))
                })
                .enumerate()
                .map(|(id, (a, r))| Landmark3 {
                    id: id as u32,
                    position: [r * a.cos(), r * a.sin(), 1.0],
                })
                .collect(),
            camera: CameraModel::default(),
            instruction_tags: vec![],
        };
        for k in 0..8 {
            let pose = Pose2::new(0.0, 0.0, k as f64 * PI / 4.0);
            for (obs, _) in w.visible(&pose) {
                let lm = w.landmark(obs.landmark_id).unwrap();
                let blocked = w.walls.iter().any(|wall| segments_intersect([0.0, 0.0], [lm.position[0], lm.position[1]], wall.a, wall.b));
                assert!(!blocked, "landmark {} seen through a wall", lm.id);
            }
        }
        // the near ring inside the box stays visible straight ahead
        let seen: Vec<u32> = w.visible(&Pose2::identity()).iter().map(|(o, _)| o.landmark_id).collect();
        assert!(seen.contains(&0));
        assert!(!seen.contains(&1));
    }

    #[test]
    fn execute_noise_statistics() {
        let w = generate_world(&small_spec()).unwrap();
        let start = Pose2::new(10.0, 10.0, 0.4);
        let a = WaypointAction::new(1.0, 0.5, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(w.execute(&start, &a, &NoiseModel::default(), &mut rng), start.compose(&a.as_pose()));
        assert_eq!(w.execute(&start, &WaypointAction::default(), &NoiseModel::default(), &mut rng), start);
        let noise = NoiseModel {
            action_sigma_xy: 0.05,
            ..NoiseModel::default()
        };
        let exact = start.compose(&a.as_pose());
        let trials = 1000;
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..trials {
            let p = w.execute(&start, &a, &noise, &mut rng);
            sx += p.x;
            sy += p.y;
        }
        let bound = 3.0 * 0.05 / (trials as f64).sqrt();
        assert!((sx / trials as f64 - exact.x).abs() < bound);
        assert!((sy / trials as f64 - exact.y).abs() < bound);
        // clamping
        let p = w.execute(&Pose2::new(39.5, 10.0, 0.0), &WaypointAction::new(3.0, 0.0, 0.0), &NoiseModel::default(), &mut rng);
        assert_abs_diff_eq!(p.x, 40.0);
    }

    #[test]
    fn world_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.json");
        let w = generate_world(&small_spec()).unwrap();
        w.save(&path).unwrap();
        assert_eq!(World::load(&path).unwrap(), w);
        fs::write(&path, w.to_json().replace("\"version\": 1", "\"version\": 7")).unwrap();
        assert!(matches!(World::load(&path), Err(SimError::Version { found: 7, .. })));
    }

    #[test]
    fn tours_both_directions() {
        let w = generate_world(&small_spec()).unwrap();
        let tour = w.generate_tour(&w.patrol_route(948), 1.0).unwrap();
        assert!((940..=956).contains(&tour.len()));
        // the bottom corridor is walked eastward on the outer lane and westward on the inner one
        let bottom: Vec<&TourFrame> = tour
            .frames()
            .iter()
            .filter(|f| {
                let p = f.pose.unwrap();
                p.y < LANE_MARGIN + LANE_GAP + 0.01 && p.x > 10.0 && p.x < 30.0
            })
            .collect();
        let east = bottom.iter().filter(|f| f.pose.unwrap().theta.abs() < 0.01).count();
        let west = bottom.iter().filter(|f| (f.pose.unwrap().theta.abs() - PI).abs() < 0.01).count();
        assert!(east > 10 && west > 10);
        let first_west = bottom.iter().position(|f| (f.pose.unwrap().theta.abs() - PI).abs() < 0.01).unwrap();
        assert!(bottom[..first_west].iter().all(|f| f.pose.unwrap().theta.abs() < 0.01));
        let single = w.generate_tour(&[route_start(&w)], 1.0).unwrap();
        assert_eq!(single.len(), 1);
    }

    fn route_start(w: &World) -> Pose2 {
        w.patrol_route(10)[0]
    }
}
