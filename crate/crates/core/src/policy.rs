//! Low-level goal reaching: localize, stop at the goal vertex, otherwise plan
//! on the graph and step toward the next vertex of the shortest path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use web_time::Instant;

pub use crate::geometry::WaypointAction;
use crate::geometry::{relative_in_frame, Pose2};
use crate::localization::{LocalizationMap, LocalizationResult, LocalizerConfig, QueryObservation};
use crate::sim::{NoiseModel, SimError, World};
use crate::topograph::TopoGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    MaxSteps,
    NoPath,
    /// The loop stopped at the goal vertex but the robot was not near it.
    OutsideGoalRadius,
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FailureReason::MaxSteps => "max_steps",
            FailureReason::NoPath => "no_path",
            FailureReason::OutsideGoalRadius => "outside_goal_radius",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyStatus {
    Running,
    Reached,
    Failed(FailureReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    /// Goal frame index.
    pub goal_index: usize,
    pub last_pose: Pose2,
    pub step: usize,
    pub max_steps: usize,
    pub status: PolicyStatus,
}

impl PolicyState {
    pub fn new(goal_index: usize, initial_pose: Pose2, max_steps: usize) -> Self {
        Self {
            goal_index,
            last_pose: initial_pose,
            step: 0,
            max_steps,
            status: PolicyStatus::Running,
        }
    }
}

/// Default step budget for a start that is `hops` edges from the goal.
pub fn default_max_steps(hops: usize) -> usize {
    4 * hops + 20
}

/// One iteration given an already computed localization.
///
/// Panics if the state is not running or the goal is not a graph vertex.
pub fn step_localized(state: &PolicyState, graph: &TopoGraph, loc: &LocalizationResult) -> (PolicyState, Option<WaypointAction>) {
    assert_eq!(state.status, PolicyStatus::Running, "step called on a finished policy");
    let goal = graph
        .id_of(state.goal_index)
        .unwrap_or_else(|| panic!("goal frame {} is not a graph vertex", state.goal_index));
    let mut next = PolicyState {
        last_pose: loc.pose,
        ..*state
    };
    let start = graph
        .id_of(loc.nearest_vertex)
        .unwrap_or_else(|| panic!("localized vertex {} is not in the graph", loc.nearest_vertex));
    if start == goal {
        next.status = PolicyStatus::Reached;
        return (next, None);
    }
    if state.step >= state.max_steps {
        next.status = PolicyStatus::Failed(FailureReason::MaxSteps);
        return (next, None);
    }
    let path = match graph.shortest_path(start, goal) {
        Ok(p) => p,
        Err(_) => {
            next.status = PolicyStatus::Failed(FailureReason::NoPath);
            return (next, None);
        }
    };
    let successor = graph.vertex(path[1]).pose;
    let action = relative_in_frame(&loc.pose, &successor).scaled(graph.scale());
    next.step += 1;
    (next, Some(action))
}

/// Localizes `q` (falling back to the state's last pose) and takes one step.
pub fn step(
    state: &PolicyState,
    graph: &TopoGraph,
    map: &LocalizationMap,
    cfg: &LocalizerConfig,
    q: &QueryObservation,
) -> (PolicyState, Option<WaypointAction>, LocalizationResult) {
    let loc = map.localize(q, state.last_pose, cfg);
    let (next, action) = step_localized(state, graph, &loc);
    (next, action, loc)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// Overrides [`default_max_steps`].
    pub max_steps: Option<usize>,
    /// Final true pose must be this close to the goal vertex to count.
    pub success_radius: f64,
    /// Replace visual localization with simulator ground truth.
    pub oracle_localization: bool,
    pub localizer: LocalizerConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: None,
            success_radius: 1.0,
            oracle_localization: false,
            localizer: LocalizerConfig::default(),
        }
    }
}

/// Outcome of one navigation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub instruction: String,
    pub goal_index: usize,
    pub start: Pose2,
    pub success: bool,
    pub executed_length: f64,
    pub shortest_length: f64,
    pub steps: usize,
    pub per_step_latency: Vec<f64>,
    pub failure_reason: Option<FailureReason>,
    /// True poses, starting with `start`, one more per executed action.
    pub trajectory: Vec<Pose2>,
    /// Localized poses, one per policy iteration.
    pub estimates: Vec<Pose2>,
    pub fallbacks: usize,
}

impl EpisodeRecord {
    pub fn mean_latency(&self) -> Option<f64> {
        (!self.per_step_latency.is_empty())
            .then(|| self.per_step_latency.iter().sum::<f64>() / self.per_step_latency.len() as f64)
    }
}

/// Static inputs shared by every episode in a run.
#[derive(Clone, Copy)]
pub struct Navigator<'a> {
    pub world: &'a World,
    pub graph: &'a TopoGraph,
    pub map: &'a LocalizationMap,
}

impl Navigator<'_> {
    fn oracle_localize(&self, pose: &Pose2) -> LocalizationResult {
        let id = self.graph.nearest_vertex(pose.x, pose.y).expect("graph has vertices");
        LocalizationResult {
            pose: *pose,
            nearest_vertex: self.graph.vertex(id).frame_index,
            inliers: 0,
            candidate: None,
            fallback: false,
        }
    }

    /// Runs the closed loop from `start` toward frame `goal_index` in the
    /// simulator: render, localize, plan, execute, until the policy stops.
    pub fn run_episode(
        &self,
        instruction: &str,
        start: Pose2,
        goal_index: usize,
        noise: &NoiseModel,
        cfg: &EpisodeConfig,
        seed: u64,
    ) -> Result<EpisodeRecord, SimError> {
        let graph = self.graph;
        let goal = graph.id_of(goal_index).ok_or_else(|| SimError::Infeasible(format!("goal frame {goal_index} is not a graph vertex")))?;
        let start_vertex = graph.nearest_vertex(start.x, start.y).expect("graph has vertices");
        let (shortest_length, hops) = match graph.shortest_path(start_vertex, goal) {
            Ok(path) => (graph.path_cost(&path).unwrap_or(0.0), path.len() - 1),
            // unreachable goals record zero; the episode can only fail
            Err(_) => (0.0, 0),
        };
        let max_steps = cfg.max_steps.unwrap_or_else(|| default_max_steps(hops));
        let mut state = PolicyState::new(goal_index, start, max_steps);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pose = start;
        let mut record = EpisodeRecord {
            instruction: instruction.to_string(),
            goal_index,
            start,
            success: false,
            executed_length: 0.0,
            shortest_length,
            steps: 0,
            per_step_latency: vec![],
            failure_reason: None,
            trajectory: vec![start],
            estimates: vec![],
            fallbacks: 0,
        };
        let mut frame = 0u64;
        while state.status == PolicyStatus::Running {
            let q = self.world.render(&pose, noise, seed.wrapping_mul(1_000_003).wrapping_add(frame))?;
            frame += 1;
            let t0 = Instant::now();
            let loc = if cfg.oracle_localization {
                self.oracle_localize(&pose)
            } else {
                self.map.localize(&q, state.last_pose, &cfg.localizer)
            };
            let (next, action) = step_localized(&state, graph, &loc);
            record.per_step_latency.push(t0.elapsed().as_secs_f64());
            record.estimates.push(loc.pose);
            record.fallbacks += loc.fallback as usize;
            state = next;
            if let Some(a) = action {
                let landed = self.world.execute(&pose, &a, noise, &mut rng);
                record.executed_length += pose.distance(&landed);
                pose = landed;
                record.trajectory.push(pose);
            }
        }
        record.steps = state.step;
        match state.status {
            PolicyStatus::Reached => {
                let goal_pose = graph.vertex(goal).pose;
                if pose.distance(&goal_pose) <= cfg.success_radius {
                    record.success = true;
                } else {
                    record.failure_reason = Some(FailureReason::OutsideGoalRadius);
                }
            }
            PolicyStatus::Failed(reason) => record.failure_reason = Some(reason),
            PolicyStatus::Running => unreachable!(),
        }
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topograph::{build_graph_with, EdgeRule};
    use approx::assert_abs_diff_eq;

    fn loc_at(frame: usize, pose: Pose2) -> LocalizationResult {
        LocalizationResult {
            pose,
            nearest_vertex: frame,
            inliers: 10,
            candidate: Some(frame),
            fallback: false,
        }
    }

    fn chain(n: usize) -> TopoGraph {
        let poses: Vec<(usize, Pose2)> = (1..=n).map(|i| (i, Pose2::new((i - 1) as f64, 0.0, 0.0))).collect();
        build_graph_with(&poses, EdgeRule { max_edge_dist: 1.0, ..EdgeRule::default() }, 1.0)
    }

    #[test]
    fn reached_at_goal() {
        let g = chain(3);
        let s = PolicyState::new(3, Pose2::identity(), 10);
        let (next, action) = step_localized(&s, &g, &loc_at(3, Pose2::new(2.0, 0.0, 0.0)));
        assert_eq!(next.status, PolicyStatus::Reached);
        assert!(action.is_none());
        assert_eq!(next.step, 0);
    }

    #[test]
    fn action_toward_successor() {
        let g = chain(3);
        let s = PolicyState::new(3, Pose2::identity(), 10);
        let (next, action) = step_localized(&s, &g, &loc_at(1, Pose2::identity()));
        assert_eq!(action, Some(WaypointAction::new(1.0, 0.0, 0.0)));
        assert_eq!((next.step, next.status), (1, PolicyStatus::Running));

        let scaled = chain(3).with_scale(2.5);
        let (_, action) = step_localized(&s, &scaled, &loc_at(1, Pose2::identity()));
        assert_abs_diff_eq!(action.unwrap().dx, 2.5);
    }

    #[test]
    fn budget_exhaustion() {
        let g = chain(4);
        let mut s = PolicyState::new(4, Pose2::identity(), 1);
        let (next, action) = step_localized(&s, &g, &loc_at(1, Pose2::identity()));
        assert!(action.is_some());
        s = next;
        let (next, action) = step_localized(&s, &g, &loc_at(2, Pose2::new(1.0, 0.0, 0.0)));
        assert!(action.is_none());
        assert_eq!(next.status, PolicyStatus::Failed(FailureReason::MaxSteps));
        assert_eq!(next.step, 1);
    }

    #[test]
    fn unreachable_goal() {
        let g = chain(3);
        let s = PolicyState::new(1, Pose2::identity(), 10);
        let (next, action) = step_localized(&s, &g, &loc_at(3, Pose2::new(2.0, 0.0, 0.0)));
        assert!(action.is_none());
        assert_eq!(next.status, PolicyStatus::Failed(FailureReason::NoPath));
    }

    #[test]
    fn action_lands_on_successor() {
        let vertices = [
            (1, Pose2::new(0.0, 0.0, 0.3)),
            (2, Pose2::new(1.2, 0.5, 0.9)),
            (3, Pose2::new(1.8, 1.7, 1.6)),
        ];
        let g = build_graph_with(&vertices, EdgeRule::default(), 1.0);
        let localized = Pose2::new(0.1, -0.2, 0.5);
        let s = PolicyState::new(3, localized, 10);
        let (_, action) = step_localized(&s, &g, &loc_at(1, localized));
        let landed = localized.compose(&action.unwrap().as_pose());
        let target = g.vertex(g.shortest_path(0, 2).unwrap()[1]).pose;
        assert!(landed.distance(&target) < 1e-12);
    }
}
