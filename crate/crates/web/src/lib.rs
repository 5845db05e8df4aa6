//! Browser bindings: build a world, navigate to an instruction, localize a
//! clicked pose. Every call returns a JSON string for the page to draw.

use serde::Serialize;
use tournav::geometry::Pose2;
use tournav::goalfinder::{find_goal, GoalDecision, GoalFinderConfig, Instruction, OracleClient};
use tournav::localization::{LocalizationMap, LocalizationResult, LocalizerConfig};
use tournav::policy::{EpisodeConfig, EpisodeRecord, Navigator};
use tournav::sim::{generate_world, Bounds, NoiseModel, Wall, World, WorldSpec};
use tournav::topograph::{build_graph, EdgeRule, TopoGraph};
use tournav::tour::Tour;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Scene<'a> {
    bounds: Bounds,
    walls: &'a [Wall],
    landmarks: Vec<[f64; 2]>,
    tour: Vec<Pose2>,
    edges: usize,
    instructions: Vec<&'a str>,
}

#[derive(Serialize)]
struct Navigation {
    decision: GoalDecision,
    goal_pose: Option<Pose2>,
    record: Option<EpisodeRecord>,
}

#[derive(Serialize)]
struct Localization {
    truth: Pose2,
    observed: usize,
    result: LocalizationResult,
    position_error: f64,
}

fn noise_level(level: f64) -> NoiseModel {
    let level = level.clamp(0.0, 1.0);
    NoiseModel {
        pixel_sigma: 2.0 * level,
        outlier_rate: 0.3 * level,
        action_sigma_xy: 0.1 * level,
        action_sigma_theta: 0.05 * level,
        drop_rate: 0.1 * level,
    }
}

/// A generated world with its tour, graph and localization map.
#[wasm_bindgen]
pub struct Demo {
    world: World,
    tour: Tour,
    graph: TopoGraph,
    map: LocalizationMap,
}

impl Demo {
    pub fn build(seed: u64, frames: usize) -> Result<Demo, String> {
        let world = generate_world(&WorldSpec { seed, ..WorldSpec::default() }).map_err(|e| e.to_string())?;
        let tour = world
            .generate_tour(&world.patrol_route(frames.max(2)), 1.0)
            .map_err(|e| e.to_string())?;
        let graph = build_graph(&tour, EdgeRule::default()).map_err(|e| e.to_string())?;
        let map = LocalizationMap::new(&tour, world.camera, &world.landmarks).map_err(|e| e.to_string())?;
        Ok(Demo { world, tour, graph, map })
    }

    pub fn scene_json(&self) -> String {
        let scene = Scene {
            bounds: self.world.bounds,
            walls: &self.world.walls,
            landmarks: self.world.landmarks.iter().map(|l| [l.position[0], l.position[1]]).collect(),
            tour: self.tour.frames().iter().filter_map(|f| f.pose).collect(),
            edges: self.graph.edge_count(),
            instructions: self.world.instruction_tags.iter().map(|t| t.instruction.as_str()).collect(),
        };
        serde_json::to_string(&scene).expect("scene serializes")
    }

    pub fn navigate_json(&self, instruction: &str, start: Pose2, noise: f64, seed: u64) -> Result<String, String> {
        if !self.world.contains(&start) {
            return Err("start lies outside the world".into());
        }
        let client = OracleClient::new(&self.world, &self.tour);
        let decision = find_goal(&client, &self.tour, &Instruction::text(instruction), &GoalFinderConfig::default())
            .map_err(|e| e.to_string())?;
        let mut out = Navigation {
            decision,
            goal_pose: None,
            record: None,
        };
        if let Some(goal) = out.decision.goal_index {
            out.goal_pose = self.tour.frame(goal).and_then(|f| f.pose);
            let nav = Navigator {
                world: &self.world,
                graph: &self.graph,
                map: &self.map,
            };
            let record = nav
                .run_episode(instruction, start, goal, &noise_level(noise), &EpisodeConfig::default(), seed)
                .map_err(|e| e.to_string())?;
            out.record = Some(record);
        }
        Ok(serde_json::to_string(&out).expect("navigation serializes"))
    }

    pub fn localize_json(&self, truth: Pose2, noise: f64, seed: u64) -> Result<String, String> {
        if !self.world.contains(&truth) {
            return Err("pose lies outside the world".into());
        }
        let query = self.world.render(&truth, &noise_level(noise), seed).map_err(|e| e.to_string())?;
        let result = self.map.localize(&query, Pose2::identity(), &LocalizerConfig::default());
        let out = Localization {
            truth,
            observed: query.observations.len(),
            position_error: result.pose.distance(&truth),
            result,
        };
        Ok(serde_json::to_string(&out).expect("localization serializes"))
    }
}

#[wasm_bindgen]
impl Demo {
    /// Generates the default office world and a patrol tour of `frames` frames.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, frames: u32) -> Result<Demo, JsError> {
        Demo::build(seed.into(), frames as usize).map_err(|e| JsError::new(&e))
    }

    /// Walls, landmarks, tour poses and the instruction list.
    pub fn scene(&self) -> String {
        self.scene_json()
    }

    /// Finds the goal frame for `instruction` and drives there from the start
    /// pose. `noise` in [0, 1] scales every noise source together.
    pub fn navigate(&self, instruction: &str, x: f64, y: f64, theta: f64, noise: f64, seed: u32) -> Result<String, JsError> {
        self.navigate_json(instruction, Pose2::new(x, y, theta), noise, seed.into())
            .map_err(|e| JsError::new(&e))
    }

    /// Renders a view at the given pose and localizes it against the tour.
    pub fn localize(&self, x: f64, y: f64, theta: f64, noise: f64, seed: u32) -> Result<String, JsError> {
        self.localize_json(Pose2::new(x, y, theta), noise, seed.into())
            .map_err(|e| JsError::new(&e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> Demo {
        Demo::build(3, 400).unwrap()
    }

    #[test]
    fn scene_lists_everything() {
        let d = demo();
        let v: serde_json::Value = serde_json::from_str(&d.scene_json()).unwrap();
        assert_eq!(v["tour"].as_array().unwrap().len(), 400);
        assert_eq!(v["landmarks"].as_array().unwrap().len(), d.world.landmarks.len());
        assert_eq!(v["instructions"].as_array().unwrap().len(), 20);
    }

    #[test]
    fn navigate_reaches_tagged_goal() {
        let d = demo();
        let instr = d.world.instruction_tags[0].instruction.clone();
        let start = d.tour.frame(1).unwrap().pose.unwrap();
        let v: serde_json::Value = serde_json::from_str(&d.navigate_json(&instr, start, 0.0, 1).unwrap()).unwrap();
        assert_eq!(v["record"]["success"], true);
        assert!(v["record"]["trajectory"].as_array().unwrap().len() > 1);
    }

    #[test]
    fn unknown_instruction_has_no_episode() {
        let d = demo();
        let start = d.tour.frame(1).unwrap().pose.unwrap();
        let v: serde_json::Value = serde_json::from_str(&d.navigate_json("fly to the moon", start, 0.0, 1).unwrap()).unwrap();
        assert!(v["decision"]["goal_index"].is_null());
        assert!(v["record"].is_null());
    }

    #[test]
    fn localize_near_tour() {
        let d = demo();
        let truth = d.tour.frame(50).unwrap().pose.unwrap();
        let v: serde_json::Value = serde_json::from_str(&d.localize_json(truth, 0.0, 0).unwrap()).unwrap();
        assert!(v["position_error"].as_f64().unwrap() < 1e-6);
        assert!(d.localize_json(Pose2::new(-50.0, 0.0, 0.0), 0.0, 0).is_err());
    }
}
