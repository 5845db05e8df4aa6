#![allow(dead_code)]

use tournav::localization::LocalizationMap;
use tournav::sim::{generate_world, World, WorldSpec};
use tournav::topograph::{build_graph, EdgeRule, TopoGraph};
use tournav::tour::Tour;

pub struct Fixture {
    pub world: World,
    pub tour: Tour,
    pub graph: TopoGraph,
    pub map: LocalizationMap,
}

/// Default office world with a patrol tour of about `frames` frames.
pub fn fixture(seed: u64, frames: usize) -> Fixture {
    let world = generate_world(&WorldSpec { seed, ..WorldSpec::default() }).unwrap();
    let tour = world.generate_tour(&world.patrol_route(frames), 1.0).unwrap();
    let graph = build_graph(&tour, EdgeRule::default()).unwrap();
    let map = LocalizationMap::new(&tour, world.camera, &world.landmarks).unwrap();
    Fixture { world, tour, graph, map }
}
