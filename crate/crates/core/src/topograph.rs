//! Directed topological graph over posed tour frames, with Dijkstra queries.
//!
//! Vertex `i` (0-based id) holds one tour frame; vertices are kept sorted by
//! frame index, so comparing ids is the same as comparing frame indices.
//! An edge `s -> t` exists when `t` lies within `max_edge_dist` of `s` and
//! strictly inside the half-angle cone around `s`'s heading.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;
use crate::tour::Tour;

pub const GRAPH_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MAX_EDGE_DIST: f64 = 2.0;
pub const DEFAULT_FRONT_HALF_ANGLE: f64 = FRAC_PI_2;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("tour frame {0} has no pose")]
    MissingPose(usize),
    #[error("no path from frame {start} to frame {goal} ({reachable} vertices reachable)")]
    NoPath {
        start: usize,
        goal: usize,
        reachable: usize,
    },
    #[error("unknown vertex {0}")]
    UnknownVertex(usize),
    #[error("unsupported graph format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed graph file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub frame_index: usize,
    pub pose: Pose2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub to: usize,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopoGraph {
    vertices: Vec<Vertex>,
    adjacency: Vec<Vec<Edge>>,
    scale: f64,
    by_frame: HashMap<usize, usize>,
}

/// Rule used to decide whether `target` is reachable directly from `source`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeRule {
    pub max_edge_dist: f64,
    pub front_half_angle: f64,
}

impl Default for EdgeRule {
    fn default() -> Self {
        Self {
            max_edge_dist: DEFAULT_MAX_EDGE_DIST,
            front_half_angle: DEFAULT_FRONT_HALF_ANGLE,
        }
    }
}

/// Angle between `from`'s heading and the displacement `from -> to`.
/// Zero for coincident positions.
pub fn bearing(from: &Pose2, to: &Pose2) -> f64 {
    let (fwd, left) = from.to_local(to.x, to.y);
    if fwd == 0.0 && left == 0.0 {
        0.0
    } else {
        left.atan2(fwd).abs()
    }
}

impl EdgeRule {
    pub fn admits(&self, from: &Pose2, to: &Pose2) -> bool {
        from.distance(to) <= self.max_edge_dist && bearing(from, to) < self.front_half_angle
    }
}

impl TopoGraph {
    /// Assembles a graph from parts. Vertices are sorted by frame index;
    /// edges refer to frame indices.
    pub fn from_parts(
        mut vertices: Vec<Vertex>,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        scale: f64,
    ) -> Result<Self, GraphError> {
        vertices.sort_by_key(|v| v.frame_index);
        let mut by_frame = HashMap::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            if by_frame.insert(v.frame_index, i).is_some() {
                return Err(GraphError::Malformed {
                    path: PathBuf::new(),
                    message: format!("duplicate frame index {}", v.frame_index),
                });
            }
        }
        let mut adjacency = vec![Vec::new(); vertices.len()];
        for (from, to, cost) in edges {
            let s = *by_frame.get(&from).ok_or(GraphError::UnknownVertex(from))?;
            let t = *by_frame.get(&to).ok_or(GraphError::UnknownVertex(to))?;
            adjacency[s].push(Edge { to: t, cost });
        }
        for list in &mut adjacency {
            list.sort_by_key(|e| e.to);
        }
        Ok(Self {
            vertices,
            adjacency,
            scale,
            by_frame,
        })
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, id: usize) -> &Vertex {
        &self.vertices[id]
    }

    pub fn edges_from(&self, id: usize) -> &[Edge] {
        &self.adjacency[id]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        let ratio = scale / self.scale;
        for list in &mut self.adjacency {
            for e in list {
                e.cost *= ratio;
            }
        }
        self.scale = scale;
        self
    }

    /// Vertex id for a tour frame index.
    pub fn id_of(&self, frame_index: usize) -> Option<usize> {
        self.by_frame.get(&frame_index).copied()
    }

    pub fn edge_cost(&self, from: usize, to: usize) -> Option<f64> {
        self.adjacency[from].iter().find(|e| e.to == to).map(|e| e.cost)
    }

    /// Vertex closest to `(x, y)`; ties go to the smaller frame index.
    pub fn nearest_vertex(&self, x: f64, y: f64) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, v) in self.vertices.iter().enumerate() {
            let d = (v.pose.x - x).powi(2) + (v.pose.y - y).powi(2);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        best.map(|(_, i)| i)
    }

    pub fn path_cost(&self, path: &[usize]) -> Option<f64> {
        path.windows(2)
            .map(|w| self.edge_cost(w[0], w[1]))
            .sum::<Option<f64>>()
    }

    fn reachable_from(&self, start: usize) -> usize {
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for e in &self.adjacency[v] {
                if !seen[e.to] {
                    seen[e.to] = true;
                    count += 1;
                    queue.push_back(e.to);
                }
            }
        }
        count
    }

    /// Cost and hop count from every vertex to `goal` (reverse Dijkstra).
    pub fn distances_to(&self, goal: usize) -> Vec<Option<(f64, usize)>> {
        let mut reverse: Vec<Vec<Edge>> = vec![Vec::new(); self.len()];
        for (s, list) in self.adjacency.iter().enumerate() {
            for e in list {
                reverse[e.to].push(Edge { to: s, cost: e.cost });
            }
        }
        let mut best: Vec<Option<(f64, usize)>> = vec![None; self.len()];
        let mut heap = BinaryHeap::new();
        best[goal] = Some((0.0, 0));
        heap.push(QueueEntry {
            cost: 0.0,
            hops: 0,
            vertex: goal,
        });
        while let Some(QueueEntry { cost, hops, vertex }) = heap.pop() {
            if best[vertex].is_some_and(|b| (cost, hops) > b) {
                continue;
            }
            for e in &reverse[vertex] {
                let cand = (cost + e.cost, hops + 1);
                let better = match best[e.to] {
                    None => true,
                    Some(b) => cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1),
                };
                if better {
                    best[e.to] = Some(cand);
                    heap.push(QueueEntry {
                        cost: cand.0,
                        hops: cand.1,
                        vertex: e.to,
                    });
                }
            }
        }
        best
    }

    /// Minimum-cost path `[start, ..., goal]` (vertex ids). Ties prefer fewer
    /// hops, then the successor with the smaller frame index.
    pub fn shortest_path(&self, start: usize, goal: usize) -> Result<Vec<usize>, GraphError> {
        for v in [start, goal] {
            if v >= self.len() {
                return Err(GraphError::UnknownVertex(v));
            }
        }
        let dist = self.distances_to(goal);
        if dist[start].is_none() {
            return Err(GraphError::NoPath {
                start: self.vertices[start].frame_index,
                goal: self.vertices[goal].frame_index,
                reachable: self.reachable_from(start),
            });
        }
        let mut path = vec![start];
        let mut current = start;
        while current != goal {
            let mut choice: Option<(f64, usize, usize)> = None;
            for e in &self.adjacency[current] {
                let Some((d, h)) = dist[e.to] else { continue };
                let key = (e.cost + d, h + 1, e.to);
                let better = match choice {
                    None => true,
                    Some(c) => key.0 < c.0 || (key.0 == c.0 && (key.1, key.2) < (c.1, c.2)),
                };
                if better {
                    choice = Some(key);
                }
            }
            // dist[current] is finite, so some successor is on a path to goal
            let (_, _, next) = choice.expect("finite distance implies a successor");
            path.push(next);
            current = next;
            if path.len() > self.len() {
                unreachable!("shortest path longer than vertex count");
            }
        }
        Ok(path)
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            version: GRAPH_FORMAT_VERSION,
            scale: self.scale,
            vertices: self
                .vertices
                .iter()
                .map(|v| GraphFileVertex {
                    frame_index: v.frame_index,
                    x: v.pose.x,
                    y: v.pose.y,
                    theta: v.pose.theta,
                })
                .collect(),
            edges: self
                .adjacency
                .iter()
                .enumerate()
                .flat_map(|(s, list)| {
                    list.iter().map(move |e| GraphFileEdge {
                        from: self.vertices[s].frame_index,
                        to: self.vertices[e.to].frame_index,
                        cost: e.cost,
                    })
                })
                .collect(),
        }
    }

    pub fn from_file(file: GraphFile) -> Result<Self, GraphError> {
        if file.version != GRAPH_FORMAT_VERSION {
            return Err(GraphError::Version {
                found: file.version,
                expected: GRAPH_FORMAT_VERSION,
            });
        }
        let vertices = file
            .vertices
            .iter()
            .map(|v| Vertex {
                frame_index: v.frame_index,
                pose: Pose2 {
                    x: v.x,
                    y: v.y,
                    theta: v.theta,
                },
            })
            .collect();
        Self::from_parts(
            vertices,
            file.edges.iter().map(|e| (e.from, e.to, e.cost)),
            file.scale,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("graph serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        fs::write(path, self.to_json() + "\n").map_err(|source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| GraphError::Malformed {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let version = value.get("version").and_then(|v| v.as_u64());
        match version {
            Some(v) if v == GRAPH_FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(GraphError::Version {
                    found: v as u32,
                    expected: GRAPH_FORMAT_VERSION,
                })
            }
            None => {
                return Err(GraphError::Malformed {
                    path: path.to_path_buf(),
                    message: "missing version".into(),
                })
            }
        }
        let file: GraphFile = serde_json::from_value(value).map_err(|e| GraphError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_file(file).map_err(|e| match e {
            GraphError::Malformed { message, .. } => GraphError::Malformed {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub version: u32,
    pub scale: f64,
    pub vertices: Vec<GraphFileVertex>,
    pub edges: Vec<GraphFileEdge>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFileVertex {
    pub frame_index: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFileEdge {
    pub from: usize,
    pub to: usize,
    pub cost: f64,
}

#[derive(Clone, Copy, Debug)]
struct QueueEntry {
    cost: f64,
    hops: usize,
    vertex: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueEntry {
    // min-heap on (cost, hops, vertex)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.hops.cmp(&self.hops))
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

/// Builds one vertex per frame and every edge admitted by `rule`.
pub fn build_graph_with(poses: &[(usize, Pose2)], rule: EdgeRule, scale: f64) -> TopoGraph {
    let vertices: Vec<Vertex> = poses
        .iter()
        .map(|&(frame_index, pose)| Vertex { frame_index, pose })
        .collect();
    let mut edges = Vec::new();
    for s in &vertices {
        for t in &vertices {
            if s.frame_index != t.frame_index && rule.admits(&s.pose, &t.pose) {
                edges.push((s.frame_index, t.frame_index, s.pose.distance(&t.pose) * scale));
            }
        }
    }
    TopoGraph::from_parts(vertices, edges, scale).expect("frame indices are unique")
}

pub fn build_graph(tour: &Tour, rule: EdgeRule) -> Result<TopoGraph, GraphError> {
    let poses = tour
        .frames()
        .iter()
        .map(|f| f.pose.map(|p| (f.index, p)).ok_or(GraphError::MissingPose(f.index)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(build_graph_with(&poses, rule, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tour::{Tour, TourFrame};

    fn pair(t: Pose2) -> TopoGraph {
        build_graph_with(&[(1, Pose2::identity()), (2, t)], EdgeRule::default(), 1.0)
    }

    #[test]
    fn edge_rule_examples() {
        let g = pair(Pose2::new(1.0, 0.0, 2.0));
        assert_eq!(g.edge_cost(0, 1), Some(1.0));
        assert!(pair(Pose2::new(-1.0, 0.0, 0.0)).edge_cost(0, 1).is_none());
        assert!(pair(Pose2::new(1.5, 1.6, 0.0)).edge_cost(0, 1).is_none());
        // exactly 2 m is allowed, exactly 90 degrees is not
        assert!(pair(Pose2::new(2.0, 0.0, 0.0)).edge_cost(0, 1).is_some());
        assert!(pair(Pose2::new(0.0, 1.0, 0.0)).edge_cost(0, 1).is_none());
        // standstill frames connect both ways
        let g = pair(Pose2::new(0.0, 0.0, 1.0));
        assert!(g.edge_cost(0, 1).is_some() && g.edge_cost(1, 0).is_some());
    }

    fn diamond() -> TopoGraph {
        let v = |i| Vertex {
            frame_index: i,
            pose: Pose2::identity(),
        };
        TopoGraph::from_parts(
            vec![v(1), v(2), v(3), v(4)],
            [(1, 2, 1.0), (1, 3, 1.0), (2, 4, 1.0), (3, 4, 2.0)],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn diamond_path() {
        let g = diamond();
        assert_eq!(g.shortest_path(0, 3).unwrap(), vec![0, 1, 3]);
        assert_eq!(g.shortest_path(2, 2).unwrap(), vec![2]);
        match g.shortest_path(3, 0) {
            Err(GraphError::NoPath { reachable, .. }) => assert_eq!(reachable, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tie_breaks() {
        let v = |i| Vertex {
            frame_index: i,
            pose: Pose2::identity(),
        };
        // 1->4 direct costs 2, 1->2->4 and 1->3->4 cost 2 as well: fewest hops wins
        let g = TopoGraph::from_parts(
            vec![v(1), v(2), v(3), v(4)],
            [(1, 3, 1.0), (1, 2, 1.0), (2, 4, 1.0), (3, 4, 1.0), (1, 4, 2.0)],
            1.0,
        )
        .unwrap();
        assert_eq!(g.shortest_path(0, 3).unwrap(), vec![0, 3]);
        let g = TopoGraph::from_parts(
            vec![v(1), v(2), v(3), v(4)],
            [(1, 3, 1.0), (1, 2, 1.0), (2, 4, 1.0), (3, 4, 1.0)],
            1.0,
        )
        .unwrap();
        assert_eq!(g.shortest_path(0, 3).unwrap(), vec![0, 1, 3]);
    }

    #[test]
    fn chain_reachability() {
        let frames: Vec<TourFrame> = (1..=10)
            .map(|i| TourFrame {
                index: i,
                timestamp: i as f64,
                descriptor: vec![1.0],
                observations: vec![],
                narrative: None,
                pose: Some(Pose2::new(0.8 * i as f64, 0.1 * (i % 2) as f64, 0.0)),
            })
            .collect();
        let tour = Tour::new(frames, 1.0, 1).unwrap();
        let g = build_graph(&tour, EdgeRule::default()).unwrap();
        for a in 0..10 {
            for b in 0..10 {
                let r = g.shortest_path(a, b);
                if a <= b {
                    let p = r.unwrap();
                    assert_eq!((p[0], *p.last().unwrap()), (a, b));
                } else {
                    assert!(r.is_err());
                }
            }
        }
    }

    #[test]
    fn missing_pose_is_reported() {
        let mut frames = crate::tour::tests::synthetic_frames(3, 2);
        frames[1].pose = None;
        let tour = Tour::new(frames, 1.0, 2).unwrap();
        assert!(matches!(build_graph(&tour, EdgeRule::default()), Err(GraphError::MissingPose(2))));
    }

    #[test]
    fn single_vertex() {
        let g = build_graph_with(&[(1, Pose2::identity())], EdgeRule::default(), 1.0);
        assert_eq!((g.len(), g.edge_count()), (1, 0));
    }

    #[test]
    fn scale_multiplies_costs() {
        let g = pair(Pose2::new(1.5, 0.0, 0.0)).with_scale(2.0);
        assert_eq!(g.edge_cost(0, 1), Some(3.0));
        assert_eq!(g.scale(), 2.0);
    }

    #[test]
    fn file_round_trip_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.json");
        let g = diamond();
        g.save(&path).unwrap();
        assert_eq!(TopoGraph::load(&path).unwrap(), g);

        let empty = TopoGraph::from_parts(vec![], [], 1.0).unwrap();
        empty.save(&path).unwrap();
        assert!(TopoGraph::load(&path).unwrap().is_empty());

        fs::write(&path, r#"{"version":0,"scale":1.0,"vertices":[],"edges":[]}"#).unwrap();
        assert!(matches!(TopoGraph::load(&path), Err(GraphError::Version { found: 0, .. })));
        fs::write(&path, "{not json").unwrap();
        assert!(matches!(TopoGraph::load(&path), Err(GraphError::Malformed { .. })));
    }
}
