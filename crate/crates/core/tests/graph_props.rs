use proptest::prelude::*;
use tournav::geometry::Pose2;
use tournav::topograph::{build_graph_with, EdgeRule, TopoGraph, Vertex};

/// All simple paths from `at` to `goal`; returns the cheapest (cost, hops).
fn brute_force(adj: &[Vec<(usize, f64)>], at: usize, goal: usize, seen: &mut [bool]) -> Option<(f64, usize)> {
    if at == goal {
        return Some((0.0, 0));
    }
    seen[at] = true;
    let mut best: Option<(f64, usize)> = None;
    for &(to, w) in &adj[at] {
        if !seen[to] {
            if let Some((c, h)) = brute_force(adj, to, goal, seen) {
                let cand = (c + w, h + 1);
                if best.is_none_or(|b| cand.0 < b.0 - 1e-12 || ((cand.0 - b.0).abs() <= 1e-12 && cand.1 < b.1)) {
                    best = Some(cand);
                }
            }
        }
    }
    seen[at] = false;
    best
}

fn pose() -> impl Strategy<Value = Pose2> {
    (-3.0f64..3.0, -3.0f64..3.0, -3.2f64..3.2).prop_map(|(x, y, t)| Pose2::new(x, y, t))
}

fn random_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
    (1usize..=8).prop_flat_map(|n| {
        let edge = (1..=n, 1..=n, 1u8..=4).prop_map(|(a, b, w)| (a, b, w as f64));
        (Just(n), prop::collection::vec(edge, 0..=n * 3))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dijkstra_matches_enumeration((n, raw) in random_graph()) {
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        for (a, b, w) in raw {
            if a != b && !edges.iter().any(|e| e.0 == a && e.1 == b) {
                edges.push((a, b, w));
            }
        }
        let vertices = (1..=n).map(|i| Vertex { frame_index: i, pose: Pose2::new(i as f64, 0.0, 0.0) }).collect();
        let g = TopoGraph::from_parts(vertices, edges.clone(), 1.0).unwrap();
        let mut adj = vec![Vec::new(); n];
        for (a, b, w) in &edges {
            adj[a - 1].push((b - 1, *w));
        }
        for s in 0..n {
            for t in 0..n {
                let expected = brute_force(&adj, s, t, &mut vec![false; n]);
                match (g.shortest_path(s, t), expected) {
                    (Ok(path), Some((cost, hops))) => {
                        prop_assert_eq!(path[0], s);
                        prop_assert_eq!(*path.last().unwrap(), t);
                        prop_assert!((g.path_cost(&path).unwrap() - cost).abs() < 1e-9);
                        prop_assert_eq!(path.len() - 1, hops);
                    }
                    (Err(_), None) => {}
                    (got, want) => prop_assert!(false, "{s}->{t}: got {got:?}, want {want:?}"),
                }
            }
        }
    }

    #[test]
    fn edge_rule_conformance(a in pose(), b in pose()) {
        let g = build_graph_with(&[(1, a), (2, b)], EdgeRule::default(), 1.0);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let dist = dx.hypot(dy);
        let ahead = dist == 0.0 || dx * a.theta.cos() + dy * a.theta.sin() > 0.0;
        prop_assert_eq!(g.edge_cost(0, 1).is_some(), dist <= 2.0 && ahead);
        if let Some(c) = g.edge_cost(0, 1) {
            prop_assert!((c - dist).abs() < 1e-12);
        }
    }

    #[test]
    fn build_is_deterministic_and_round_trips(poses in prop::collection::vec(pose(), 1..40)) {
        let indexed: Vec<(usize, Pose2)> = poses.iter().enumerate().map(|(i, p)| (i + 1, *p)).collect();
        let g = build_graph_with(&indexed, EdgeRule::default(), 1.0);
        let again = build_graph_with(&indexed, EdgeRule::default(), 1.0);
        prop_assert_eq!(g.to_json(), again.to_json());
        let back = TopoGraph::from_file(serde_json::from_str(&g.to_json()).unwrap()).unwrap();
        prop_assert_eq!(back.to_json(), g.to_json());
        for v in 0..g.len() {
            prop_assert!(g.edges_from(v).iter().all(|e| e.to != v));
        }
    }
}

#[test]
fn hundred_vertex_file_round_trip() {
    let poses: Vec<(usize, Pose2)> = (1..=100)
        .map(|i| {
            let a = i as f64 * 0.0628;
            (i, Pose2::new(8.0 * a.cos(), 8.0 * a.sin(), a + std::f64::consts::FRAC_PI_2))
        })
        .collect();
    let g = build_graph_with(&poses, EdgeRule::default(), 1.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("graph.json");
    g.save(&path).unwrap();
    let back = TopoGraph::load(&path).unwrap();
    assert_eq!(back.len(), 100);
    assert_eq!(back.edge_count(), g.edge_count());
    assert_eq!(back.to_json(), g.to_json());
    assert_eq!(back.shortest_path(0, 99).unwrap(), g.shortest_path(0, 99).unwrap());
}
