//! Pose graph over local maps: odometry chain construction, metric loop
//! detection, loop validation through the aligner, global optimization and
//! graph file serialization.

use crate::eval::Trajectory;
use crate::frontend::{align, AlignConfig, FrontendError, LocalMap, MeasurementPacket};
use crate::geometry::{wrap_angle, Pose2};
use crate::props::{
    container_from_fields, emit_container, value_to_json, PropertyContainer, PropertyValue,
    PropsError, SerializedObject, CONTAINER_CLASS,
};
use crate::solver::{solve, Factor, FactorKind, SolveSettings, SolverError, SolverStats, Variable};
use nalgebra::{DMatrix, Matrix3, Vector3};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: usize,
    /// Current world-frame estimate of the local map origin.
    pub pose: Pose2,
    pub local_map: LocalMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Odometry,
    Loop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub from_id: usize,
    pub to_id: usize,
    /// Pose of `to` in the frame of `from`.
    pub measurement: Pose2,
    pub information: Matrix3<f64>,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopCandidate {
    pub query_id: usize,
    pub match_id: usize,
    pub initial_guess: Pose2,
    /// Filled by validation: (measured relative, chi2, inlier ratio).
    pub result: Option<(Pose2, f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error(transparent)]
    Props(#[from] PropsError),
    #[error("line {0}: {1}")]
    Parse(usize, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    /// Metric search radius around the query node.
    pub search_radius: f64,
    /// Number of most recent nodes excluded from matching.
    pub exclude_last: usize,
    /// Minimum inliers / moving points for acceptance.
    pub min_inlier_ratio: f64,
    /// Maximum mean point residual for acceptance.
    pub max_mean_residual: f64,
    /// Maximum correction between guess and aligned result.
    pub max_correction_trans: f64,
    pub max_correction_rot: f64,
    /// Loop edge information = odometry information x inliers/100, clamped
    /// to this factor range.
    pub info_scale_min: f64,
    pub info_scale_max: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            search_radius: 3.0,
            exclude_last: 5,
            min_inlier_ratio: 0.5,
            max_mean_residual: 0.1,
            max_correction_trans: 2.0,
            max_correction_rot: 1.0,
            info_scale_min: 0.1,
            info_scale_max: 10.0,
        }
    }
}

pub fn default_odometry_information() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(100.0, 100.0, 400.0))
}

impl PoseGraph {
    pub fn node(&self, id: usize) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Appends a finished local map. The first map becomes the gauge node 0
    /// at identity; later maps chain off the previous node through
    /// `relative_from_previous` with an odometry edge.
    pub fn add_local_map(
        &mut self,
        local_map: LocalMap,
        relative_from_previous: Option<Pose2>,
        information: Matrix3<f64>,
    ) -> usize {
        let id = self.nodes.len();
        let pose = match (self.nodes.last(), relative_from_previous) {
            (Some(prev), Some(relative)) => {
                self.edges.push(GraphEdge {
                    from_id: prev.id,
                    to_id: id,
                    measurement: relative,
                    information,
                    kind: EdgeKind::Odometry,
                });
                prev.pose.compose(&relative)
            }
            _ => Pose2::identity(),
        };
        self.nodes.push(GraphNode {
            id,
            pose,
            local_map,
        });
        id
    }

    /// Nodes within `search_radius` of the query position, excluding the
    /// query itself and the `exclude_last` nodes created just before it.
    pub fn detect_loops(&self, query_id: usize, cfg: &LoopConfig) -> Vec<LoopCandidate> {
        let Some(query) = self.node(query_id) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for node in &self.nodes {
            if node.id + cfg.exclude_last >= query_id {
                continue;
            }
            if (node.pose.translation() - query.pose.translation()).norm() > cfg.search_radius {
                continue;
            }
            out.push(LoopCandidate {
                query_id,
                match_id: node.id,
                initial_guess: node.pose.inverse().compose(&query.pose),
                result: None,
            });
        }
        out
    }

    /// Re-registers the query scene against the match scene from the
    /// candidate guess. Returns the loop edge on acceptance; rejection
    /// (including degenerate alignment) is a normal outcome.
    pub fn validate_loop(
        &self,
        candidate: &mut LoopCandidate,
        align_cfg: &AlignConfig,
        cfg: &LoopConfig,
        odometry_information: &Matrix3<f64>,
    ) -> Option<GraphEdge> {
        let match_node = self.node(candidate.match_id)?;
        let query_node = self.node(candidate.query_id)?;
        let packet = MeasurementPacket {
            timestamp: 0.0,
            cues: query_node.local_map.scene.clone(),
        };
        let (pose, stats) = match align(
            &match_node.local_map.scene,
            &packet,
            &candidate.initial_guess,
            align_cfg,
        ) {
            Ok(r) => r,
            Err(FrontendError::DegenerateAlignment { .. }) => return None,
        };
        if stats.moving_points == 0 {
            return None;
        }
        let inlier_ratio = stats.total_inliers() as f64 / stats.moving_points as f64;
        candidate.result = Some((pose, stats.chi2, inlier_ratio));
        let correction = candidate.initial_guess.inverse().compose(&pose);
        let accepted = inlier_ratio >= cfg.min_inlier_ratio
            && stats.mean_residual <= cfg.max_mean_residual
            && correction.translation().norm() <= cfg.max_correction_trans
            && wrap_angle(correction.theta).abs() <= cfg.max_correction_rot;
        if !accepted {
            return None;
        }
        let scale = (stats.total_inliers() as f64 / 100.0)
            .clamp(cfg.info_scale_min, cfg.info_scale_max);
        Some(GraphEdge {
            from_id: candidate.match_id,
            to_id: candidate.query_id,
            measurement: pose,
            information: odometry_information * scale,
            kind: EdgeKind::Loop,
        })
    }

    /// Global relaxation: node 0 fixed, one relative-pose factor per edge.
    pub fn optimize(&mut self, settings: &SolveSettings) -> Result<SolverStats, SolverError> {
        assert!(!self.nodes.is_empty());
        let mut variables: Vec<Variable> = self
            .nodes
            .iter()
            .map(|n| Variable {
                id: n.id,
                estimate: n.pose,
                fixed: n.id == 0,
            })
            .collect();
        let factors: Vec<Factor> = self
            .edges
            .iter()
            .map(|e| Factor {
                kind: FactorKind::RelativePose {
                    from: e.from_id,
                    to: e.to_id,
                    measurement: e.measurement,
                },
                information: DMatrix::from_fn(3, 3, |r, c| e.information[(r, c)]),
                kernel: None,
            })
            .collect();
        let stats = solve(&mut variables, &factors, settings)?;
        for (node, var) in self.nodes.iter_mut().zip(variables.iter()) {
            node.pose = var.estimate;
        }
        Ok(stats)
    }

    /// Full per-packet trajectory: each node's local trajectory composed
    /// with the (optimized) node pose.
    pub fn trajectory(&self) -> Trajectory {
        let mut out = Trajectory::default();
        for node in &self.nodes {
            for (t, pose_in_map) in &node.local_map.trajectory {
                out.push(*t, node.pose.compose(pose_in_map));
            }
        }
        out
    }
}

const GRAPH_CLASS: &str = "PoseGraph";
const NODE_CLASS: &str = "GraphNode";
const EDGE_CLASS: &str = "GraphEdge";

fn pose_json(p: &Pose2) -> Value {
    value_to_json(&PropertyValue::Pose2(*p), || unreachable!())
}

/// JSON-lines graph file: a header with counts, then per node its scene
/// container followed by the node record, then the edges.
pub fn serialize_graph(graph: &PoseGraph) -> String {
    let mut objects = Vec::new();
    let mut header = Map::new();
    header.insert("nodes".into(), json!(graph.nodes.len()));
    header.insert("edges".into(), json!(graph.edges.len()));
    objects.push(SerializedObject {
        class_name: GRAPH_CLASS.into(),
        id: 0,
        fields: header,
    });
    let mut next_id = 1;
    for node in &graph.nodes {
        let scene_id = emit_container(&node.local_map.scene, &mut objects, &mut next_id);
        let mut fields = Map::new();
        fields.insert("node_id".into(), json!(node.id));
        fields.insert("pose".into(), pose_json(&node.pose));
        fields.insert("origin".into(), pose_json(&node.local_map.origin));
        fields.insert("map_id".into(), json!(node.local_map.id));
        fields.insert(
            "trajectory".into(),
            Value::Array(
                node.local_map
                    .trajectory
                    .iter()
                    .map(|(t, p)| json!([t, p.x, p.y, p.theta]))
                    .collect(),
            ),
        );
        fields.insert("scene".into(), json!({ "container": scene_id }));
        objects.push(SerializedObject {
            class_name: NODE_CLASS.into(),
            id: next_id,
            fields,
        });
        next_id += 1;
    }
    for edge in &graph.edges {
        let mut fields = Map::new();
        fields.insert("from".into(), json!(edge.from_id));
        fields.insert("to".into(), json!(edge.to_id));
        fields.insert("measurement".into(), pose_json(&edge.measurement));
        let info: Vec<f64> = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| edge.information[(r, c)])
            .collect();
        fields.insert("information".into(), json!(info));
        fields.insert(
            "kind".into(),
            json!(match edge.kind {
                EdgeKind::Odometry => "odometry",
                EdgeKind::Loop => "loop",
            }),
        );
        objects.push(SerializedObject {
            class_name: EDGE_CLASS.into(),
            id: next_id,
            fields,
        });
        next_id += 1;
    }
    let mut text = String::new();
    for obj in objects {
        text.push_str(&obj.to_line());
        text.push('\n');
    }
    text
}

fn field<'a>(
    fields: &'a Map<String, Value>,
    name: &str,
    line: usize,
) -> Result<&'a Value, GraphError> {
    fields
        .get(name)
        .ok_or_else(|| GraphError::Parse(line, format!("missing field '{name}'")))
}

fn pose_from(v: &Value, line: usize) -> Result<Pose2, GraphError> {
    let arr = v
        .get("pose2")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 3)
        .ok_or_else(|| GraphError::Parse(line, "malformed pose".into()))?;
    let f = |i: usize| {
        arr[i]
            .as_f64()
            .ok_or_else(|| GraphError::Parse(line, "non-numeric pose component".into()))
    };
    Ok(Pose2::new(f(0)?, f(1)?, f(2)?))
}

pub fn deserialize_graph(text: &str) -> Result<PoseGraph, GraphError> {
    let mut graph = PoseGraph::default();
    let mut containers: BTreeMap<u64, PropertyContainer> = BTreeMap::new();
    let mut saw_header = false;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let obj = SerializedObject::from_line(line_no, line)?;
        if !saw_header {
            if obj.class_name != GRAPH_CLASS {
                return Err(GraphError::Parse(line_no, "expected graph header".into()));
            }
            saw_header = true;
            continue;
        }
        match obj.class_name.as_str() {
            CONTAINER_CLASS => {
                let c = container_from_fields(&obj.fields, &containers)?;
                containers.insert(obj.id, c);
            }
            NODE_CLASS => {
                let f = &obj.fields;
                let scene_ref = field(f, "scene", line_no)?
                    .get("container")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| GraphError::Parse(line_no, "malformed scene ref".into()))?;
                let scene = containers
                    .get(&scene_ref)
                    .ok_or(PropsError::DanglingReference(scene_ref))?
                    .clone();
                let mut trajectory = Vec::new();
                for entry in field(f, "trajectory", line_no)?
                    .as_array()
                    .ok_or_else(|| GraphError::Parse(line_no, "malformed trajectory".into()))?
                {
                    let a = entry.as_array().filter(|a| a.len() == 4).ok_or_else(|| {
                        GraphError::Parse(line_no, "malformed trajectory entry".into())
                    })?;
                    let g = |i: usize| {
                        a[i].as_f64().ok_or_else(|| {
                            GraphError::Parse(line_no, "non-numeric trajectory entry".into())
                        })
                    };
                    trajectory.push((g(0)?, Pose2::new(g(1)?, g(2)?, g(3)?)));
                }
                let int = |name: &str| -> Result<u64, GraphError> {
                    field(f, name, line_no)?
                        .as_u64()
                        .ok_or_else(|| GraphError::Parse(line_no, format!("malformed '{name}'")))
                };
                graph.nodes.push(GraphNode {
                    id: int("node_id")? as usize,
                    pose: pose_from(field(f, "pose", line_no)?, line_no)?,
                    local_map: LocalMap {
                        id: int("map_id")?,
                        origin: pose_from(field(f, "origin", line_no)?, line_no)?,
                        scene,
                        trajectory,
                    },
                });
            }
            EDGE_CLASS => {
                let f = &obj.fields;
                let int = |name: &str| -> Result<usize, GraphError> {
                    Ok(field(f, name, line_no)?
                        .as_u64()
                        .ok_or_else(|| GraphError::Parse(line_no, format!("malformed '{name}'")))?
                        as usize)
                };
                let (from_id, to_id) = (int("from")?, int("to")?);
                for id in [from_id, to_id] {
                    if graph.node(id).is_none() {
                        return Err(PropsError::DanglingReference(id as u64).into());
                    }
                }
                let info_vec = field(f, "information", line_no)?
                    .as_array()
                    .filter(|a| a.len() == 9)
                    .ok_or_else(|| GraphError::Parse(line_no, "malformed information".into()))?
                    .iter()
                    .map(|v| {
                        v.as_f64().ok_or_else(|| {
                            GraphError::Parse(line_no, "non-numeric information".into())
                        })
                    })
                    .collect::<Result<Vec<f64>, _>>()?;
                let kind = match field(f, "kind", line_no)?.as_str() {
                    Some("odometry") => EdgeKind::Odometry,
                    Some("loop") => EdgeKind::Loop,
                    _ => return Err(GraphError::Parse(line_no, "unknown edge kind".into())),
                };
                graph.edges.push(GraphEdge {
                    from_id,
                    to_id,
                    measurement: pose_from(field(f, "measurement", line_no)?, line_no)?,
                    information: Matrix3::from_fn(|r, c| info_vec[r * 3 + c]),
                    kind,
                });
            }
            other => {
                return Err(PropsError::UnknownClass {
                    line: line_no,
                    class: other.to_string(),
                }
                .into())
            }
        }
    }
    if !saw_header {
        return Err(GraphError::Parse(0, "empty graph file".into()));
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{estimate_normals, PointCloud2};
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dummy_map(id: u64) -> LocalMap {
        LocalMap {
            id,
            origin: Pose2::identity(),
            scene: PropertyContainer::new(),
            trajectory: vec![(id as f64, Pose2::identity())],
        }
    }

    fn square_scene(half: f64) -> PropertyContainer {
        let mut points = Vec::new();
        let n = (2.0 * half / 0.05) as usize;
        for i in 0..n {
            let s = -half + i as f64 * 0.05;
            points.push(Vector2::new(s, -half));
            points.push(Vector2::new(half, s));
            points.push(Vector2::new(-s, half));
            points.push(Vector2::new(-half, -s));
        }
        let cloud = estimate_normals(&PointCloud2::from_points(points), 8);
        let mut scene = PropertyContainer::new();
        scene
            .put("front_scan", PropertyValue::PointCloud2(cloud))
            .unwrap();
        scene
    }

    fn scan_only_align() -> AlignConfig {
        AlignConfig {
            scan_topics: vec!["front_scan".into()],
            use_odometry: false,
            ..AlignConfig::default()
        }
    }

    #[test]
    fn add_local_map_examples() {
        let info = default_odometry_information();
        let mut g = PoseGraph::default();
        let id0 = g.add_local_map(dummy_map(0), None, info);
        assert_eq!(id0, 0);
        assert_eq!(g.nodes[0].pose, Pose2::identity());
        assert!(g.edges.is_empty());

        let id1 = g.add_local_map(dummy_map(1), Some(Pose2::new(1.0, 0.0, 0.0)), info);
        assert_eq!(id1, 1);
        assert_eq!(g.nodes[1].pose, Pose2::new(1.0, 0.0, 0.0));
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].kind, EdgeKind::Odometry);
    }

    #[test]
    fn chain_recovers_composed_poses() {
        let info = default_odometry_information();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = PoseGraph::default();
        g.add_local_map(dummy_map(0), None, info);
        let mut expected = Pose2::identity();
        for i in 1..20 {
            let rel = Pose2::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.4..0.4),
            );
            expected = expected.compose(&rel);
            g.add_local_map(dummy_map(i), Some(rel), info);
            let got = g.nodes[i as usize].pose;
            assert!((got.x - expected.x).abs() < 1e-12);
            assert!((got.theta - expected.theta).abs() < 1e-12);
        }
    }

    #[test]
    fn detect_loops_cases() {
        let info = default_odometry_information();
        let cfg = LoopConfig::default();
        let mut g = PoseGraph::default();
        g.add_local_map(dummy_map(0), None, info);
        assert!(g.detect_loops(0, &cfg).is_empty());

        // A long loop that comes back near node 0: 10 nodes out, 10 back.
        let mut g = PoseGraph::default();
        g.add_local_map(dummy_map(0), None, info);
        for i in 1..=10 {
            g.add_local_map(dummy_map(i), Some(Pose2::new(1.0, 0.0, 0.0)), info);
        }
        for i in 11..=20 {
            g.add_local_map(dummy_map(i), Some(Pose2::new(-1.0, 0.0, 0.0)), info);
        }
        let candidates = g.detect_loops(20, &cfg);
        assert!(candidates.iter().any(|c| c.match_id == 0), "{candidates:?}");
        // The excluded window holds even though nodes 16..19 are nearby.
        assert!(candidates.iter().all(|c| c.match_id + cfg.exclude_last < 20));

        // Mid-trajectory node is far from everything older than the window.
        assert!(g.detect_loops(10, &cfg).is_empty());

        let guess = candidates
            .iter()
            .find(|c| c.match_id == 0)
            .unwrap()
            .initial_guess;
        assert!(guess.translation().norm() < 1e-9);
    }

    #[test]
    fn validate_loop_self_candidate_accepted() {
        let info = default_odometry_information();
        let mut g = PoseGraph::default();
        let mut map = dummy_map(0);
        map.scene = square_scene(2.0);
        g.add_local_map(map, None, info);
        let mut cand = LoopCandidate {
            query_id: 0,
            match_id: 0,
            initial_guess: Pose2::identity(),
            result: None,
        };
        let edge = g
            .validate_loop(&mut cand, &scan_only_align(), &LoopConfig::default(), &info)
            .expect("self loop must validate");
        assert!(edge.measurement.translation().norm() < 1e-6);
        assert_eq!(edge.kind, EdgeKind::Loop);
        let (_, _, ratio) = cand.result.unwrap();
        assert!(ratio > 0.9);
    }

    #[test]
    fn validate_loop_rejects_disjoint_scenes() {
        let info = default_odometry_information();
        let mut g = PoseGraph::default();
        let mut a = dummy_map(0);
        a.scene = square_scene(2.0);
        // A different room: a wall far outside the other scene's extent.
        let mut b = dummy_map(1);
        let points: Vec<Vector2<f64>> =
            (0..200).map(|i| Vector2::new(30.0 + i as f64 * 0.05, 7.0)).collect();
        b.scene = PropertyContainer::new();
        b.scene
            .put(
                "front_scan",
                PropertyValue::PointCloud2(estimate_normals(
                    &PointCloud2::from_points(points),
                    8,
                )),
            )
            .unwrap();
        g.add_local_map(a, None, info);
        g.add_local_map(b, Some(Pose2::identity()), info);
        let mut cand = LoopCandidate {
            query_id: 1,
            match_id: 0,
            initial_guess: Pose2::identity(),
            result: None,
        };
        assert!(g
            .validate_loop(&mut cand, &scan_only_align(), &LoopConfig::default(), &info)
            .is_none());
    }

    #[test]
    fn validate_loop_survives_odometric_drift() {
        let info = default_odometry_information();
        let truth = Pose2::new(0.4, -0.3, 0.1);
        let mut g = PoseGraph::default();
        let mut a = dummy_map(0);
        a.scene = square_scene(2.0);
        let mut b = dummy_map(1);
        let fixed = a.scene.get_cloud("front_scan").unwrap().clone();
        b.scene = PropertyContainer::new();
        b.scene
            .put(
                "front_scan",
                PropertyValue::PointCloud2(fixed.transformed(&truth.inverse())),
            )
            .unwrap();
        g.add_local_map(a, None, info);
        g.add_local_map(b, Some(Pose2::identity()), info);
        // Guess is 0.2 m off the true relative pose.
        let mut cand = LoopCandidate {
            query_id: 1,
            match_id: 0,
            initial_guess: truth.compose(&Pose2::new(0.2, 0.0, 0.0)),
            result: None,
        };
        let edge = g
            .validate_loop(&mut cand, &scan_only_align(), &LoopConfig::default(), &info)
            .expect("planted loop must validate");
        assert!((edge.measurement.x - truth.x).abs() < 0.02, "{:?}", edge.measurement);
        assert!((edge.measurement.y - truth.y).abs() < 0.02, "{:?}", edge.measurement);
        assert!((edge.measurement.theta - truth.theta).abs() < 0.02);
    }

    /// Odometry chain with noise plus one exact loop edge closing the ends.
    fn noisy_ring(seed: u64, n: usize) -> (PoseGraph, Vec<Pose2>) {
        let info = default_odometry_information();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let step = Pose2::new(1.0, 0.0, 2.0 * std::f64::consts::PI / n as f64);
        let mut truth = vec![Pose2::identity()];
        for i in 1..n {
            truth.push(truth[i - 1].compose(&step));
        }
        let mut g = PoseGraph::default();
        g.add_local_map(dummy_map(0), None, info);
        for i in 1..n {
            let noisy = Pose2::new(
                step.x + rng.gen_range(-0.05..0.05),
                step.y + rng.gen_range(-0.05..0.05),
                step.theta + rng.gen_range(-0.01..0.01),
            );
            g.add_local_map(dummy_map(i as u64), Some(noisy), info);
        }
        // Exact closing measurement between the last node and node 0.
        g.edges.push(GraphEdge {
            from_id: n - 1,
            to_id: 0,
            measurement: truth[n - 1].inverse().compose(&truth[0]),
            information: info,
            kind: EdgeKind::Loop,
        });
        (g, truth)
    }

    #[test]
    fn optimize_without_loops_is_a_no_op() {
        let info = default_odometry_information();
        let mut g = PoseGraph::default();
        g.add_local_map(dummy_map(0), None, info);
        for i in 1..10 {
            g.add_local_map(dummy_map(i), Some(Pose2::new(1.0, 0.2, 0.1)), info);
        }
        let before: Vec<Pose2> = g.nodes.iter().map(|n| n.pose).collect();
        g.optimize(&SolveSettings::default()).unwrap();
        for (b, n) in before.iter().zip(g.nodes.iter()) {
            assert!((b.x - n.pose.x).abs() < 1e-9);
            assert!((b.y - n.pose.y).abs() < 1e-9);
            assert!((b.theta - n.pose.theta).abs() < 1e-9);
        }
    }

    #[test]
    fn optimize_reduces_ring_endpoint_error() {
        let (mut g, truth) = noisy_ring(5, 20);
        let gauge_before = g.nodes[0].pose;
        let before = (g.nodes[19].pose.translation() - truth[19].translation()).norm();
        g.optimize(&SolveSettings::default()).unwrap();
        let after = (g.nodes[19].pose.translation() - truth[19].translation()).norm();
        assert!(after < before, "endpoint error {before:.3} -> {after:.3}");
        // Gauge node untouched, bit for bit.
        assert_eq!(g.nodes[0].pose, gauge_before);
    }

    #[test]
    fn serialize_empty_graph_is_header_only() {
        let g = PoseGraph::default();
        let text = serialize_graph(&g);
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("\"PoseGraph\""));
        let back = deserialize_graph(&text).unwrap();
        assert!(back.nodes.is_empty() && back.edges.is_empty());
    }

    #[test]
    fn graph_round_trip_is_lossless() {
        let (mut g, _) = noisy_ring(9, 50);
        for node in g.nodes.iter_mut() {
            node.local_map.scene = square_scene(0.5 + 0.01 * node.id as f64);
            node.local_map.trajectory = vec![
                (node.id as f64, Pose2::identity()),
                (node.id as f64 + 0.5, Pose2::new(0.1, 0.2, 0.3)),
            ];
        }
        let text = serialize_graph(&g);
        let back = deserialize_graph(&text).unwrap();
        assert_eq!(g.nodes.len(), back.nodes.len());
        assert_eq!(g.edges.len(), back.edges.len());
        for (a, b) in g.nodes.iter().zip(back.nodes.iter()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.pose, b.pose);
            assert_eq!(a.local_map, b.local_map);
        }
        for (a, b) in g.edges.iter().zip(back.edges.iter()) {
            assert_eq!(a, b);
        }
        // Byte stability through a second round trip.
        assert_eq!(text, serialize_graph(&back));
    }

    #[test]
    fn dangling_edge_detected() {
        let info = default_odometry_information();
        let mut g = PoseGraph::default();
        g.add_local_map(dummy_map(0), None, info);
        g.edges.push(GraphEdge {
            from_id: 0,
            to_id: 7,
            measurement: Pose2::identity(),
            information: info,
            kind: EdgeKind::Loop,
        });
        let text = serialize_graph(&g);
        let err = deserialize_graph(&text).unwrap_err();
        assert_eq!(err, GraphError::Props(PropsError::DanglingReference(7)));
    }

    #[test]
    fn trajectory_composes_node_poses() {
        let info = default_odometry_information();
        let mut g = PoseGraph::default();
        let mut m0 = dummy_map(0);
        m0.trajectory = vec![(0.0, Pose2::identity()), (0.1, Pose2::new(0.5, 0.0, 0.0))];
        let mut m1 = dummy_map(1);
        m1.trajectory = vec![(0.2, Pose2::identity()), (0.3, Pose2::new(0.25, 0.0, 0.0))];
        g.add_local_map(m0, None, info);
        g.add_local_map(m1, Some(Pose2::new(1.0, 0.0, 0.0)), info);
        let t = g.trajectory();
        assert_eq!(t.len(), 4);
        assert_eq!(t.samples[1].1, Pose2::new(0.5, 0.0, 0.0));
        assert_eq!(t.samples[2].1, Pose2::new(1.0, 0.0, 0.0));
        assert_eq!(t.samples[3].1, Pose2::new(1.25, 0.0, 0.0));
    }
}
