//! End-to-end driver: streams a measurement log through an instantiated
//! pipeline (packet assembly, tracking, graph construction, loop closing,
//! optimization) and collects the outputs.

use crate::config::Pipeline;
use crate::dataset::Measurement;
use crate::eval::Trajectory;
use crate::frontend::{assemble_packets, Tracker, TrackerEvent};
use crate::geometry::Pose2;
use crate::graph::{serialize_graph, PoseGraph};
use crate::solver::SolverError;

/// Everything a run produces besides files written by the caller.
#[derive(Debug)]
pub struct RunResult {
    pub graph: PoseGraph,
    pub trajectory: Trajectory,
    pub packet_count: usize,
    pub degenerate_steps: usize,
    pub accepted_loops: usize,
    /// Seconds of processing time (excludes parsing and file IO).
    pub processing_seconds: f64,
    /// (packet index, serialized graph) checkpoints.
    pub checkpoints: Vec<(usize, String)>,
}

impl RunResult {
    pub fn frame_rate(&self) -> f64 {
        if self.processing_seconds > 0.0 {
            self.packet_count as f64 / self.processing_seconds
        } else {
            0.0
        }
    }
}

/// Adds a finished map to the graph, searches and validates loop closures
/// for the new node, and optimizes when an edge was accepted. Returns the
/// number of accepted loop edges.
fn integrate_map(
    graph: &mut PoseGraph,
    pipeline: &Pipeline,
    map: crate::frontend::LocalMap,
    relative: Option<Pose2>,
) -> Result<usize, SolverError> {
    let settings = &pipeline.graph;
    let id = graph.add_local_map(map, relative, settings.odom_information);
    let Some((loop_cfg, loop_align)) = &settings.loops else {
        return Ok(0);
    };
    let mut accepted = 0;
    for mut candidate in graph.detect_loops(id, loop_cfg) {
        if let Some(edge) =
            graph.validate_loop(&mut candidate, loop_align, loop_cfg, &settings.odom_information)
        {
            graph.edges.push(edge);
            accepted += 1;
        }
    }
    if accepted > 0 && settings.optimize_on_loop {
        graph.optimize(&settings.solve)?;
    }
    Ok(accepted)
}

/// Runs the full pipeline over a measurement log. `save_graph_every`
/// snapshots the graph after every N packets.
pub fn run_pipeline(
    pipeline: &Pipeline,
    measurements: &[Measurement],
    save_graph_every: Option<usize>,
) -> Result<RunResult, SolverError> {
    let start = std::time::Instant::now();
    let packets = assemble_packets(measurements, &pipeline.assembly);
    let mut tracker = Tracker::new(pipeline.tracker.clone());
    let mut graph = PoseGraph::default();
    let mut pending_relative: Option<Pose2> = None;
    let mut degenerate_steps = 0;
    let mut accepted_loops = 0;
    let mut checkpoints = Vec::new();

    for (index, packet) in packets.iter().enumerate() {
        for event in tracker.process(packet) {
            match event {
                TrackerEvent::PoseUpdate { degenerate, .. } => {
                    if degenerate {
                        degenerate_steps += 1;
                    }
                }
                TrackerEvent::MapFinished {
                    map,
                    closing_relative,
                } => {
                    accepted_loops +=
                        integrate_map(&mut graph, pipeline, map, pending_relative.take())?;
                    pending_relative = Some(closing_relative);
                }
            }
        }
        if let Some(every) = save_graph_every {
            if every > 0 && (index + 1) % every == 0 {
                checkpoints.push((index + 1, serialize_graph(&graph)));
            }
        }
    }
    if let Some(last) = tracker.finish() {
        accepted_loops += integrate_map(&mut graph, pipeline, last, pending_relative.take())?;
    }
    if !graph.nodes.is_empty() {
        graph.optimize(&pipeline.graph.solve)?;
    }
    let trajectory = graph.trajectory();
    Ok(RunResult {
        graph,
        trajectory,
        packet_count: packets.len(),
        degenerate_steps,
        accepted_loops,
        processing_seconds: start.elapsed().as_secs_f64(),
        checkpoints,
    })
}

/// All scene points of every node, in world frame, for map rendering.
pub fn world_points(graph: &PoseGraph) -> Vec<nalgebra::Vector2<f64>> {
    let mut out = Vec::new();
    for node in &graph.nodes {
        for (_, value) in node.local_map.scene.iter() {
            if let crate::props::PropertyValue::PointCloud2(cloud) = value {
                for p in &cloud.points {
                    out.push(node.pose.transform_point(p));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{instantiate, preset_config, Registry};
    use crate::eval::{align_trajectories, associate, ate, write_tum};
    use crate::sim::{path_preset, robot_preset, simulate, world_preset};

    fn office_dataset(seed: u64) -> (Vec<Measurement>, Trajectory) {
        let world = world_preset("office").unwrap();
        let (spawn, path) = path_preset("office").unwrap();
        let robot = robot_preset(true, true);
        simulate(&world, &robot, &spawn, &path, seed).unwrap()
    }

    #[test]
    fn office_run_closes_loop_and_tracks_accurately() {
        let registry = Registry::builtin();
        let pipeline =
            instantiate(&registry, &preset_config("lidar-dual-odom").unwrap()).unwrap();
        let (measurements, gt) = office_dataset(1);
        let result = run_pipeline(&pipeline, &measurements, None).unwrap();
        assert!(result.packet_count > 500);
        assert!(result.graph.nodes.len() > 20);
        assert!(result.accepted_loops >= 1, "no loop closures accepted");
        let pairs = associate(&gt, &result.trajectory, 0.05).unwrap();
        let alignment = align_trajectories(&pairs).unwrap();
        let err = ate(&pairs, &alignment);
        assert!(err <= 0.15, "office ATE {err:.3} m");
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let registry = Registry::builtin();
        let pipeline =
            instantiate(&registry, &preset_config("lidar-dual-odom").unwrap()).unwrap();
        let (measurements, _) = office_dataset(7);
        let a = run_pipeline(&pipeline, &measurements, Some(100)).unwrap();
        let b = run_pipeline(&pipeline, &measurements, Some(100)).unwrap();
        assert_eq!(write_tum(&a.trajectory), write_tum(&b.trajectory));
        assert_eq!(serialize_graph(&a.graph), serialize_graph(&b.graph));
        assert_eq!(a.checkpoints.len(), b.checkpoints.len());
        for ((ia, ta), (ib, tb)) in a.checkpoints.iter().zip(b.checkpoints.iter()) {
            assert_eq!(ia, ib);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn rewritten_config_behaves_identically() {
        let registry = Registry::builtin();
        let text = preset_config("lidar-dual").unwrap();
        let p1 = instantiate(&registry, &text).unwrap();
        let p2 = instantiate(&registry, &crate::config::write_config(&p1)).unwrap();
        let world = world_preset("box").unwrap();
        let (spawn, path) = path_preset("box").unwrap();
        let robot = robot_preset(true, true);
        let (measurements, _) = simulate(&world, &robot, &spawn, &path, 3).unwrap();
        let r1 = run_pipeline(&p1, &measurements, None).unwrap();
        let r2 = run_pipeline(&p2, &measurements, None).unwrap();
        assert_eq!(write_tum(&r1.trajectory), write_tum(&r2.trajectory));
    }
}
