//! Per-step estimation path: raw-data preprocessing, measurement packet
//! assembly, the multi-cue aligner and the tracker state machine that
//! maintains the current local map (merge, clip, split).

use crate::dataset::{LaserScan, Measurement, OdometryReading};
use crate::geometry::{
    estimate_normals, find_correspondences_with_tree, voxel_decimate, wrap_angle, KdTree,
    PointCloud2, Pose2,
};
use crate::props::{PropertyContainer, PropertyValue};
use crate::solver::{
    residual_and_jacobian, solve, Factor, FactorKind, HuberKernel, SolveSettings, Variable,
};
use nalgebra::{DMatrix, Matrix3, Vector2};
use std::collections::BTreeMap;
use thiserror::Error;

/// Cue name under which the relative odometry motion is stored in a packet.
pub const ODOM_DELTA_CUE: &str = "odom_delta";

#[derive(Debug, Clone, PartialEq)]
pub struct SensorExtrinsics {
    pub topic: String,
    pub sensor_in_base: Pose2,
}

/// All cues of one time step: point clouds keyed by topic plus an optional
/// `odom_delta` pose.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPacket {
    pub timestamp: f64,
    pub cues: PropertyContainer,
}

/// A rigid body anchored at a graph node: per-cue scene clouds in the
/// local-map frame plus the local trajectory (first pose identity).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMap {
    pub id: u64,
    pub origin: Pose2,
    pub scene: PropertyContainer,
    pub trajectory: Vec<(f64, Pose2)>,
}

#[derive(Debug, Error, PartialEq)]
pub enum FrontendError {
    #[error("alignment degenerate: {inliers} inliers, condition {condition:.3e}")]
    DegenerateAlignment { inliers: usize, condition: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessParams {
    /// Decimation cell size for a single preprocessed scan.
    pub voxel: f64,
    /// Neighborhood size for normal estimation.
    pub normal_k: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            voxel: 0.025,
            normal_k: 8,
        }
    }
}

/// Polar ranges to a normal-equipped, decimated cloud in the base frame.
pub fn preprocess_scan(
    scan: &LaserScan,
    extrinsics: &Pose2,
    params: &PreprocessParams,
) -> PointCloud2 {
    assert!(scan.angle_increment > 0.0 && scan.range_min < scan.range_max);
    let mut points = Vec::new();
    for (i, &r) in scan.ranges.iter().enumerate() {
        if !r.is_finite() || r < scan.range_min || r > scan.range_max {
            continue;
        }
        let angle = scan.angle_min + i as f64 * scan.angle_increment;
        let in_sensor = Vector2::new(r * angle.cos(), r * angle.sin());
        points.push(extrinsics.transform_point(&in_sensor));
    }
    let cloud = estimate_normals(&PointCloud2::from_points(points), params.normal_k);
    voxel_decimate(&cloud, params.voxel)
}

/// Relative motion between two odometry readings, in the base frame.
pub fn preprocess_odometry(prev: &OdometryReading, cur: &OdometryReading) -> Pose2 {
    assert!(cur.timestamp >= prev.timestamp);
    prev.pose.inverse().compose(&cur.pose)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyParams {
    /// Scan topic whose timestamps define the packet times.
    pub primary_topic: String,
    /// Maximum time offset for bundling another sensor's scan.
    pub sync_window: f64,
    pub extrinsics: Vec<SensorExtrinsics>,
    pub preprocess: PreprocessParams,
    /// Whether to interpolate odometry to scan time and emit `odom_delta`.
    pub use_odometry: bool,
}

impl Default for AssemblyParams {
    fn default() -> Self {
        AssemblyParams {
            primary_topic: "front_scan".into(),
            sync_window: 0.05,
            extrinsics: vec![
                SensorExtrinsics {
                    topic: "front_scan".into(),
                    sensor_in_base: Pose2::identity(),
                },
                SensorExtrinsics {
                    topic: "rear_scan".into(),
                    sensor_in_base: Pose2::new(0.0, 0.0, std::f64::consts::PI),
                },
            ],
            preprocess: PreprocessParams::default(),
            use_odometry: true,
        }
    }
}

/// Linear interpolation of odometry to time `t` (shortest arc for the
/// angle); clamps outside the covered range. `readings` must be sorted.
fn interpolate_odometry(readings: &[OdometryReading], t: f64) -> Option<Pose2> {
    if readings.is_empty() {
        return None;
    }
    if t <= readings[0].timestamp {
        return Some(readings[0].pose);
    }
    if t >= readings[readings.len() - 1].timestamp {
        return Some(readings[readings.len() - 1].pose);
    }
    let i = readings.partition_point(|r| r.timestamp <= t);
    let (a, b) = (&readings[i - 1], &readings[i]);
    let span = b.timestamp - a.timestamp;
    if span <= 0.0 {
        return Some(b.pose);
    }
    let alpha = (t - a.timestamp) / span;
    Some(Pose2::new(
        a.pose.x + alpha * (b.pose.x - a.pose.x),
        a.pose.y + alpha * (b.pose.y - a.pose.y),
        wrap_angle(a.pose.theta + alpha * wrap_angle(b.pose.theta - a.pose.theta)),
    ))
}

/// Bundles a sorted measurement log into per-primary-scan packets. Each
/// packet carries one preprocessed cloud per configured topic found within
/// the sync window, plus the odometry delta since the previous packet.
pub fn assemble_packets(
    measurements: &[Measurement],
    params: &AssemblyParams,
) -> Vec<MeasurementPacket> {
    let mut scans_by_topic: BTreeMap<&str, Vec<&LaserScan>> = BTreeMap::new();
    let mut odometry: Vec<OdometryReading> = Vec::new();
    for m in measurements {
        match m {
            Measurement::Scan(s) => scans_by_topic.entry(s.topic.as_str()).or_default().push(s),
            Measurement::Odometry(o) => odometry.push(*o),
        }
    }
    let Some(primaries) = scans_by_topic.get(params.primary_topic.as_str()) else {
        return Vec::new();
    };

    let mut packets = Vec::new();
    let mut prev_odom: Option<Pose2> = None;
    for primary in primaries.iter() {
        let t = primary.timestamp;
        let mut cues = PropertyContainer::new();
        for ext in &params.extrinsics {
            let scan = if ext.topic == params.primary_topic {
                Some(*primary)
            } else {
                scans_by_topic.get(ext.topic.as_str()).and_then(|list| {
                    list.iter()
                        .min_by(|a, b| {
                            (a.timestamp - t)
                                .abs()
                                .partial_cmp(&(b.timestamp - t).abs())
                                .unwrap()
                        })
                        .filter(|s| (s.timestamp - t).abs() <= params.sync_window)
                        .copied()
                })
            };
            if let Some(scan) = scan {
                let cloud = preprocess_scan(scan, &ext.sensor_in_base, &params.preprocess);
                cues.put(&ext.topic, PropertyValue::PointCloud2(cloud))
                    .expect("fresh container accepts any kind");
            }
        }
        if params.use_odometry {
            if let Some(cur) = interpolate_odometry(&odometry, t) {
                let delta = match prev_odom {
                    Some(prev) => prev.inverse().compose(&cur),
                    None => Pose2::identity(),
                };
                prev_odom = Some(cur);
                cues.put(ODOM_DELTA_CUE, PropertyValue::Pose2(delta))
                    .expect("fresh container accepts any kind");
            }
        }
        packets.push(MeasurementPacket { timestamp: t, cues });
    }
    packets
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    /// Scan topics with an aligner slice, in processing order.
    pub scan_topics: Vec<String>,
    /// Whether an odometry slice contributes a pose prior at the guess.
    pub use_odometry: bool,
    pub odom_information: Matrix3<f64>,
    pub outer_iterations: usize,
    /// Correspondence gate, shrinking linearly from start to end.
    pub gate_start: f64,
    pub gate_end: f64,
    /// Maximum angle between paired normals.
    pub normal_gate: f64,
    pub min_inliers: usize,
    /// Condition number of the scan-only normal matrix above which the
    /// problem is declared degenerate.
    pub cond_threshold: f64,
    pub huber_delta: f64,
    pub solve: SolveSettings,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            scan_topics: vec!["front_scan".into(), "rear_scan".into()],
            use_odometry: true,
            odom_information: Matrix3::from_diagonal(&nalgebra::Vector3::new(100.0, 100.0, 400.0)),
            outer_iterations: 10,
            gate_start: 0.5,
            gate_end: 0.1,
            normal_gate: 1.0,
            min_inliers: 10,
            cond_threshold: 1e8,
            huber_delta: 0.2,
            solve: SolveSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignStats {
    pub chi2: f64,
    /// (topic, correspondences at the final gate), one entry per slice.
    pub inliers_per_slice: Vec<(String, usize)>,
    /// Mean absolute point residual at the final estimate.
    pub mean_residual: f64,
    /// Total moving points offered by all slices.
    pub moving_points: usize,
    /// Condition number of the scan-only normal matrix.
    pub condition: f64,
}

impl AlignStats {
    pub fn total_inliers(&self) -> usize {
        self.inliers_per_slice.iter().map(|(_, n)| n).sum()
    }
}

fn scan_factors_for(
    tree: &KdTree,
    fixed: &PointCloud2,
    moving: &PointCloud2,
    estimate: &Pose2,
    gate: f64,
    cfg: &AlignConfig,
) -> (Vec<Factor>, usize) {
    let corr = find_correspondences_with_tree(tree, fixed, moving, estimate, gate, cfg.normal_gate);
    let kernel = Some(HuberKernel {
        delta: cfg.huber_delta,
    });
    let mut factors = Vec::with_capacity(corr.len());
    for c in &corr {
        let kind = match fixed.normal(c.fixed_index) {
            Some(normal) => FactorKind::PointLine {
                variable: 0,
                moving: moving.points[c.moving_index],
                fixed: fixed.points[c.fixed_index],
                normal,
            },
            None => FactorKind::PointPair {
                variable: 0,
                moving: moving.points[c.moving_index],
                fixed: fixed.points[c.fixed_index],
            },
        };
        let dim = if matches!(kind, FactorKind::PointLine { .. }) {
            1
        } else {
            2
        };
        factors.push(Factor {
            kind,
            information: DMatrix::identity(dim, dim),
            kernel,
        });
    }
    (factors, corr.len())
}

/// Registers the packet's cues against a fixed scene, starting from
/// `guess`. Scan slices contribute point-to-line (or point-to-point where
/// normals are missing) factors with a shrinking correspondence gate; the
/// odometry slice contributes one pose prior at the guess.
pub fn align(
    fixed_scene: &PropertyContainer,
    packet: &MeasurementPacket,
    guess: &Pose2,
    cfg: &AlignConfig,
) -> Result<(Pose2, AlignStats), FrontendError> {
    assert!(cfg.outer_iterations >= 1);
    // (topic, fixed cloud, prebuilt tree, moving cloud) per usable slice.
    let mut slices = Vec::new();
    let mut moving_points = 0;
    for topic in &cfg.scan_topics {
        let (Ok(fixed), Ok(moving)) = (fixed_scene.get_cloud(topic), packet.cues.get_cloud(topic))
        else {
            continue;
        };
        moving_points += moving.len();
        if fixed.is_empty() || moving.is_empty() {
            continue;
        }
        slices.push((topic, fixed, KdTree::build(&fixed.points), moving));
    }

    let mut estimate = *guess;
    let prior = cfg.use_odometry.then(|| Factor {
        kind: FactorKind::PosePrior {
            variable: 0,
            measurement: *guess,
        },
        information: DMatrix::from_fn(3, 3, |r, c| cfg.odom_information[(r, c)]),
        kernel: None,
    });
    let mut last_chi2 = 0.0;
    for iter in 0..cfg.outer_iterations {
        let frac = if cfg.outer_iterations > 1 {
            iter as f64 / (cfg.outer_iterations - 1) as f64
        } else {
            1.0
        };
        let gate = cfg.gate_start + frac * (cfg.gate_end - cfg.gate_start);
        let mut factors = Vec::new();
        for (_, fixed, tree, moving) in &slices {
            let (f, _) = scan_factors_for(tree, fixed, moving, &estimate, gate, cfg);
            factors.extend(f);
        }
        factors.extend(prior.clone());
        if factors.is_empty() {
            break;
        }
        let mut vars = [Variable {
            id: 0,
            estimate,
            fixed: false,
        }];
        let stats = solve(&mut vars, &factors, &cfg.solve)
            .expect("single anchored variable cannot lack a gauge");
        estimate = vars[0].estimate;
        last_chi2 = *stats.chi2.last().expect("chi2 history is never empty");
    }

    // Final correspondences at the end gate for the reported statistics and
    // the degeneracy check.
    let mut inliers_per_slice: Vec<(String, usize)> = Vec::new();
    let mut h_scan: Matrix3<f64> = Matrix3::zeros();
    let mut residual_sum = 0.0;
    let mut residual_count = 0usize;
    let estimates: BTreeMap<usize, Pose2> = [(0, estimate)].into();
    for topic in &cfg.scan_topics {
        let slice = slices.iter().find(|(t, ..)| *t == topic);
        let Some((_, fixed, tree, moving)) = slice else {
            inliers_per_slice.push((topic.clone(), 0));
            continue;
        };
        let (factors, count) = scan_factors_for(tree, fixed, moving, &estimate, cfg.gate_end, cfg);
        inliers_per_slice.push((topic.clone(), count));
        for f in &factors {
            let (e, jacobians) = residual_and_jacobian(f, &estimates);
            residual_sum += e.norm();
            residual_count += 1;
            let j = &jacobians[0].1;
            let jtj = j.transpose() * &f.information * j;
            for r in 0..3 {
                for c in 0..3 {
                    h_scan[(r, c)] += jtj[(r, c)];
                }
            }
        }
    }
    let eigen = h_scan.symmetric_eigenvalues();
    let (lo, hi) = (
        eigen.iter().cloned().fold(f64::INFINITY, f64::min),
        eigen.iter().cloned().fold(0.0, f64::max),
    );
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let total_inliers: usize = inliers_per_slice.iter().map(|(_, n)| n).sum();
    if !cfg.use_odometry && (total_inliers < cfg.min_inliers || condition > cfg.cond_threshold) {
        return Err(FrontendError::DegenerateAlignment {
            inliers: total_inliers,
            condition,
        });
    }
    Ok((
        estimate,
        AlignStats {
            chi2: last_chi2,
            inliers_per_slice,
            mean_residual: if residual_count > 0 {
                residual_sum / residual_count as f64
            } else {
                0.0
            },
            moving_points,
            condition,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeParams {
    /// Scene decimation cell size.
    pub voxel: f64,
    /// Per-cue point cap after decimation.
    pub cap: usize,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams {
            voxel: 0.05,
            cap: 20_000,
        }
    }
}

fn append_cloud(dst: &mut PointCloud2, src: &PointCloud2) {
    let need_normals = dst.normals.is_some() || src.normals.is_some();
    if need_normals {
        let mut normals = dst
            .normals
            .take()
            .unwrap_or_else(|| vec![None; dst.points.len()]);
        match &src.normals {
            Some(ns) => normals.extend_from_slice(ns),
            None => normals.extend(std::iter::repeat(None).take(src.points.len())),
        }
        dst.normals = Some(normals);
    }
    dst.points.extend_from_slice(&src.points);
}

fn truncate_cloud(cloud: &mut PointCloud2, cap: usize) {
    if cloud.points.len() > cap {
        cloud.points.truncate(cap);
        if let Some(ns) = &mut cloud.normals {
            ns.truncate(cap);
        }
    }
}

/// Transforms the packet's clouds by `pose_in_map` into the local-map frame
/// and folds them into the scene, re-decimating each cue (earlier points
/// win) up to the per-cue cap.
pub fn merge(
    map: &mut LocalMap,
    packet: &MeasurementPacket,
    pose_in_map: &Pose2,
    params: &MergeParams,
) {
    for (name, value) in packet.cues.clone().iter() {
        let PropertyValue::PointCloud2(cloud) = value else {
            continue;
        };
        let transformed = cloud.transformed(pose_in_map);
        let mut scene_cloud = match map.scene.get_cloud(name) {
            Ok(existing) => existing.clone(),
            Err(_) => PointCloud2::from_points(Vec::new()),
        };
        append_cloud(&mut scene_cloud, &transformed);
        let mut decimated = voxel_decimate(&scene_cloud, params.voxel);
        truncate_cloud(&mut decimated, params.cap);
        map.scene
            .put(name, PropertyValue::PointCloud2(decimated))
            .expect("scene cue kinds are stable");
    }
}

/// Per-cue sub-clouds of the scene within `radius` of the query pose.
pub fn clip(map: &LocalMap, pose_in_map: &Pose2, radius: f64) -> PropertyContainer {
    assert!(radius > 0.0);
    let center = pose_in_map.translation();
    let mut out = PropertyContainer::new();
    for (name, value) in map.scene.iter() {
        let PropertyValue::PointCloud2(cloud) = value else {
            continue;
        };
        let mut points = Vec::new();
        let mut normals = cloud.normals.as_ref().map(|_| Vec::new());
        for (i, p) in cloud.points.iter().enumerate() {
            if (p - center).norm() <= radius {
                points.push(*p);
                if let Some(ns) = normals.as_mut() {
                    ns.push(cloud.normals.as_ref().unwrap()[i]);
                }
            }
        }
        out.put(name, PropertyValue::PointCloud2(PointCloud2 { points, normals }))
            .expect("fresh container accepts any kind");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitThresholds {
    pub t_trans: f64,
    pub t_rot: f64,
}

impl Default for SplitThresholds {
    fn default() -> Self {
        SplitThresholds {
            t_trans: 1.0,
            t_rot: 0.5,
        }
    }
}

pub fn should_split(pose_in_map: &Pose2, thresholds: &SplitThresholds) -> bool {
    pose_in_map.translation().norm() > thresholds.t_trans
        || wrap_angle(pose_in_map.theta).abs() > thresholds.t_rot
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub align: AlignConfig,
    pub split: SplitThresholds,
    pub merge: MergeParams,
    /// Radius of the scene clip the aligner registers against.
    pub clip_radius: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            align: AlignConfig::default(),
            split: SplitThresholds::default(),
            merge: MergeParams::default(),
            clip_radius: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackerEvent {
    PoseUpdate {
        timestamp: f64,
        pose_in_map: Pose2,
        world_pose: Pose2,
        /// Set when alignment failed and the odometry guess was kept.
        degenerate: bool,
        stats: Option<AlignStats>,
    },
    /// A local map is complete; `closing_relative` is the motion from its
    /// origin to the origin of the map that replaces it.
    MapFinished {
        map: LocalMap,
        closing_relative: Pose2,
    },
}

/// Single-threaded state machine: one packet fully processed per call.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    current: Option<LocalMap>,
    pose_in_map: Pose2,
    next_id: u64,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Tracker {
            cfg,
            current: None,
            pose_in_map: Pose2::identity(),
            next_id: 0,
        }
    }

    pub fn current_world_pose(&self) -> Option<Pose2> {
        self.current
            .as_ref()
            .map(|m| m.origin.compose(&self.pose_in_map))
    }

    pub fn current_map(&self) -> Option<&LocalMap> {
        self.current.as_ref()
    }

    fn start_map(&mut self, origin: Pose2, packet: &MeasurementPacket) -> LocalMap {
        let mut map = LocalMap {
            id: self.next_id,
            origin,
            scene: PropertyContainer::new(),
            trajectory: vec![(packet.timestamp, Pose2::identity())],
        };
        self.next_id += 1;
        merge(&mut map, packet, &Pose2::identity(), &self.cfg.merge);
        self.pose_in_map = Pose2::identity();
        map
    }

    pub fn process(&mut self, packet: &MeasurementPacket) -> Vec<TrackerEvent> {
        let mut events = Vec::new();
        let Some(mut map) = self.current.take() else {
            let map = self.start_map(Pose2::identity(), packet);
            events.push(TrackerEvent::PoseUpdate {
                timestamp: packet.timestamp,
                pose_in_map: Pose2::identity(),
                world_pose: map.origin,
                degenerate: false,
                stats: None,
            });
            self.current = Some(map);
            return events;
        };

        let odom_delta = packet
            .cues
            .get_pose2(ODOM_DELTA_CUE)
            .unwrap_or_else(|_| Pose2::identity());
        let guess = self.pose_in_map.compose(&odom_delta);
        let clipped = clip(&map, &guess, self.cfg.clip_radius);
        let (degenerate, stats) = match align(&clipped, packet, &guess, &self.cfg.align) {
            Ok((pose, stats)) => {
                self.pose_in_map = pose;
                (false, Some(stats))
            }
            Err(FrontendError::DegenerateAlignment { .. }) => {
                self.pose_in_map = guess;
                (true, None)
            }
        };

        if should_split(&self.pose_in_map, &self.cfg.split) {
            let closing_relative = self.pose_in_map;
            let origin = map.origin.compose(&closing_relative);
            events.push(TrackerEvent::MapFinished {
                map,
                closing_relative,
            });
            map = self.start_map(origin, packet);
        } else {
            if !degenerate {
                merge(&mut map, packet, &self.pose_in_map, &self.cfg.merge);
            }
            map.trajectory.push((packet.timestamp, self.pose_in_map));
        }
        events.push(TrackerEvent::PoseUpdate {
            timestamp: packet.timestamp,
            pose_in_map: self.pose_in_map,
            world_pose: map.origin.compose(&self.pose_in_map),
            degenerate,
            stats,
        });
        self.current = Some(map);
        events
    }

    /// Flushes the map under construction at end of data.
    pub fn finish(&mut self) -> Option<LocalMap> {
        self.pose_in_map = Pose2::identity();
        self.current.take()
    }
}
