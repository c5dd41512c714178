//! Deterministic 2D simulator: line-segment worlds, a differential-drive
//! robot with one or two rangefinders and noisy wheel odometry. The output
//! is a measurement log plus a TUM-style ground-truth trajectory, and is a
//! pure function of (world, robot, path, seed).

use crate::dataset::{LaserScan, Measurement, OdometryReading};
use crate::eval::Trajectory;
use crate::geometry::{wrap_angle, Pose2};
use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub segments: Vec<(Vector2<f64>, Vector2<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub topic: String,
    pub extrinsics: Pose2,
    pub beam_count: usize,
    pub fov: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub sigma_range: f64,
}

/// Per-tick odometry noise, scaled by the distance and rotation covered in
/// the tick: xy ~ N(0, (sigma_xy_per_m * dd)^2),
/// theta ~ N(0, (sigma_theta_per_rad * |dtheta| + sigma_theta_per_m * dd)^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdomNoise {
    pub sigma_xy_per_m: f64,
    pub sigma_theta_per_rad: f64,
    pub sigma_theta_per_m: f64,
}

impl OdomNoise {
    pub fn default_noise() -> Self {
        OdomNoise {
            sigma_xy_per_m: 0.02,
            sigma_theta_per_rad: 0.02,
            sigma_theta_per_m: 0.005,
        }
    }

    pub fn zero() -> Self {
        OdomNoise {
            sigma_xy_per_m: 0.0,
            sigma_theta_per_rad: 0.0,
            sigma_theta_per_m: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub sensors: Vec<SensorModel>,
    pub odom_noise: OdomNoise,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionCommand {
    pub v: f64,
    pub omega: f64,
    pub duration: f64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("spawn pose ({0:.2}, {1:.2}) is inside or touching a wall")]
    SpawnInWall(f64, f64),
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Exact arc integration of unicycle kinematics.
pub fn step_unicycle(pose: &Pose2, v: f64, omega: f64, dt: f64) -> Pose2 {
    assert!(dt > 0.0);
    if omega.abs() < 1e-9 {
        Pose2::new(
            pose.x + v * dt * pose.theta.cos(),
            pose.y + v * dt * pose.theta.sin(),
            pose.theta,
        )
    } else {
        let theta_new = pose.theta + omega * dt;
        Pose2::new(
            pose.x + v / omega * (theta_new.sin() - pose.theta.sin()),
            pose.y + v / omega * (pose.theta.cos() - theta_new.cos()),
            wrap_angle(theta_new),
        )
    }
}

/// Minimum positive ray-segment intersection distance, or infinity on miss
/// (including anything beyond `range_max`).
pub fn ray_cast(world: &World, origin: &Vector2<f64>, direction: f64, range_max: f64) -> f64 {
    let d = Vector2::new(direction.cos(), direction.sin());
    let mut best = f64::INFINITY;
    for (a, b) in &world.segments {
        let e = b - a;
        let denom = d.x * e.y - d.y * e.x;
        if denom.abs() < 1e-12 {
            continue;
        }
        let ao = a - origin;
        let t = (ao.x * e.y - ao.y * e.x) / denom;
        let s = (ao.x * d.y - ao.y * d.x) / denom;
        if t > 1e-9 && (0.0..=1.0).contains(&s) && t < best {
            best = t;
        }
    }
    if best <= range_max {
        best
    } else {
        f64::INFINITY
    }
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let e = b - a;
    let len2 = e.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&e) / len2).clamp(0.0, 1.0);
    (p - (a + e * t)).norm()
}

/// Distance from a point to the nearest wall.
pub fn clearance(world: &World, p: &Vector2<f64>) -> f64 {
    world
        .segments
        .iter()
        .map(|(a, b)| point_segment_distance(p, a, b))
        .fold(f64::INFINITY, f64::min)
}

/// Runs the robot along `path` from `spawn` and returns the measurement log
/// together with the ground-truth trajectory. Byte-identical output for the
/// same inputs and seed.
pub fn simulate(
    world: &World,
    robot: &RobotModel,
    spawn: &Pose2,
    path: &[MotionCommand],
    seed: u64,
) -> Result<(Vec<Measurement>, Trajectory), SimError> {
    assert!(robot.rate > 0.0);
    assert!(!world.segments.is_empty());
    for c in path {
        assert!(c.duration > 0.0, "command durations must be positive");
    }
    if clearance(world, &spawn.translation()) < 0.1 {
        return Err(SimError::SpawnInWall(spawn.x, spawn.y));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / robot.rate;
    let total: f64 = path.iter().map(|c| c.duration).sum();
    let ticks = (total * robot.rate).round() as usize;

    let mut gt = *spawn;
    let mut odom = *spawn;
    let mut cmd_index = 0usize;
    let mut cmd_left = path.first().map(|c| c.duration).unwrap_or(0.0);

    let mut out = Vec::new();
    let mut trajectory = Trajectory::default();

    for i in 0..=ticks {
        let t = i as f64 * dt;
        if i > 0 {
            // Advance one tick, splitting across command boundaries so the
            // noiseless odometry integrator replays the exact same steps.
            let mut tick_left = dt;
            let mut dd = 0.0;
            let mut dtheta = 0.0;
            while tick_left > 1e-12 && cmd_index < path.len() {
                let cmd = path[cmd_index];
                let step = tick_left.min(cmd_left);
                gt = step_unicycle(&gt, cmd.v, cmd.omega, step);
                odom = step_unicycle(&odom, cmd.v, cmd.omega, step);
                dd += cmd.v.abs() * step;
                dtheta += cmd.omega.abs() * step;
                tick_left -= step;
                cmd_left -= step;
                if cmd_left <= 1e-12 {
                    cmd_index += 1;
                    cmd_left = path.get(cmd_index).map(|c| c.duration).unwrap_or(0.0);
                }
            }
            let n = robot.odom_noise;
            let sigma_xy = n.sigma_xy_per_m * dd;
            let sigma_theta = n.sigma_theta_per_rad * dtheta + n.sigma_theta_per_m * dd;
            let ex: f64 = StandardNormal.sample(&mut rng);
            let ey: f64 = StandardNormal.sample(&mut rng);
            let et: f64 = StandardNormal.sample(&mut rng);
            odom = Pose2::new(
                odom.x + ex * sigma_xy,
                odom.y + ey * sigma_xy,
                wrap_angle(odom.theta + et * sigma_theta),
            );
        }
        trajectory.push(t, gt);
        out.push(Measurement::Odometry(OdometryReading {
            timestamp: t,
            pose: odom,
        }));
        for sensor in &robot.sensors {
            let sensor_pose = gt.compose(&sensor.extrinsics);
            let origin = sensor_pose.translation();
            let angle_min = -sensor.fov / 2.0;
            let increment = sensor.fov / (sensor.beam_count - 1) as f64;
            let mut ranges = Vec::with_capacity(sensor.beam_count);
            for k in 0..sensor.beam_count {
                let direction = sensor_pose.theta + angle_min + k as f64 * increment;
                let hit = ray_cast(world, &origin, direction, sensor.range_max);
                let noise: f64 = StandardNormal.sample(&mut rng);
                let r = hit + noise * sensor.sigma_range;
                ranges.push(if r.is_finite() && r >= sensor.range_min && r <= sensor.range_max {
                    r
                } else {
                    f64::INFINITY
                });
            }
            out.push(Measurement::Scan(LaserScan {
                timestamp: t,
                topic: sensor.topic.clone(),
                angle_min,
                angle_increment: increment,
                range_min: sensor.range_min,
                range_max: sensor.range_max,
                ranges,
            }));
        }
    }
    Ok((out, trajectory))
}

fn rect(segments: &mut Vec<(Vector2<f64>, Vector2<f64>)>, x0: f64, y0: f64, x1: f64, y1: f64) {
    let c = [
        Vector2::new(x0, y0),
        Vector2::new(x1, y0),
        Vector2::new(x1, y1),
        Vector2::new(x0, y1),
    ];
    for i in 0..4 {
        segments.push((c[i], c[(i + 1) % 4]));
    }
}

fn seg(x0: f64, y0: f64, x1: f64, y1: f64) -> (Vector2<f64>, Vector2<f64>) {
    (Vector2::new(x0, y0), Vector2::new(x1, y1))
}

/// Bundled worlds: "box", "office", "corridor", "two_room".
pub fn world_preset(name: &str) -> Option<World> {
    let mut segments = Vec::new();
    match name {
        // 10x10 m empty square room.
        "box" => rect(&mut segments, -5.0, -5.0, 5.0, 5.0),
        // Outer walls with a central block, leaving a 4 m rectangular
        // corridor loop; exercises loop closure.
        "office" => {
            rect(&mut segments, -10.0, -7.0, 10.0, 7.0);
            rect(&mut segments, -6.0, -3.0, 6.0, 3.0);
        }
        // A small room feeding a long featureless corridor; degenerate for
        // scan matching with a forward sensor alone.
        "corridor" => {
            segments.push(seg(-8.0, -3.0, -8.0, 3.0));
            segments.push(seg(-8.0, 3.0, -2.0, 3.0));
            segments.push(seg(-8.0, -3.0, -2.0, -3.0));
            segments.push(seg(-2.0, 1.0, -2.0, 3.0));
            segments.push(seg(-2.0, -3.0, -2.0, -1.0));
            segments.push(seg(-2.0, 1.0, 14.0, 1.0));
            segments.push(seg(-2.0, -1.0, 14.0, -1.0));
            segments.push(seg(14.0, -1.0, 14.0, 1.0));
        }
        // Two rooms joined by a door in a double wall, so scans only see
        // the other room through the 3 m opening.
        "two_room" => {
            rect(&mut segments, -8.0, -4.0, 8.0, 4.0);
            for x in [-0.1, 0.1] {
                segments.push(seg(x, -4.0, x, -1.5));
                segments.push(seg(x, 1.5, x, 4.0));
            }
        }
        _ => return None,
    }
    Some(World { segments })
}

fn straight(d: f64) -> MotionCommand {
    MotionCommand {
        v: 1.0,
        omega: 0.0,
        duration: d,
    }
}

/// In-place turn of `angle` radians at pi/4 rad/s.
fn turn(angle: f64) -> MotionCommand {
    MotionCommand {
        v: 0.0,
        omega: std::f64::consts::FRAC_PI_4 * angle.signum(),
        duration: angle.abs() / std::f64::consts::FRAC_PI_4,
    }
}

/// Bundled paths matched to the worlds of [`world_preset`]; returns the
/// spawn pose and command sequence.
pub fn path_preset(name: &str) -> Option<(Pose2, Vec<MotionCommand>)> {
    use std::f64::consts::{FRAC_PI_2, PI};
    match name {
        // Two laps of a 20 m circle (40 m total, closed by construction).
        "box" => Some((
            Pose2::new(10.0 / PI, 0.0, FRAC_PI_2),
            vec![MotionCommand {
                v: 1.0,
                omega: PI / 10.0,
                duration: 40.0,
            }],
        )),
        // One 52 m lap of the corridor loop plus an 8 m revisit leg.
        "office" => Some((
            Pose2::new(8.0, 0.0, FRAC_PI_2),
            vec![
                straight(5.0),
                turn(FRAC_PI_2),
                straight(16.0),
                turn(FRAC_PI_2),
                straight(10.0),
                turn(FRAC_PI_2),
                straight(16.0),
                turn(FRAC_PI_2),
                straight(10.0),
                turn(FRAC_PI_2),
                straight(3.0),
            ],
        )),
        // Out of the room and straight down the corridor.
        "corridor" => Some((Pose2::new(-5.0, 0.0, 0.0), vec![straight(16.0)])),
        // Lap of room A, through the door, survey room B, return and
        // revisit the start of the lap.
        "two_room" => Some((
            Pose2::new(-4.0, -2.0, 0.0),
            vec![
                straight(2.0),
                turn(FRAC_PI_2),
                straight(4.0),
                turn(FRAC_PI_2),
                straight(4.0),
                turn(FRAC_PI_2),
                straight(4.0),
                turn(FRAC_PI_2),
                straight(2.0),
                straight(2.0),
                turn(FRAC_PI_2),
                straight(2.0),
                turn(-FRAC_PI_2),
                straight(6.0),
                turn(2.0 * PI),
                turn(PI),
                straight(8.0),
                turn(FRAC_PI_2),
                straight(2.0),
            ],
        )),
        _ => None,
    }
}

/// Front rangefinder plus optionally a rear one mounted at (0, 0, pi);
/// 181 beams over a pi field of view at 10 Hz.
pub fn robot_preset(dual: bool, with_noise: bool) -> RobotModel {
    let sensor = |topic: &str, extrinsics: Pose2| SensorModel {
        topic: topic.into(),
        extrinsics,
        beam_count: 181,
        fov: std::f64::consts::PI,
        range_min: 0.05,
        range_max: 12.0,
        sigma_range: if with_noise { 0.01 } else { 0.0 },
    };
    let mut sensors = vec![sensor("front_scan", Pose2::identity())];
    if dual {
        sensors.push(sensor("rear_scan", Pose2::new(0.0, 0.0, std::f64::consts::PI)));
    }
    RobotModel {
        sensors,
        odom_noise: if with_noise {
            OdomNoise::default_noise()
        } else {
            OdomNoise::zero()
        },
        rate: 10.0,
    }
}

/// World file: one JSON array `[x1, y1, x2, y2]` per line.
pub fn write_world(world: &World) -> String {
    let mut out = String::new();
    for (a, b) in &world.segments {
        out.push_str(
            &serde_json::to_string(&[a.x, a.y, b.x, b.y]).expect("segment encoding cannot fail"),
        );
        out.push('\n');
    }
    out
}

pub fn parse_world(text: &str) -> Result<World, SimError> {
    let mut segments = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: [f64; 4] = serde_json::from_str(line)
            .map_err(|e| SimError::Parse(i + 1, e.to_string()))?;
        if !v.iter().all(|x| x.is_finite()) {
            return Err(SimError::Parse(i + 1, "non-finite endpoint".into()));
        }
        segments.push(seg(v[0], v[1], v[2], v[3]));
    }
    if segments.is_empty() {
        return Err(SimError::Parse(0, "world has no segments".into()));
    }
    Ok(World { segments })
}

/// Path file: an optional `{"spawn":[x,y,theta]}` first line, then one
/// `{"v":..,"omega":..,"duration":..}` per line.
pub fn write_path(spawn: &Pose2, path: &[MotionCommand]) -> String {
    let mut out = format!(
        "{}\n",
        serde_json::json!({ "spawn": [spawn.x, spawn.y, spawn.theta] })
    );
    for c in path {
        out.push_str(&format!(
            "{}\n",
            serde_json::json!({ "v": c.v, "omega": c.omega, "duration": c.duration })
        ));
    }
    out
}

pub fn parse_path(text: &str) -> Result<(Pose2, Vec<MotionCommand>), SimError> {
    let mut spawn = Pose2::identity();
    let mut path = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| SimError::Parse(i + 1, e.to_string()))?;
        if let Some(s) = v.get("spawn") {
            let s: [f64; 3] = serde_json::from_value(s.clone())
                .map_err(|e| SimError::Parse(i + 1, e.to_string()))?;
            spawn = Pose2::new(s[0], s[1], s[2]);
            continue;
        }
        let get = |k: &str| -> Result<f64, SimError> {
            v.get(k)
                .and_then(|x| x.as_f64())
                .ok_or_else(|| SimError::Parse(i + 1, format!("missing '{k}'")))
        };
        let c = MotionCommand {
            v: get("v")?,
            omega: get("omega")?,
            duration: get("duration")?,
        };
        if c.duration <= 0.0 {
            return Err(SimError::Parse(i + 1, "duration must be positive".into()));
        }
        path.push(c);
    }
    Ok((spawn, path))
}

/// Robot file: a header `{"rate":..,"odom_noise":[s_xy, s_th_rad, s_th_m]}`
/// followed by one sensor per line:
/// `{"topic":..,"extrinsics":[x,y,theta],"beams":..,"fov":..,"range":[min,max],"sigma_range":..}`.
pub fn write_robot(robot: &RobotModel) -> String {
    let n = &robot.odom_noise;
    let mut out = format!(
        "{}\n",
        serde_json::json!({
            "rate": robot.rate,
            "odom_noise": [n.sigma_xy_per_m, n.sigma_theta_per_rad, n.sigma_theta_per_m],
        })
    );
    for s in &robot.sensors {
        out.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "topic": s.topic,
                "extrinsics": [s.extrinsics.x, s.extrinsics.y, s.extrinsics.theta],
                "beams": s.beam_count,
                "fov": s.fov,
                "range": [s.range_min, s.range_max],
                "sigma_range": s.sigma_range,
            })
        ));
    }
    out
}

pub fn parse_robot(text: &str) -> Result<RobotModel, SimError> {
    let mut header: Option<(f64, OdomNoise)> = None;
    let mut sensors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| SimError::Parse(i + 1, msg);
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| SimError::Parse(i + 1, e.to_string()))?;
        if header.is_none() {
            let rate = v
                .get("rate")
                .and_then(|x| x.as_f64())
                .filter(|r| r.is_finite() && *r > 0.0)
                .ok_or_else(|| err("header needs a positive 'rate'".into()))?;
            let n: [f64; 3] = serde_json::from_value(
                v.get("odom_noise")
                    .ok_or_else(|| err("header needs 'odom_noise'".into()))?
                    .clone(),
            )
            .map_err(|e| err(e.to_string()))?;
            header = Some((
                rate,
                OdomNoise {
                    sigma_xy_per_m: n[0],
                    sigma_theta_per_rad: n[1],
                    sigma_theta_per_m: n[2],
                },
            ));
            continue;
        }
        let f = |k: &str| -> Result<f64, SimError> {
            v.get(k)
                .and_then(|x| x.as_f64())
                .ok_or_else(|| SimError::Parse(i + 1, format!("missing '{k}'")))
        };
        let ex: [f64; 3] = serde_json::from_value(
            v.get("extrinsics")
                .ok_or_else(|| err("missing 'extrinsics'".into()))?
                .clone(),
        )
        .map_err(|e| err(e.to_string()))?;
        let range: [f64; 2] = serde_json::from_value(
            v.get("range")
                .ok_or_else(|| err("missing 'range'".into()))?
                .clone(),
        )
        .map_err(|e| err(e.to_string()))?;
        let beams = f("beams")? as usize;
        if beams < 2 {
            return Err(err("sensor needs at least 2 beams".into()));
        }
        sensors.push(SensorModel {
            topic: v
                .get("topic")
                .and_then(|x| x.as_str())
                .ok_or_else(|| err("missing 'topic'".into()))?
                .to_string(),
            extrinsics: Pose2::new(ex[0], ex[1], ex[2]),
            beam_count: beams,
            fov: f("fov")?,
            range_min: range[0],
            range_max: range[1],
            sigma_range: f("sigma_range")?,
        });
    }
    let (rate, odom_noise) = header.ok_or_else(|| SimError::Parse(0, "empty robot file".into()))?;
    if sensors.is_empty() {
        return Err(SimError::Parse(0, "robot has no sensors".into()));
    }
    Ok(RobotModel {
        sensors,
        odom_noise,
        rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::write_dataset;
    use rand::Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn unicycle_examples() {
        let p = step_unicycle(&Pose2::identity(), 1.0, 0.0, 0.1);
        assert!((p.x - 0.1).abs() < 1e-15 && p.y == 0.0 && p.theta == 0.0);

        let p = step_unicycle(&Pose2::identity(), 0.0, 1.0, PI);
        assert!(p.x.abs() < 1e-15 && p.y.abs() < 1e-15);
        assert!((p.theta - PI).abs() < 1e-12);

        // Quarter arc of radius 1.
        let p = step_unicycle(&Pose2::identity(), 1.0, 1.0, FRAC_PI_2);
        assert!((p.x - 1.0).abs() < 1e-12);
        assert!((p.y - 1.0).abs() < 1e-12);
        assert!((p.theta - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn ray_cast_wall_examples() {
        let world = World {
            segments: vec![seg(2.0, -5.0, 2.0, 5.0)],
        };
        let o = Vector2::new(0.0, 0.0);
        assert!((ray_cast(&world, &o, 0.0, 12.0) - 2.0).abs() < 1e-12);
        assert!(ray_cast(&world, &o, PI, 12.0).is_infinite());
    }

    /// Independent oracle: intersect via homogeneous line coordinates and
    /// filter by ray direction and segment bounds.
    fn brute_force_cast(
        world: &World,
        origin: &Vector2<f64>,
        direction: f64,
        range_max: f64,
    ) -> f64 {
        let d = Vector2::new(direction.cos(), direction.sin());
        let far = origin + d * 1e6;
        let mut best = f64::INFINITY;
        for (a, b) in &world.segments {
            // Line through origin/far as (a, b, c) with ax + by + c = 0.
            let l1 = (
                far.y - origin.y,
                origin.x - far.x,
                far.x * origin.y - origin.x * far.y,
            );
            let l2 = (b.y - a.y, a.x - b.x, b.x * a.y - a.x * b.y);
            let w = l1.0 * l2.1 - l1.1 * l2.0;
            if w.abs() < 1e-9 {
                continue;
            }
            let x = (l1.1 * l2.2 - l1.2 * l2.1) / w;
            let y = (l1.2 * l2.0 - l1.0 * l2.2) / w;
            let p = Vector2::new(x, y);
            let along = (p - origin).dot(&d);
            let on_segment = point_segment_distance(&p, a, b) < 1e-6;
            if along > 1e-6 && on_segment {
                best = best.min(along);
            }
        }
        if best <= range_max {
            best
        } else {
            f64::INFINITY
        }
    }

    #[test]
    fn ray_cast_matches_brute_force_oracle() {
        let world = world_preset("office").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let o = Vector2::new(rng.gen_range(-9.0..9.0), rng.gen_range(-6.5..6.5));
            let dir = rng.gen_range(-PI..PI);
            let fast = ray_cast(&world, &o, dir, 12.0);
            let slow = brute_force_cast(&world, &o, dir, 12.0);
            if fast.is_finite() || slow.is_finite() {
                assert!(
                    (fast - slow).abs() < 1e-6,
                    "mismatch at {o:?} dir {dir}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn noiseless_odometry_equals_ground_truth() {
        let world = world_preset("box").unwrap();
        let (spawn, path) = path_preset("box").unwrap();
        let robot = robot_preset(true, false);
        let (measurements, gt) = simulate(&world, &robot, &spawn, &path, 3).unwrap();
        let mut checked = 0;
        let mut gt_iter = gt.samples.iter();
        for m in &measurements {
            if let Measurement::Odometry(o) = m {
                let (t, pose) = gt_iter.next().unwrap();
                assert_eq!(o.timestamp, *t);
                assert_eq!(o.pose, *pose, "odometry diverged at t={t}");
                checked += 1;
            }
        }
        assert_eq!(checked, gt.len());
    }

    #[test]
    fn box_loop_closes_and_counts_packets() {
        let world = world_preset("box").unwrap();
        let (spawn, path) = path_preset("box").unwrap();
        let robot = robot_preset(false, true);
        let (measurements, gt) = simulate(&world, &robot, &spawn, &path, 1).unwrap();
        let scans = measurements
            .iter()
            .filter(|m| matches!(m, Measurement::Scan(_)))
            .count();
        assert!((scans as i64 - 400).unsigned_abs() <= 1, "{scans} packets");
        let (_, last) = gt.samples.last().unwrap();
        assert!((last.x - spawn.x).abs() < 1e-9);
        assert!((last.y - spawn.y).abs() < 1e-9);
        assert!(wrap_angle(last.theta - spawn.theta).abs() < 1e-9);
    }

    #[test]
    fn same_seed_byte_identical() {
        let world = world_preset("office").unwrap();
        let (spawn, path) = path_preset("office").unwrap();
        let robot = robot_preset(true, true);
        let (m1, _) = simulate(&world, &robot, &spawn, &path, 42).unwrap();
        let (m2, _) = simulate(&world, &robot, &spawn, &path, 42).unwrap();
        assert_eq!(write_dataset(&m1), write_dataset(&m2));
        let (m3, _) = simulate(&world, &robot, &spawn, &path, 43).unwrap();
        assert_ne!(write_dataset(&m1), write_dataset(&m3));
    }

    #[test]
    fn ranges_within_bounds_or_miss() {
        let world = world_preset("corridor").unwrap();
        let (spawn, path) = path_preset("corridor").unwrap();
        let robot = robot_preset(true, true);
        let (measurements, _) = simulate(&world, &robot, &spawn, &path, 5).unwrap();
        let mut last_t = f64::NEG_INFINITY;
        for m in &measurements {
            assert!(m.timestamp() >= last_t);
            last_t = m.timestamp();
            if let Measurement::Scan(s) = m {
                for &r in &s.ranges {
                    assert!(!r.is_finite() || (s.range_min..=s.range_max).contains(&r));
                }
            }
        }
    }

    #[test]
    fn spawn_in_wall_rejected() {
        let world = world_preset("box").unwrap();
        let robot = robot_preset(false, false);
        let spawn = Pose2::new(5.0, 0.0, 0.0);
        let r = simulate(&world, &robot, &spawn, &[straight(1.0)], 0);
        assert!(matches!(r, Err(SimError::SpawnInWall(_, _))));
    }

    #[test]
    fn preset_paths_stay_in_free_space() {
        for name in ["box", "office", "corridor", "two_room"] {
            let world = world_preset(name).unwrap();
            let (spawn, path) = path_preset(name).unwrap();
            let robot = robot_preset(false, false);
            let (_, gt) = simulate(&world, &robot, &spawn, &path, 0)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            for (t, p) in &gt.samples {
                let c = clearance(&world, &p.translation());
                assert!(c > 0.5, "{name}: clearance {c:.2} at t={t}");
            }
        }
    }

    #[test]
    fn world_and_path_files_round_trip() {
        let world = world_preset("two_room").unwrap();
        let back = parse_world(&write_world(&world)).unwrap();
        assert_eq!(world, back);

        let (spawn, path) = path_preset("office").unwrap();
        let (s2, p2) = parse_path(&write_path(&spawn, &path)).unwrap();
        assert_eq!(spawn, s2);
        assert_eq!(path, p2);
    }

    #[test]
    fn robot_file_round_trips() {
        let robot = robot_preset(true, true);
        let back = parse_robot(&write_robot(&robot)).unwrap();
        assert_eq!(robot, back);

        assert!(parse_robot("").is_err());
        assert!(parse_robot("{\"rate\":10.0,\"odom_noise\":[0,0,0]}\n").is_err());
    }
}
