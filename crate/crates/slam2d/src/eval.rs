//! Trajectory metrics (ATE, RPE), rigid trajectory alignment, TUM-format
//! trajectory IO and SVG map rendering.

use crate::geometry::{wrap_angle, Pose2};
use nalgebra::Vector2;
use thiserror::Error;

/// Timestamped pose sequence; timestamps strictly increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<(f64, Pose2)>,
}

impl Trajectory {
    pub fn push(&mut self, t: f64, pose: Pose2) {
        if let Some((last, _)) = self.samples.last() {
            assert!(t > *last, "timestamps must be strictly increasing");
        }
        self.samples.push((t, pose));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sum of distances between consecutive positions.
    pub fn length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].1.translation() - w[0].1.translation()).norm())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub ate_rmse: f64,
    pub rpe_rmse_trans: f64,
    pub rpe_rmse_rot: f64,
    pub frame_rate: f64,
    pub trajectory_length: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no sample pairs within the association window")]
    NoPairs,
    #[error("trajectory alignment is degenerate (coincident points)")]
    DegenerateAlignment,
    #[error("need at least {0} pairs")]
    TooFewPairs(usize),
    #[error("line {0}: malformed trajectory line")]
    Parse(usize),
}

/// Pairs each estimate sample with the nearest-in-time ground-truth sample
/// within `max_dt`; unmatched estimates are dropped.
pub fn associate(
    gt: &Trajectory,
    est: &Trajectory,
    max_dt: f64,
) -> Result<Vec<(Pose2, Pose2)>, EvalError> {
    assert!(max_dt > 0.0);
    let mut pairs = Vec::new();
    for &(t, est_pose) in &est.samples {
        let nearest = gt
            .samples
            .iter()
            .min_by(|a, b| (a.0 - t).abs().partial_cmp(&(b.0 - t).abs()).unwrap());
        if let Some(&(tg, gt_pose)) = nearest {
            if (tg - t).abs() <= max_dt {
                pairs.push((gt_pose, est_pose));
            }
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    Ok(pairs)
}

/// Closed-form SE(2) transform minimizing sum ||T * p_est - p_gt||^2
/// (centroid + cross-covariance angle, no scale).
pub fn align_trajectories(pairs: &[(Pose2, Pose2)]) -> Result<Pose2, EvalError> {
    if pairs.len() < 2 {
        return Err(EvalError::TooFewPairs(2));
    }
    let n = pairs.len() as f64;
    let mut gc = Vector2::zeros();
    let mut ec = Vector2::zeros();
    for (g, e) in pairs {
        gc += g.translation();
        ec += e.translation();
    }
    gc /= n;
    ec /= n;
    let mut cross = 0.0;
    let mut dot = 0.0;
    let mut spread = 0.0;
    for (g, e) in pairs {
        let dg = g.translation() - gc;
        let de = e.translation() - ec;
        cross += de.x * dg.y - de.y * dg.x;
        dot += de.dot(&dg);
        spread += de.norm_squared();
    }
    if spread < 1e-18 {
        return Err(EvalError::DegenerateAlignment);
    }
    let theta = cross.atan2(dot);
    let rot = Pose2::new(0.0, 0.0, theta);
    let t = gc - rot.rotate_vector(&ec);
    Ok(Pose2::new(t.x, t.y, theta))
}

/// RMSE of position error after applying `alignment` to the estimates.
pub fn ate(pairs: &[(Pose2, Pose2)], alignment: &Pose2) -> f64 {
    assert!(!pairs.is_empty());
    let sum: f64 = pairs
        .iter()
        .map(|(g, e)| {
            (alignment.transform_point(&e.translation()) - g.translation()).norm_squared()
        })
        .sum();
    (sum / pairs.len() as f64).sqrt()
}

/// Relative pose error over a step of `delta` pairs: RMSE of the
/// translation norm and rotation magnitude of
/// (gt_i^-1 gt_{i+d})^-1 (est_i^-1 est_{i+d}).
pub fn rpe(pairs: &[(Pose2, Pose2)], delta: usize) -> Result<(f64, f64), EvalError> {
    assert!(delta >= 1);
    if pairs.len() < delta + 1 {
        return Err(EvalError::TooFewPairs(delta + 1));
    }
    let mut sum_t = 0.0;
    let mut sum_r = 0.0;
    let count = pairs.len() - delta;
    for i in 0..count {
        let (g0, e0) = &pairs[i];
        let (g1, e1) = &pairs[i + delta];
        let dg = g0.inverse().compose(g1);
        let de = e0.inverse().compose(e1);
        let err = dg.inverse().compose(&de);
        sum_t += err.translation().norm_squared();
        sum_r += wrap_angle(err.theta).powi(2);
    }
    Ok(((sum_t / count as f64).sqrt(), (sum_r / count as f64).sqrt()))
}

/// TUM line format: `t x y 0 0 0 sin(theta/2) cos(theta/2)`.
pub fn write_tum(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    for &(t, pose) in &trajectory.samples {
        let half = pose.theta * 0.5;
        out.push_str(&format!(
            "{} {} {} 0 0 0 {} {}\n",
            t,
            pose.x,
            pose.y,
            half.sin(),
            half.cos()
        ));
    }
    out
}

pub fn parse_tum(text: &str) -> Result<Trajectory, EvalError> {
    let mut trajectory = Trajectory::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| EvalError::Parse(i + 1))?;
        if fields.len() != 8 {
            return Err(EvalError::Parse(i + 1));
        }
        let theta = 2.0 * fields[6].atan2(fields[7]);
        trajectory.push(fields[0], Pose2::new(fields[1], fields[2], theta));
    }
    Ok(trajectory)
}

/// Scene points plus the trajectory polyline as a standalone SVG document.
pub fn render_map_svg(points: &[Vector2<f64>], trajectory: &Trajectory) -> String {
    let mut min = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let track: Vec<Vector2<f64>> = trajectory
        .samples
        .iter()
        .map(|(_, p)| p.translation())
        .collect();
    for p in points.iter().chain(track.iter()) {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    if !min.x.is_finite() {
        min = Vector2::new(-1.0, -1.0);
        max = Vector2::new(1.0, 1.0);
    }
    let pad = 1.0;
    let w = max.x - min.x + 2.0 * pad;
    let h = max.y - min.y + 2.0 * pad;
    let scale = 60.0;
    // SVG y grows downward; flip so the map keeps its usual orientation.
    let tx = |p: &Vector2<f64>| {
        (
            (p.x - min.x + pad) * scale,
            (max.y - p.y + pad) * scale,
        )
    };
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.2} {:.2}\">\n",
        w * scale,
        h * scale,
        w * scale,
        h * scale
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for p in points {
        let (x, y) = tx(p);
        svg.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.2\" fill=\"#444\"/>\n"
        ));
    }
    if !track.is_empty() {
        let coords: Vec<String> = track
            .iter()
            .map(|p| {
                let (x, y) = tx(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#d33\" stroke-width=\"2\"/>\n",
            coords.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
