//! Measurement log format: JSON-lines, one measurement per line, sorted by
//! timestamp. Invalid ranges are encoded as `null` and surface as
//! non-finite values in memory.

use crate::geometry::Pose2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct LaserScan {
    pub timestamp: f64,
    pub topic: String,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub ranges: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryReading {
    pub timestamp: f64,
    pub pose: Pose2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Measurement {
    Scan(LaserScan),
    Odometry(OdometryReading),
}

impl Measurement {
    pub fn timestamp(&self) -> f64 {
        match self {
            Measurement::Scan(s) => s.timestamp,
            Measurement::Odometry(o) => o.timestamp,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("line {line}: unknown measurement type '{kind}'")]
    UnknownType { line: usize, kind: String },
    #[error("dataset not sorted by timestamp at line {0}")]
    Unsorted(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct ScanRecord {
    #[serde(rename = "type")]
    kind: String,
    topic: String,
    t: f64,
    angle_min: f64,
    angle_increment: f64,
    range_min: f64,
    range_max: f64,
    ranges: Vec<Option<f64>>,
}

#[derive(Serialize, Deserialize)]
struct OdometryRecord {
    #[serde(rename = "type")]
    kind: String,
    t: f64,
    x: f64,
    y: f64,
    theta: f64,
}

pub fn to_line(m: &Measurement) -> String {
    match m {
        Measurement::Scan(s) => serde_json::to_string(&ScanRecord {
            kind: "laser_scan".into(),
            topic: s.topic.clone(),
            t: s.timestamp,
            angle_min: s.angle_min,
            angle_increment: s.angle_increment,
            range_min: s.range_min,
            range_max: s.range_max,
            ranges: s
                .ranges
                .iter()
                .map(|r| if r.is_finite() { Some(*r) } else { None })
                .collect(),
        })
        .expect("scan encoding cannot fail"),
        Measurement::Odometry(o) => serde_json::to_string(&OdometryRecord {
            kind: "odometry".into(),
            t: o.timestamp,
            x: o.pose.x,
            y: o.pose.y,
            theta: o.pose.theta,
        })
        .expect("odometry encoding cannot fail"),
    }
}

pub fn write_dataset(measurements: &[Measurement]) -> String {
    let mut out = String::new();
    for m in measurements {
        out.push_str(&to_line(m));
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<Vec<Measurement>, DatasetError> {
    let mut out = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| DatasetError::Parse(line_no, e.to_string()))?;
        let kind = v
            .get("type")
            .and_then(|k| k.as_str())
            .ok_or_else(|| DatasetError::Parse(line_no, "missing 'type'".into()))?;
        let m = match kind {
            "laser_scan" => {
                let r: ScanRecord = serde_json::from_value(v)
                    .map_err(|e| DatasetError::Parse(line_no, e.to_string()))?;
                Measurement::Scan(LaserScan {
                    timestamp: r.t,
                    topic: r.topic,
                    angle_min: r.angle_min,
                    angle_increment: r.angle_increment,
                    range_min: r.range_min,
                    range_max: r.range_max,
                    ranges: r
                        .ranges
                        .into_iter()
                        .map(|r| r.unwrap_or(f64::INFINITY))
                        .collect(),
                })
            }
            "odometry" => {
                let r: OdometryRecord = serde_json::from_value(v)
                    .map_err(|e| DatasetError::Parse(line_no, e.to_string()))?;
                Measurement::Odometry(OdometryReading {
                    timestamp: r.t,
                    pose: Pose2::new(r.x, r.y, r.theta),
                })
            }
            other => {
                return Err(DatasetError::UnknownType {
                    line: line_no,
                    kind: other.into(),
                })
            }
        };
        if m.timestamp() < last_t {
            return Err(DatasetError::Unsorted(line_no));
        }
        last_t = m.timestamp();
        out.push(m);
    }
    Ok(out)
}
