//! Modular multi-cue 2D graph SLAM: property containers and serialization,
//! a config-driven module registry, SE(2) geometry, an iterative
//! least-squares back-end shared by alignment and graph optimization, a
//! slice-based front-end, a pose graph with loop closing, a deterministic
//! simulator and trajectory evaluation tools.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod frontend;
pub mod geometry;
pub mod graph;
pub mod pipeline;
pub mod props;
pub mod sim;
pub mod solver;
