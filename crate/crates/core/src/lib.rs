//! Two-view 6D object pose estimation at desk scale.
//!
//! The crate implements three strategies for recovering 3D object keypoints
//! from a pair of calibrated views — early fusion (depth lifting), mid fusion
//! (a characterized 3D geometry volume with per-keypoint heatmap fields), and
//! late fusion (two-view triangulation) — together with a differentiable
//! soft-RANSAC pose solver and the ADD / ADD-S evaluation metrics.
//!
//! All learned components of the original pipeline are replaced by synthetic
//! oracles (`scene` / `render`) so that every geometric claim can be tested
//! deterministically: scene generation, 2D keypoint detection, depth maps and
//! feature maps are pure functions of a model, a camera pair and a seed.
//!
//! The crate is `no_std`-compatible (with `alloc`); IO, configuration and the
//! benchmark CLI live in the companion `stereopose-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod fusion;
pub mod geometry;
pub mod metrics;
pub mod mid;
pub mod model;
pub mod render;
pub mod scene;
pub mod solver;
pub mod volume;

pub use fusion::Keypoints3D;
pub use geometry::{CameraIntrinsics, CameraView, Point2, Point3, Pose};
pub use model::ObjectModel;
pub use scene::{NoiseModel, SceneConfig, SceneSample};
pub use solver::{LossConfig, SolverConfig};
pub use volume::{HeatmapField, VolumeSpec};
