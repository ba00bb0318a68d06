//! Synthetic scene generation: camera pairs, ground-truth poses and the
//! simulated 2D keypoint detector.
//!
//! Everything here is a pure function of its inputs and a seed. Substreams
//! are derived with [`split_seed`] so that scenes can be generated in
//! parallel without coordination.

use alloc::vec::Vec;

use nalgebra::{Matrix2, Matrix3, Quaternion, Rotation2, UnitQuaternion, Vector2, Vector3};
#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::{project, CameraIntrinsics, CameraView, Point2, Point3, Pose};
use crate::model::ObjectModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("no admissible scene found after {attempts} attempts")]
    SamplingExhausted { attempts: u32 },
    #[error("invalid noise model parameter: {0}")]
    InvalidNoise(&'static str),
}

/// splitmix64; the documented split rule for deriving per-scene seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent substream seed from `(seed, salt)`.
pub fn split_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt))
}

/// Noise parameters for all synthetic oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Std-dev of the 2D detector (pixels).
    pub pixel_sigma: f64,
    /// Ratio of major to minor covariance axis, ≥ 1.
    pub pixel_covariance_anisotropy: f64,
    /// Std-dev of depth-map noise (meters).
    pub depth_sigma: f64,
    /// Depth quantization step (meters); 0 disables quantization.
    pub depth_quantum: f64,
    /// Std-dev of feature-descriptor noise (descriptor units).
    pub feature_sigma: f64,
    /// Probability that a detection is replaced by an outlier.
    pub outlier_rate: f64,
    /// Displacement of outlier detections (pixels).
    pub outlier_magnitude: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.pixel_sigma < 0.0 || self.depth_sigma < 0.0 || self.feature_sigma < 0.0 {
            return Err(SceneError::InvalidNoise("sigma must be >= 0"));
        }
        if self.depth_quantum < 0.0 || self.outlier_magnitude < 0.0 {
            return Err(SceneError::InvalidNoise("magnitude must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(SceneError::InvalidNoise("outlier_rate must be in [0, 1]"));
        }
        if self.pixel_covariance_anisotropy < 1.0 {
            return Err(SceneError::InvalidNoise("anisotropy must be >= 1"));
        }
        Ok(())
    }

    /// All noise sources disabled.
    pub fn noiseless() -> Self {
        Self {
            pixel_sigma: 0.0,
            pixel_covariance_anisotropy: 1.0,
            depth_sigma: 0.0,
            depth_quantum: 0.0,
            feature_sigma: 0.0,
            outlier_rate: 0.0,
            outlier_magnitude: 0.0,
        }
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pixel_sigma: 2.0,
            pixel_covariance_anisotropy: 1.5,
            depth_sigma: 0.002,
            depth_quantum: 0.0035,
            feature_sigma: 0.003,
            outlier_rate: 0.05,
            outlier_magnitude: 30.0,
        }
    }
}

/// Camera and placement parameters for scene sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub intrinsics: CameraIntrinsics,
    /// Range of object-center depths in front of the reference camera (meters).
    pub depth_range: (f64, f64),
    /// Lateral placement jitter (meters).
    pub lateral_jitter: f64,
    /// Minimum pixel distance between any two projected keypoints, per view.
    /// Rejects configurations where distinct keypoints are unresolvable at
    /// pixel resolution (they would corrupt depth and feature lookup).
    pub min_pixel_separation: f64,
    pub max_attempts: u32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::new(572.0, 572.0, 320.0, 240.0, 640, 480)
                .expect("default intrinsics are valid"),
            depth_range: (0.6, 1.2),
            lateral_jitter: 0.08,
            min_pixel_separation: 2.0,
            max_attempts: 100,
        }
    }
}

/// A sampled two-view scene. The world frame is the reference camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// Model-to-reference-camera pose.
    pub gt_pose: Pose,
    pub ref_view: CameraView,
    pub query_view: CameraView,
    /// Distance between the two focal points (meters).
    pub baseline: f64,
}

impl SceneSample {
    /// Ground-truth 3D keypoints in the reference-camera frame.
    pub fn gt_keypoints(&self, model: &ObjectModel) -> Vec<Point3> {
        model
            .keypoints()
            .iter()
            .map(|kp| self.gt_pose.transform(*kp))
            .collect()
    }

    /// Ground-truth 2D keypoint projections in the given view.
    pub fn gt_projections(
        &self,
        model: &ObjectModel,
        view: &CameraView,
    ) -> Option<Vec<Point2>> {
        model
            .keypoints()
            .iter()
            .map(|kp| project(view, self.gt_pose.transform(*kp)).ok().map(|(p, _)| p))
            .collect()
    }
}

fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-6 {
            return *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix();
        }
    }
}

/// Camera pose looking from `center` toward `target`, with image-down kept
/// close to world +y. Camera axes: x right, y down, z forward.
fn look_at(center: Point3, target: Point3) -> Pose {
    let z = (target - center).normalize();
    let down = Vector3::new(0.0, 1.0, 0.0);
    let x = down.cross(&z).normalize();
    let y = z.cross(&x);
    let axes = Matrix3::from_columns(&[x, y, z]);
    let rotation = axes.transpose();
    let translation = -(rotation * center);
    Pose::new(rotation, translation).expect("look-at rotation is orthonormal")
}

/// Samples a scene: the object 0.6–1.2 m in front of the reference camera at
/// a uniformly random orientation, the query camera displaced by `baseline`
/// orthogonally to the viewing axis and re-aimed at the object center.
///
/// Configurations are rejected until all keypoints project inside both images
/// with at least [`SceneConfig::min_pixel_separation`] pixels between any two.
pub fn sample_scene(
    model: &ObjectModel,
    config: &SceneConfig,
    baseline: f64,
    seed: u64,
) -> Result<SceneSample, SceneError> {
    let ref_view = CameraView::new(config.intrinsics, Pose::identity());
    for attempt in 0..config.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, attempt as u64));
        let depth = config.depth_range.0
            + rng.random::<f64>() * (config.depth_range.1 - config.depth_range.0);
        let jitter = config.lateral_jitter;
        let tx = (rng.random::<f64>() * 2.0 - 1.0) * jitter;
        let ty = (rng.random::<f64>() * 2.0 - 1.0) * jitter;
        let rotation = random_rotation(&mut rng);
        let gt_pose = Pose::new(rotation, Vector3::new(tx, ty, depth))
            .expect("sampled rotation is orthonormal");

        let phi = rng.random::<f64>() * core::f64::consts::TAU;
        let query_view = if baseline == 0.0 {
            ref_view
        } else {
            let dir = Vector3::new(phi.cos(), phi.sin(), 0.0);
            let center = dir * baseline;
            CameraView::new(config.intrinsics, look_at(center, gt_pose.translation()))
        };

        if scene_admissible(model, &gt_pose, &ref_view, &query_view, config) {
            return Ok(SceneSample {
                gt_pose,
                ref_view,
                query_view,
                baseline,
            });
        }
    }
    Err(SceneError::SamplingExhausted {
        attempts: config.max_attempts,
    })
}

fn scene_admissible(
    model: &ObjectModel,
    gt_pose: &Pose,
    ref_view: &CameraView,
    query_view: &CameraView,
    config: &SceneConfig,
) -> bool {
    for view in [ref_view, query_view] {
        let center_cam = view.world_to_camera.transform(gt_pose.translation());
        if center_cam.z <= 0.0 {
            return false;
        }
        let mut pixels: Vec<Point2> = Vec::with_capacity(model.keypoint_count());
        for kp in model.keypoints() {
            let p_world = gt_pose.transform(*kp);
            match project(view, p_world) {
                Ok((pixel, _)) if view.intrinsics.contains(pixel) => pixels.push(pixel),
                _ => return false,
            }
        }
        for i in 0..pixels.len() {
            for j in (i + 1)..pixels.len() {
                if (pixels[i] - pixels[j]).norm() < config.min_pixel_separation {
                    return false;
                }
            }
        }
    }
    true
}

/// A set of 2D keypoint detections with per-keypoint covariances (pixels²).
#[derive(Debug, Clone, PartialEq)]
pub struct Detection2D {
    pub keypoints: Vec<Point2>,
    pub covariances: Vec<Matrix2<f64>>,
}

/// Simulates the 2D keypoint detector: zero-mean Gaussian noise with an
/// anisotropic covariance per keypoint; with probability `outlier_rate` the
/// keypoint is instead displaced by `outlier_magnitude` in a random
/// direction. Reported covariances are the generating (inlier) covariances;
/// outliers are not marked.
pub fn simulate_detector(
    keypoints_gt_2d: &[Point2],
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Detection2D {
    let mut keypoints = Vec::with_capacity(keypoints_gt_2d.len());
    let mut covariances = Vec::with_capacity(keypoints_gt_2d.len());
    for gt in keypoints_gt_2d {
        // Fixed draw order keeps downstream keypoints independent of the
        // outlier branch taken here.
        let orient = rng.random::<f64>() * core::f64::consts::TAU;
        let coin = rng.random::<f64>();
        let outlier_dir = rng.random::<f64>() * core::f64::consts::TAU;
        let n1: f64 = rng.sample(StandardNormal);
        let n2: f64 = rng.sample(StandardNormal);

        let a = noise.pixel_covariance_anisotropy;
        let rot = Rotation2::new(orient);
        let axes = Vector2::new(noise.pixel_sigma * a.sqrt(), noise.pixel_sigma / a.sqrt());
        let sigma = rot.matrix() * Matrix2::from_diagonal(&axes.map(|s| s * s)) * rot.matrix().transpose();

        let detected = if coin < noise.outlier_rate {
            gt + Vector2::new(outlier_dir.cos(), outlier_dir.sin()) * noise.outlier_magnitude
        } else {
            gt + rot.matrix() * Vector2::new(axes.x * n1, axes.y * n2)
        };
        keypoints.push(detected);
        covariances.push(sigma);
    }
    Detection2D {
        keypoints,
        covariances,
    }
}
