//! Rigid transforms, the pinhole camera model and projection utilities.
//!
//! Conventions: camera frames are x-right, y-down, z-forward; the world frame
//! coincides with the reference camera frame; rotations are stored as 3×3
//! matrices and validated on construction.

use nalgebra::{Matrix3, Vector2, Vector3};
#[cfg(not(feature = "std"))]
use num_traits::Float;
use thiserror::Error;

pub type Point2 = Vector2<f64>;
pub type Point3 = Vector3<f64>;

/// Orthonormality defect below which a rotation is accepted as-is.
pub const ROTATION_TOL: f64 = 1e-9;
/// Defect up to which a rotation is re-orthonormalized instead of rejected.
pub const ROTATION_REPAIR_TOL: f64 = 1e-6;
/// Camera-frame depth below which a point counts as behind the camera.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation matrix is not orthonormal (defect {defect:.3e})")]
    InvalidRotation { defect: f64 },
    #[error("rotation matrix has negative determinant")]
    ReflectedRotation,
    #[error("invalid camera intrinsics")]
    InvalidIntrinsics,
    #[error("point is behind the camera (z = {z:.3e})")]
    BehindCamera { z: f64 },
    #[error("depth must be positive (got {depth:.3e})")]
    NonPositiveDepth { depth: f64 },
}

/// A rigid transform: `p ↦ rotation · p + translation` (translation in meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose, validating the rotation. Defects up to
    /// [`ROTATION_REPAIR_TOL`] are repaired by SVD projection onto SO(3);
    /// larger defects or reflections are rejected.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.determinant() < 0.0 {
            return Err(GeometryError::ReflectedRotation);
        }
        let defect = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let rotation = if defect <= ROTATION_TOL {
            rotation
        } else if defect <= ROTATION_REPAIR_TOL {
            nearest_rotation(&rotation)
        } else {
            return Err(GeometryError::InvalidRotation { defect });
        };
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Axis-angle constructor used throughout the tests and generators.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            angle,
        );
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// Applies the transform to a point.
    pub fn transform(&self, p: Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// Rotates a direction (no translation).
    pub fn rotate(&self, v: Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Geodesic distance between the two rotations, in `[0, π]`.
    ///
    /// Uses `acos((tr−1)/2)` away from zero and the Frobenius form
    /// `2·asin(‖R−I‖_F / (2√2))` near it, where acos loses ~8 digits.
    pub fn rotation_geodesic(&self, other: &Pose) -> f64 {
        let r = self.rotation.transpose() * other.rotation;
        let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        if c < 0.99 {
            c.acos()
        } else {
            let defect = (r - Matrix3::identity()).norm();
            2.0 * (defect / (2.0 * 2.0f64.sqrt())).clamp(-1.0, 1.0).asin()
        }
    }

    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// Projects a (near-)rotation onto SO(3): SVD with determinant-sign correction.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd of 3x3 always yields u");
    let v_t = svd.v_t.expect("svd of 3x3 always yields v_t");
    let sign = (u * v_t).determinant();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if sign < 0.0 { -1.0 } else { 1.0 }));
    u * d * v_t
}

/// Distortion-free pinhole intrinsics (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 || width == 0 || height == 0 || !fx.is_finite() || !fy.is_finite()
        {
            return Err(GeometryError::InvalidIntrinsics);
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn contains(&self, pixel: Point2) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= self.width as f64 - 1.0
            && pixel.y <= self.height as f64 - 1.0
    }
}

/// A calibrated view: intrinsics plus the world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraView {
    pub intrinsics: CameraIntrinsics,
    pub world_to_camera: Pose,
}

impl CameraView {
    pub fn new(intrinsics: CameraIntrinsics, world_to_camera: Pose) -> Self {
        Self {
            intrinsics,
            world_to_camera,
        }
    }

    /// Camera center (focal point) in world coordinates.
    pub fn center(&self) -> Point3 {
        self.world_to_camera.inverse().translation()
    }

    /// Unit ray through a pixel, expressed in world coordinates.
    pub fn pixel_ray(&self, pixel: Point2) -> Vector3<f64> {
        let k = &self.intrinsics;
        let dir_cam = Vector3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0);
        (self.world_to_camera.rotation().transpose() * dir_cam).normalize()
    }
}

/// Relative pose mapping reference-camera coordinates to query-camera coordinates.
pub fn relative(reference: &CameraView, query: &CameraView) -> Pose {
    query
        .world_to_camera
        .compose(&reference.world_to_camera.inverse())
}

/// Projects a world point; returns the pixel and the camera-frame depth.
pub fn project(view: &CameraView, p_world: Point3) -> Result<(Point2, f64), GeometryError> {
    let p_cam = view.world_to_camera.transform(p_world);
    if p_cam.z <= MIN_PROJECTION_DEPTH {
        return Err(GeometryError::BehindCamera { z: p_cam.z });
    }
    let k = &view.intrinsics;
    let pixel = Point2::new(
        k.fx * p_cam.x / p_cam.z + k.cx,
        k.fy * p_cam.y / p_cam.z + k.cy,
    );
    Ok((pixel, p_cam.z))
}

/// Lifts a pixel at the given camera-frame depth back to a world point.
pub fn backproject(view: &CameraView, pixel: Point2, depth: f64) -> Result<Point3, GeometryError> {
    if depth <= 0.0 {
        return Err(GeometryError::NonPositiveDepth { depth });
    }
    let k = &view.intrinsics;
    let p_cam = Vector3::new(
        (pixel.x - k.cx) / k.fx * depth,
        (pixel.y - k.cy) / k.fy * depth,
        depth,
    );
    Ok(view.world_to_camera.inverse().transform(p_cam))
}
