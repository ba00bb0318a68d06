//! Early and late fusion: from 2D detections to 3D keypoints.

use alloc::vec::Vec;

use nalgebra::{Matrix4, RowVector4, Vector4};
#[cfg(not(feature = "std"))]
use num_traits::Float;
use thiserror::Error;

use crate::geometry::{backproject, CameraView, Point2, Point3};
use crate::render::DepthMap;
use crate::scene::Detection2D;

/// Radius (pixels) of the nearest-valid depth lookup around a detection.
const DEPTH_LOOKUP_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("triangulation is degenerate: baseline {baseline:.3e} m")]
    DegenerateGeometry { baseline: f64 },
    #[error("detections have {got} keypoints, expected {expected}")]
    KeypointCountMismatch { got: usize, expected: usize },
}

/// N predicted 3D keypoints in the reference-camera frame, with per-point
/// validity so that index alignment with the model keypoints is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoints3D {
    points: Vec<Point3>,
    valid: Vec<bool>,
}

impl Keypoints3D {
    pub fn new(points: Vec<Point3>, valid: Vec<bool>) -> Self {
        assert_eq!(points.len(), valid.len());
        Self { points, valid }
    }

    pub fn all_valid(points: Vec<Point3>) -> Self {
        let valid = alloc::vec![true; points.len()];
        Self { points, valid }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn point(&self, i: usize) -> Option<Point3> {
        self.valid[i].then(|| self.points[i])
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, Point3)> + '_ {
        self.points
            .iter()
            .enumerate()
            .filter(|(i, _)| self.valid[*i])
            .map(|(i, p)| (i, *p))
    }
}

/// Early fusion: assigns depth to each 2D detection and backprojects.
///
/// Depth is read at the nearest valid pixel within [`DEPTH_LOOKUP_RADIUS`]
/// of the detection; keypoints with no valid depth in the window are marked
/// invalid rather than failing the call.
pub fn lift_with_depth(
    detection: &Detection2D,
    depth: &DepthMap,
    view: &CameraView,
) -> Keypoints3D {
    let mut points = Vec::with_capacity(detection.keypoints.len());
    let mut valid = Vec::with_capacity(detection.keypoints.len());
    for pixel in &detection.keypoints {
        match nearest_valid_depth(depth, *pixel) {
            Some(z) => {
                // Lift along the detection ray, expressed in the reference frame.
                match backproject(view, *pixel, z) {
                    Ok(p_world) => {
                        points.push(view.world_to_camera.transform(p_world));
                        valid.push(true);
                    }
                    Err(_) => {
                        points.push(Point3::zeros());
                        valid.push(false);
                    }
                }
            }
            None => {
                points.push(Point3::zeros());
                valid.push(false);
            }
        }
    }
    Keypoints3D::new(points, valid)
}

fn nearest_valid_depth(depth: &DepthMap, pixel: Point2) -> Option<f64> {
    let r = DEPTH_LOOKUP_RADIUS.ceil() as i64;
    let cx = pixel.x.round() as i64;
    let cy = pixel.y.round() as i64;
    let mut best: Option<(f64, f64)> = None; // (distance, depth)
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx + dx, cy + dy);
            if x < 0 || y < 0 || x >= depth.width as i64 || y >= depth.height as i64 {
                continue;
            }
            let Some(z) = depth.depth(x as u32, y as u32) else {
                continue;
            };
            let dist = ((x as f64 - pixel.x).powi(2) + (y as f64 - pixel.y).powi(2)).sqrt();
            if dist <= DEPTH_LOOKUP_RADIUS && best.is_none_or(|(d, _)| dist < d) {
                best = Some((dist, z));
            }
        }
    }
    best.map(|(_, z)| z)
}

/// Late fusion: per-keypoint linear DLT triangulation of the two detections,
/// expressed in the reference-camera frame. Points that triangulate behind
/// either camera are marked invalid.
pub fn triangulate_pair(
    det_ref: &Detection2D,
    det_query: &Detection2D,
    ref_view: &CameraView,
    query_view: &CameraView,
) -> Result<Keypoints3D, FusionError> {
    if det_ref.keypoints.len() != det_query.keypoints.len() {
        return Err(FusionError::KeypointCountMismatch {
            got: det_query.keypoints.len(),
            expected: det_ref.keypoints.len(),
        });
    }
    let baseline = (ref_view.center() - query_view.center()).norm();
    if baseline < 1e-9 {
        return Err(FusionError::DegenerateGeometry { baseline });
    }

    let mut points = Vec::with_capacity(det_ref.keypoints.len());
    let mut valid = Vec::with_capacity(det_ref.keypoints.len());
    for (pr, pq) in det_ref.keypoints.iter().zip(det_query.keypoints.iter()) {
        match triangulate_point(*pr, *pq, ref_view, query_view) {
            Some(p_world) => {
                let in_front = [ref_view, query_view]
                    .iter()
                    .all(|v| v.world_to_camera.transform(p_world).z > 0.0);
                points.push(ref_view.world_to_camera.transform(p_world));
                valid.push(in_front);
            }
            None => {
                points.push(Point3::zeros());
                valid.push(false);
            }
        }
    }
    Ok(Keypoints3D::new(points, valid))
}

/// Homogeneous two-view DLT in normalized image coordinates: the SVD null
/// vector of the stacked 4×4 system.
fn triangulate_point(
    pixel_ref: Point2,
    pixel_query: Point2,
    ref_view: &CameraView,
    query_view: &CameraView,
) -> Option<Point3> {
    let mut a = Matrix4::<f64>::zeros();
    for (row_base, (pixel, view)) in [(pixel_ref, ref_view), (pixel_query, query_view)]
        .into_iter()
        .enumerate()
    {
        let k = &view.intrinsics;
        let xn = (pixel.x - k.cx) / k.fx;
        let yn = (pixel.y - k.cy) / k.fy;
        let r = view.world_to_camera.rotation();
        let t = view.world_to_camera.translation();
        let p0 = RowVector4::new(r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x);
        let p1 = RowVector4::new(r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y);
        let p2 = RowVector4::new(r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z);
        a.set_row(row_base * 2, &(xn * p2 - p0));
        a.set_row(row_base * 2 + 1, &(yn * p2 - p1));
    }
    let svd = a.svd(true, true);
    let v_t = svd.v_t?;
    let mut min_idx = 0;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s < svd.singular_values[min_idx] {
            min_idx = i;
        }
    }
    let h: Vector4<f64> = v_t.row(min_idx).transpose();
    if h.w.abs() < 1e-12 * h.norm() {
        return None;
    }
    Some(Point3::new(h.x / h.w, h.y / h.w, h.z / h.w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, CameraIntrinsics, Pose};
    use crate::model::ObjectModel;
    use crate::render::render_depth_oracle;
    use crate::scene::{sample_scene, simulate_detector, NoiseModel, SceneConfig};
    use alloc::vec;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix2, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exact_detection(pixels: Vec<Point2>) -> Detection2D {
        let covariances = vec![Matrix2::zeros(); pixels.len()];
        Detection2D {
            keypoints: pixels,
            covariances,
        }
    }

    fn test_model() -> ObjectModel {
        ObjectModel::parametric_box([0.08, 0.12, 0.05], 0.001, 9)
    }

    #[test]
    fn forced_two_camera_triangulation() {
        let k = CameraIntrinsics::new(500.0, 500.0, 0.0, 0.0, 640, 480).unwrap();
        let ref_view = CameraView::new(k, Pose::identity());
        // Query camera translated +0.1 m along x, same orientation:
        // world point (0,0,1) appears at pixel (-50, 0).
        let w2c = Pose::new(nalgebra::Matrix3::identity(), Vector3::new(-0.1, 0.0, 0.0)).unwrap();
        let query_view = CameraView::new(k, w2c);
        let det_ref = exact_detection(vec![Point2::new(0.0, 0.0)]);
        let det_query = exact_detection(vec![Point2::new(-50.0, 0.0)]);
        let kps = triangulate_pair(&det_ref, &det_query, &ref_view, &query_view).unwrap();
        let p = kps.point(0).unwrap();
        assert_abs_diff_eq!((p - Point3::new(0.0, 0.0, 1.0)).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_noise_triangulation_is_exact_on_random_scenes() {
        let model = test_model();
        let cfg = SceneConfig::default();
        for seed in 0..100u64 {
            let baseline = 0.02 + 0.18 * (seed as f64 / 100.0);
            let scene = sample_scene(&model, &cfg, baseline, seed).unwrap();
            let pr = scene.gt_projections(&model, &scene.ref_view).unwrap();
            let pq = scene.gt_projections(&model, &scene.query_view).unwrap();
            let kps = triangulate_pair(
                &exact_detection(pr),
                &exact_detection(pq),
                &scene.ref_view,
                &scene.query_view,
            )
            .unwrap();
            for (i, gt) in scene.gt_keypoints(&model).iter().enumerate() {
                let p = kps.point(i).expect("exact geometry triangulates");
                assert_abs_diff_eq!((p - gt).norm(), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let model = test_model();
        let cfg = SceneConfig::default();
        let scene = sample_scene(&model, &cfg, 0.0, 1).unwrap();
        let p = scene.gt_projections(&model, &scene.ref_view).unwrap();
        let det = exact_detection(p);
        assert!(matches!(
            triangulate_pair(&det, &det, &scene.ref_view, &scene.query_view),
            Err(FusionError::DegenerateGeometry { .. })
        ));
    }

    #[test]
    fn noise_free_lift_recovers_keypoints() {
        let model = test_model();
        let cfg = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for seed in 0..20u64 {
            let scene = sample_scene(&model, &cfg, 0.1, seed).unwrap();
            let depth = render_depth_oracle(
                &model,
                &scene.ref_view,
                &scene.gt_pose,
                &NoiseModel::noiseless(),
                &mut rng,
            );
            let det = exact_detection(scene.gt_projections(&model, &scene.ref_view).unwrap());
            let lifted = lift_with_depth(&det, &depth, &scene.ref_view);
            for (i, gt) in scene.gt_keypoints(&model).iter().enumerate() {
                let p = lifted.point(i).expect("keypoint pixel has stamped depth");
                // Within splat resolution: ≤ half-pixel backprojection error at ~1 m.
                assert!((p - gt).norm() < 1e-3, "error {}", (p - gt).norm());
            }
        }
    }

    #[test]
    fn lift_on_background_is_invalid() {
        let model = test_model();
        let cfg = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scene = sample_scene(&model, &cfg, 0.1, 3).unwrap();
        let depth = render_depth_oracle(
            &model,
            &scene.ref_view,
            &scene.gt_pose,
            &NoiseModel::noiseless(),
            &mut rng,
        );
        // A corner pixel is far from the object: empty 3-px window.
        let det = exact_detection(vec![Point2::new(2.0, 2.0)]);
        let lifted = lift_with_depth(&det, &depth, &scene.ref_view);
        assert_eq!(lifted.valid_count(), 0);
    }

    #[test]
    fn quantized_depth_bounds_lift_error_along_ray() {
        let model = test_model();
        let cfg = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise = NoiseModel {
            depth_quantum: 0.0035,
            ..NoiseModel::noiseless()
        };
        for seed in 0..20u64 {
            let scene = sample_scene(&model, &cfg, 0.1, seed).unwrap();
            let depth =
                render_depth_oracle(&model, &scene.ref_view, &scene.gt_pose, &noise, &mut rng);
            let det = exact_detection(scene.gt_projections(&model, &scene.ref_view).unwrap());
            let lifted = lift_with_depth(&det, &depth, &scene.ref_view);
            for (i, gt) in scene.gt_keypoints(&model).iter().enumerate() {
                let p = lifted.point(i).unwrap();
                // Quantization moves the depth by at most half a quantum; the
                // detection ray itself is exact.
                assert!(
                    (p - gt).norm() <= 0.00175 + 1e-3,
                    "error {}",
                    (p - gt).norm()
                );
            }
        }
    }

    #[test]
    fn triangulation_error_decreases_with_baseline_under_noise() {
        let model = test_model();
        let cfg = SceneConfig::default();
        let noise = NoiseModel {
            pixel_sigma: 1.0,
            pixel_covariance_anisotropy: 1.0,
            outlier_rate: 0.0,
            ..NoiseModel::noiseless()
        };
        let mut means = Vec::new();
        for &baseline in &[0.02, 0.10, 0.20] {
            let mut total = 0.0;
            let mut count = 0usize;
            for seed in 0..60u64 {
                let scene = sample_scene(&model, &cfg, baseline, seed).unwrap();
                let mut rng_r = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
                let mut rng_q = ChaCha8Rng::seed_from_u64(seed ^ 0x1234);
                let det_r = simulate_detector(
                    &scene.gt_projections(&model, &scene.ref_view).unwrap(),
                    &noise,
                    &mut rng_r,
                );
                let det_q = simulate_detector(
                    &scene.gt_projections(&model, &scene.query_view).unwrap(),
                    &noise,
                    &mut rng_q,
                );
                let kps =
                    triangulate_pair(&det_r, &det_q, &scene.ref_view, &scene.query_view).unwrap();
                for (i, gt) in scene.gt_keypoints(&model).iter().enumerate() {
                    if let Some(p) = kps.point(i) {
                        total += (p - gt).norm();
                        count += 1;
                    }
                }
            }
            means.push(total / count as f64);
        }
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }
}
