//! The characterized 3D geometry volume and per-keypoint heatmap fields.
//!
//! A volume is a regular lattice of voxel nodes in the reference-camera
//! frame. Each node gathers the descriptors of its nearest pixel in both
//! views (concatenated, 2C channels); heatmap fields are per-keypoint
//! probability distributions over the same lattice.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use thiserror::Error;

use crate::fusion::Keypoints3D;
use crate::geometry::{project, CameraView, Point2, Point3};
use crate::render::FeatureMap;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VolumeError {
    #[error("volume spec is invalid: {0}")]
    InvalidSpec(&'static str),
    #[error("heatmap field is empty for keypoint {keypoint}")]
    EmptyField { keypoint: usize },
    #[error("point lies outside the volume")]
    OutOfVolume,
    #[error("target heatmap has no mass on the grid")]
    InvalidTarget,
    #[error("feature channel counts differ between the two maps")]
    ChannelMismatch,
}

/// A regular voxel grid: `dims` nodes per axis spaced by `cell`, centered on
/// `center`, axes parallel to the reference camera axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeSpec {
    pub center: Point3,
    pub dims: [usize; 3],
    pub cell: [f64; 3],
}

impl VolumeSpec {
    pub fn new(center: Point3, dims: [usize; 3], cell: [f64; 3]) -> Result<Self, VolumeError> {
        if dims.iter().any(|&d| d < 2) {
            return Err(VolumeError::InvalidSpec("dims must be >= 2 per axis"));
        }
        if cell.iter().any(|&c| c <= 0.0 || !c.is_finite()) {
            return Err(VolumeError::InvalidSpec("cell must be > 0"));
        }
        Ok(Self { center, dims, cell })
    }

    /// Grid covering `center ± half_extent` at the given cell size.
    pub fn from_half_extent(
        center: Point3,
        half_extent: [f64; 3],
        cell: f64,
    ) -> Result<Self, VolumeError> {
        let dims = [
            ((2.0 * half_extent[0] / cell).round() as usize).max(2),
            ((2.0 * half_extent[1] / cell).round() as usize).max(2),
            ((2.0 * half_extent[2] / cell).round() as usize).max(2),
        ];
        Self::new(center, dims, [cell, cell, cell])
    }

    pub fn node_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Position of the first node (lowest corner of the lattice).
    pub fn origin(&self) -> Point3 {
        Point3::new(
            self.center.x - self.cell[0] * (self.dims[0] - 1) as f64 / 2.0,
            self.center.y - self.cell[1] * (self.dims[1] - 1) as f64 / 2.0,
            self.center.z - self.cell[2] * (self.dims[2] - 1) as f64 / 2.0,
        )
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Point3 {
        let o = self.origin();
        Point3::new(
            o.x + i as f64 * self.cell[0],
            o.y + j as f64 * self.cell[1],
            o.z + k as f64 * self.cell[2],
        )
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn node_coords(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        (i, j, k)
    }

    /// Continuous grid coordinates of a point (node units from the origin).
    pub fn grid_coords(&self, p: Point3) -> [f64; 3] {
        let o = self.origin();
        [
            (p.x - o.x) / self.cell[0],
            (p.y - o.y) / self.cell[1],
            (p.z - o.z) / self.cell[2],
        ]
    }

    pub fn mean_cell(&self) -> f64 {
        (self.cell[0] + self.cell[1] + self.cell[2]) / 3.0
    }
}

/// Per-node concatenated descriptors from both views (2C channels). Nodes
/// projecting outside an image keep zeros in that view's half.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub spec: VolumeSpec,
    pub channels_per_view: usize,
    /// The two source views (reference first); the grid lives in the
    /// reference-camera frame.
    pub views: [CameraView; 2],
    data: Vec<f32>,
}

impl FeatureVolume {
    pub fn half(&self, node: usize, view: usize) -> &[f32] {
        let c = self.channels_per_view;
        let base = node * 2 * c + view * c;
        &self.data[base..base + c]
    }

    /// Focal points of the two views, in the reference-camera frame.
    pub fn camera_centers(&self) -> [Point3; 2] {
        let to_ref = self.views[0].world_to_camera;
        [
            to_ref.transform(self.views[0].center()),
            to_ref.transform(self.views[1].center()),
        ]
    }
}

/// Gathers both views' descriptors into a volume: each node is projected
/// into each image and copies the descriptor of the nearest pixel;
/// behind-camera, out-of-bounds or background projections leave zeros.
///
/// Nearest-pixel sampling keeps every voxel's descriptor an actual surfel
/// descriptor. Bilinear sampling was tried and rejected: blending across
/// silhouette boundaries and face creases produces off-surface coordinates
/// whose errors are coherent, while the nearest-pixel half-pixel jitter
/// averages out downstream.
pub fn build_volume(
    f_ref: &FeatureMap,
    f_query: &FeatureMap,
    ref_view: &CameraView,
    query_view: &CameraView,
    spec: &VolumeSpec,
) -> Result<FeatureVolume, VolumeError> {
    if f_ref.channels != f_query.channels {
        return Err(VolumeError::ChannelMismatch);
    }
    let c = f_ref.channels;
    let n = spec.node_count();
    let mut data = vec![0.0f32; n * 2 * c];
    // Node positions are in the reference-camera frame; projection expects
    // world coordinates.
    let ref_cam_to_world = ref_view.world_to_camera.inverse();
    for k in 0..spec.dims[2] {
        for j in 0..spec.dims[1] {
            for i in 0..spec.dims[0] {
                let node = spec.node_index(i, j, k);
                let p_world = ref_cam_to_world.transform(spec.node_position(i, j, k));
                for (view_idx, (fmap, view)) in
                    [(f_ref, ref_view), (f_query, query_view)].into_iter().enumerate()
                {
                    let Ok((pixel, _)) = project(view, p_world) else {
                        continue;
                    };
                    let (x, y) = (pixel.x.round(), pixel.y.round());
                    if x < 0.0
                        || y < 0.0
                        || x > (fmap.width - 1) as f64
                        || y > (fmap.height - 1) as f64
                    {
                        continue;
                    }
                    let base = node * 2 * c + view_idx * c;
                    data[base..base + c]
                        .copy_from_slice(fmap.descriptor(x as u32, y as u32));
                }
            }
        }
    }
    Ok(FeatureVolume {
        spec: *spec,
        channels_per_view: c,
        views: [*ref_view, *query_view],
        data,
    })
}


/// Per-keypoint probability distributions over the lattice: nonnegative,
/// each keypoint's field sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapField {
    pub spec: VolumeSpec,
    n_keypoints: usize,
    values: Vec<f64>,
}

impl HeatmapField {
    /// Builds a field from raw nonnegative scores, normalizing each keypoint
    /// to sum 1. A keypoint whose scores are all zero yields `EmptyField`.
    pub fn from_raw_scores(
        spec: VolumeSpec,
        n_keypoints: usize,
        mut values: Vec<f64>,
    ) -> Result<Self, VolumeError> {
        let n = spec.node_count();
        assert_eq!(values.len(), n_keypoints * n);
        for kp in 0..n_keypoints {
            let slice = &mut values[kp * n..(kp + 1) * n];
            let sum: f64 = slice.iter().sum();
            if sum <= 0.0 || !sum.is_finite() {
                return Err(VolumeError::EmptyField { keypoint: kp });
            }
            for v in slice.iter_mut() {
                *v /= sum;
            }
        }
        Ok(Self {
            spec,
            n_keypoints,
            values,
        })
    }

    pub fn keypoint_count(&self) -> usize {
        self.n_keypoints
    }

    pub fn values(&self, keypoint: usize) -> &[f64] {
        let n = self.spec.node_count();
        &self.values[keypoint * n..(keypoint + 1) * n]
    }

    pub fn value(&self, keypoint: usize, node: usize) -> f64 {
        self.values[keypoint * self.spec.node_count() + node]
    }
}

/// Trilinear interpolation of a keypoint's field at an arbitrary point: the
/// weighted sum over the 8 enclosing lattice nodes.
pub fn trilinear_eval(
    field: &HeatmapField,
    keypoint: usize,
    p: Point3,
) -> Result<f64, VolumeError> {
    let spec = &field.spec;
    let g = spec.grid_coords(p);
    for axis in 0..3 {
        if g[axis] < 0.0 || g[axis] > (spec.dims[axis] - 1) as f64 {
            return Err(VolumeError::OutOfVolume);
        }
    }
    let cell_of = |x: f64, dim: usize| -> (usize, f64) {
        let i = (x.floor() as usize).min(dim - 2);
        (i, x - i as f64)
    };
    let (i0, fx) = cell_of(g[0], spec.dims[0]);
    let (j0, fy) = cell_of(g[1], spec.dims[1]);
    let (k0, fz) = cell_of(g[2], spec.dims[2]);
    let vals = field.values(keypoint);
    let mut acc = 0.0;
    for dk in 0..2 {
        for dj in 0..2 {
            for di in 0..2 {
                let w = (if di == 0 { 1.0 - fx } else { fx })
                    * (if dj == 0 { 1.0 - fy } else { fy })
                    * (if dk == 0 { 1.0 - fz } else { fz });
                acc += w * vals[spec.node_index(i0 + di, j0 + dj, k0 + dk)];
            }
        }
    }
    Ok(acc)
}

/// A Gaussian target heatmap (mean in the reference-camera frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetHeatmap {
    pub mean: Point3,
    pub sigma: f64,
}

impl TargetHeatmap {
    pub fn new(mean: Point3, sigma: f64) -> Result<Self, VolumeError> {
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(VolumeError::InvalidSpec("target sigma must be > 0"));
        }
        Ok(Self { mean, sigma })
    }
}

/// Discretizes a Gaussian target onto the lattice and normalizes it to sum 1.
pub fn discretize_target(spec: &VolumeSpec, target: &TargetHeatmap) -> Result<Vec<f64>, VolumeError> {
    let n = spec.node_count();
    let mut values = vec![0.0f64; n];
    let inv_two_sigma2 = 1.0 / (2.0 * target.sigma * target.sigma);
    let mut sum = 0.0;
    for k in 0..spec.dims[2] {
        for j in 0..spec.dims[1] {
            for i in 0..spec.dims[0] {
                let d2 = (spec.node_position(i, j, k) - target.mean).norm_squared();
                let v = (-d2 * inv_two_sigma2).exp();
                values[spec.node_index(i, j, k)] = v;
                sum += v;
            }
        }
    }
    if sum <= 0.0 {
        return Err(VolumeError::InvalidTarget);
    }
    for v in &mut values {
        *v /= sum;
    }
    Ok(values)
}

const KL_FLOOR: f64 = 1e-12;

/// KL divergence `D(Q^v ‖ Q^k)` summed over keypoints, with `0·log(0/q) = 0`
/// and the target floored at 1e-12 where the field has mass.
pub fn kl_divergence(
    field: &HeatmapField,
    targets: &[TargetHeatmap],
) -> Result<f64, VolumeError> {
    assert_eq!(targets.len(), field.keypoint_count());
    let mut total = 0.0;
    for (kp, target) in targets.iter().enumerate() {
        let q_k = discretize_target(&field.spec, target)?;
        total += kl_between(field.values(kp), &q_k);
    }
    Ok(total)
}

/// KL between two discrete distributions on the same support.
pub fn kl_between(q_v: &[f64], q_k: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&p, &q) in q_v.iter().zip(q_k.iter()) {
        if p > 0.0 {
            acc += p * (p / q.max(KL_FLOOR)).ln();
        }
    }
    acc
}

/// Predicts each keypoint as the probability-weighted mean of node positions.
pub fn extract_keypoints(field: &HeatmapField) -> Result<Keypoints3D, VolumeError> {
    let spec = &field.spec;
    let n = spec.node_count();
    let mut points = Vec::with_capacity(field.keypoint_count());
    for kp in 0..field.keypoint_count() {
        let vals = field.values(kp);
        let mut mean = Point3::zeros();
        let mut mass = 0.0;
        for idx in 0..n {
            let v = vals[idx];
            if v > 0.0 {
                let (i, j, k) = spec.node_coords(idx);
                mean += spec.node_position(i, j, k) * v;
                mass += v;
            }
        }
        if mass <= 0.0 {
            return Err(VolumeError::EmptyField { keypoint: kp });
        }
        points.push(mean / mass);
    }
    Ok(Keypoints3D::all_valid(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> VolumeSpec {
        VolumeSpec::from_half_extent(Point3::new(0.0, 0.0, 1.0), [0.05; 3], 0.01).unwrap()
    }

    fn random_field(spec: VolumeSpec, n_kp: usize, seed: u64) -> HeatmapField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..n_kp * spec.node_count())
            .map(|_| rng.random::<f64>())
            .collect();
        HeatmapField::from_raw_scores(spec, n_kp, values).unwrap()
    }

    #[test]
    fn spec_range_and_cell_give_expected_dims() {
        let spec =
            VolumeSpec::from_half_extent(Point3::new(0.0, 0.0, 0.9), [0.3; 3], 0.01).unwrap();
        assert_eq!(spec.dims, [60, 60, 60]);
    }

    #[test]
    fn field_normalization_sums_to_one() {
        let field = random_field(small_spec(), 3, 1);
        for kp in 0..3 {
            let sum: f64 = field.values(kp).iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-6);
            assert!(field.values(kp).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn empty_raw_scores_are_rejected() {
        let spec = small_spec();
        let raw = vec![0.0; spec.node_count()];
        assert!(matches!(
            HeatmapField::from_raw_scores(spec, 1, raw),
            Err(VolumeError::EmptyField { keypoint: 0 })
        ));
    }

    #[test]
    fn trilinear_at_node_is_exact() {
        let field = random_field(small_spec(), 1, 2);
        let spec = field.spec;
        let p = spec.node_position(3, 4, 5);
        let got = trilinear_eval(&field, 0, p).unwrap();
        assert_abs_diff_eq!(got, field.value(0, spec.node_index(3, 4, 5)), epsilon = 1e-15);
    }

    #[test]
    fn trilinear_at_cell_center_is_corner_mean() {
        let field = random_field(small_spec(), 1, 3);
        let spec = field.spec;
        let a = spec.node_position(2, 2, 2);
        let b = spec.node_position(3, 3, 3);
        let center = (a + b) / 2.0;
        let got = trilinear_eval(&field, 0, center).unwrap();
        let mut expected = 0.0;
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    expected += field.value(0, spec.node_index(2 + di, 2 + dj, 2 + dk)) / 8.0;
                }
            }
        }
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn trilinear_matches_direct_sum_at_random_points() {
        let field = random_field(small_spec(), 1, 4);
        let spec = field.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let g = [
                rng.random::<f64>() * (spec.dims[0] - 1) as f64,
                rng.random::<f64>() * (spec.dims[1] - 1) as f64,
                rng.random::<f64>() * (spec.dims[2] - 1) as f64,
            ];
            let o = spec.origin();
            let p = Point3::new(
                o.x + g[0] * spec.cell[0],
                o.y + g[1] * spec.cell[1],
                o.z + g[2] * spec.cell[2],
            );
            let got = trilinear_eval(&field, 0, p).unwrap();
            // Direct 8-term sum.
            let (i0, j0, k0) = (
                (g[0].floor() as usize).min(spec.dims[0] - 2),
                (g[1].floor() as usize).min(spec.dims[1] - 2),
                (g[2].floor() as usize).min(spec.dims[2] - 2),
            );
            let (fx, fy, fz) = (g[0] - i0 as f64, g[1] - j0 as f64, g[2] - k0 as f64);
            let wx = [1.0 - fx, fx];
            let wy = [1.0 - fy, fy];
            let wz = [1.0 - fz, fz];
            let mut expected = 0.0;
            let mut wsum = 0.0;
            for dk in 0..2 {
                for dj in 0..2 {
                    for di in 0..2 {
                        let w = wx[di] * wy[dj] * wz[dk];
                        wsum += w;
                        expected +=
                            w * field.value(0, spec.node_index(i0 + di, j0 + dj, k0 + dk));
                    }
                }
            }
            assert_abs_diff_eq!(wsum, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn trilinear_is_continuous_across_cell_boundaries() {
        let field = random_field(small_spec(), 1, 5);
        let spec = field.spec;
        let node = spec.node_position(4, 4, 4);
        for axis in 0..3 {
            let mut low = node;
            let mut high = node;
            low[axis] -= 1e-9;
            high[axis] += 1e-9;
            let a = trilinear_eval(&field, 0, low).unwrap();
            let b = trilinear_eval(&field, 0, high).unwrap();
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_volume_is_rejected() {
        let field = random_field(small_spec(), 1, 6);
        let far = Point3::new(10.0, 0.0, 0.0);
        assert!(matches!(
            trilinear_eval(&field, 0, far),
            Err(VolumeError::OutOfVolume)
        ));
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let field = random_field(small_spec(), 1, 7);
        assert_abs_diff_eq!(kl_between(field.values(0), field.values(0)), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn kl_two_voxel_hand_computation() {
        let qv = [0.5, 0.5];
        let qk = [0.9, 0.1];
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert_abs_diff_eq!(kl_between(&qv, &qk), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(kl_between(&qv, &qk), 0.5108, epsilon = 5e-4);
    }

    #[test]
    fn kl_is_nonnegative_on_random_pairs() {
        let spec = VolumeSpec::new(Point3::zeros(), [4, 4, 4], [0.01; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a: Vec<f64> = (0..spec.node_count()).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..spec.node_count()).map(|_| rng.random::<f64>()).collect();
            let fa = HeatmapField::from_raw_scores(spec, 1, a).unwrap();
            let fb = HeatmapField::from_raw_scores(spec, 1, b).unwrap();
            assert!(kl_between(fa.values(0), fb.values(0)) >= -1e-9);
        }
    }

    #[test]
    fn extraction_of_delta_field_returns_the_node() {
        let spec = small_spec();
        let mut raw = vec![0.0; spec.node_count()];
        raw[spec.node_index(5, 6, 7)] = 1.0;
        let field = HeatmapField::from_raw_scores(spec, 1, raw).unwrap();
        let kps = extract_keypoints(&field).unwrap();
        assert_abs_diff_eq!(
            (kps.point(0).unwrap() - spec.node_position(5, 6, 7)).norm(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn extraction_of_symmetric_two_node_field_is_midpoint() {
        let spec = small_spec();
        let mut raw = vec![0.0; spec.node_count()];
        raw[spec.node_index(2, 2, 2)] = 0.5;
        raw[spec.node_index(8, 2, 2)] = 0.5;
        let field = HeatmapField::from_raw_scores(spec, 1, raw).unwrap();
        let kps = extract_keypoints(&field).unwrap();
        let mid = (spec.node_position(2, 2, 2) + spec.node_position(8, 2, 2)) / 2.0;
        assert_abs_diff_eq!((kps.point(0).unwrap() - mid).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn extraction_recovers_discretized_gaussian_mean() {
        let spec =
            VolumeSpec::from_half_extent(Point3::new(0.0, 0.0, 0.9), [0.1; 3], 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            // Random in-volume mean, at least 3σ from the boundary.
            let mean = Point3::new(
                (rng.random::<f64>() - 0.5) * 0.06,
                (rng.random::<f64>() - 0.5) * 0.06,
                0.9 + (rng.random::<f64>() - 0.5) * 0.06,
            );
            let sigma = 3.0 * spec.mean_cell();
            let target = TargetHeatmap::new(mean, sigma).unwrap();
            let raw = discretize_target(&spec, &target).unwrap();
            let field = HeatmapField::from_raw_scores(spec, 1, raw).unwrap();
            let got = extract_keypoints(&field).unwrap().point(0).unwrap();
            assert!(
                (got - mean).norm() < 0.1 * spec.mean_cell(),
                "expectation error {}",
                (got - mean).norm()
            );
        }
    }
}
