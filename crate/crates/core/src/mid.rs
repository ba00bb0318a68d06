//! Mid fusion: regularizing the geometry volume into per-keypoint heatmap
//! fields and the coarse-to-fine keypoint pipeline.
//!
//! The default regularizer is analytic. Per voxel it scores cross-view
//! consistency `c = exp(-|dec_ref - dec_query|²/τ_c²)` between the two
//! decoded model-frame coordinates and a per-keypoint affinity
//! `a_i = exp(-|dec - P_i|²/τ_a²)`. Consistent voxels double as dense
//! model-to-scene correspondences, so the regularizer also aligns the model
//! to the voxel rays (object-space alignment against the pixel rays of both
//! views, robustly reweighted); the aligned keypoint positions anchor a
//! Gaussian proximity factor that localizes each field along the viewing
//! rays, where two-view consistency alone is weak at small parallax — the
//! role the learned volume network plays in the original pipeline. The
//! regularizer is a pluggable interface; any `FeatureVolume → HeatmapField`
//! function may substitute.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::fusion::Keypoints3D;
use crate::geometry::{backproject, project, CameraView, Point2, Point3, Pose};
use crate::model::ObjectModel;
use crate::render::{decode_descriptor, FeatureMap};
use crate::scene::Detection2D;
use crate::solver::kabsch_from_pairs;
use crate::volume::{
    build_volume, extract_keypoints, FeatureVolume, HeatmapField, TargetHeatmap, VolumeError,
    VolumeSpec,
};

/// Anything that turns a feature volume into per-keypoint heatmap fields.
/// A learned model can substitute for the analytic default.
pub trait VolumeRegularizer {
    fn regularize(
        &self,
        volume: &FeatureVolume,
        model: &ObjectModel,
    ) -> Result<HeatmapField, VolumeError>;
}

/// The default analytic cross-view matching regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingRegularizer {
    /// Cross-view decode mismatch scale τ_c (meters).
    pub tau_consistency: f64,
    /// Keypoint affinity scale τ_a (meters).
    pub tau_affinity: f64,
    /// Width of each keypoint's field, in cells (σ of the proximity factor).
    pub sigma_cells: f64,
    /// Score floor for voxels without local matching evidence, relative to a
    /// perfectly consistent voxel. Keeps fields well-defined around keypoints
    /// on surfaces invisible to both views.
    pub prior_blend: f64,
    /// Robust reweighting scale for the ray alignment (meters).
    pub tau_residual: f64,
    /// Floor of the shrinking trim scale in the final alignment rounds (meters).
    pub trim_floor: f64,
    pub alignment_iterations: usize,
}

impl Default for MatchingRegularizer {
    fn default() -> Self {
        Self {
            tau_consistency: 0.003,
            tau_affinity: 0.01,
            sigma_cells: 2.0,
            prior_blend: 0.02,
            tau_residual: 0.02,
            trim_floor: 0.002,
            alignment_iterations: 12,
        }
    }
}

/// One node with mutually consistent decodings.
struct NodeMatch {
    node: usize,
    ref_pixel_key: u64,
    ref_pixel: Point2,
    query_pixel: Point2,
    pos: Point3,
    dec: Point3,
    consistency: f64,
}

/// All nodes sharing one reference pixel form a column along that pixel's
/// viewing ray; the consistency-weighted collapse of a column is a soft
/// stereo match: one model-frame anchor paired with a reference ray, a
/// matched query ray and their closest-approach midpoint.
struct RayColumn {
    weight: f64,
    dec: Point3,
    midpoint: Point3,
    ref_origin: Point3,
    ref_dir: Point3,
    query_origin: Point3,
    query_dir: Point3,
}

impl MatchingRegularizer {
    /// Decodes both halves of every voxel and scores cross-view consistency.
    fn collect_matches(&self, volume: &FeatureVolume) -> (Vec<NodeMatch>, Vec<f64>) {
        let spec = &volume.spec;
        let n = spec.node_count();
        let mut matches = Vec::new();
        let mut consistency = vec![0.0f64; n];
        let inv_tau2 = 1.0 / (self.tau_consistency * self.tau_consistency);
        let ref_cam_to_world = volume.views[0].world_to_camera.inverse();
        let width = volume.views[0].intrinsics.width as u64;
        for idx in 0..n {
            let Some(dec_ref) = decode_descriptor(volume.half(idx, 0)) else {
                continue;
            };
            let Some(dec_query) = decode_descriptor(volume.half(idx, 1)) else {
                continue;
            };
            let c = (-(dec_ref - dec_query).norm_squared() * inv_tau2).exp();
            if c <= 1e-8 {
                continue;
            }
            let (i, j, k) = spec.node_coords(idx);
            let pos = spec.node_position(i, j, k);
            let p_world = ref_cam_to_world.transform(pos);
            let (Ok((ref_pixel, _)), Ok((query_pixel, _))) = (
                project(&volume.views[0], p_world),
                project(&volume.views[1], p_world),
            ) else {
                continue;
            };
            consistency[idx] = c;
            let key = ref_pixel.y.round() as u64 * width + ref_pixel.x.round() as u64;
            matches.push(NodeMatch {
                node: idx,
                ref_pixel_key: key,
                ref_pixel,
                query_pixel,
                pos,
                dec: (dec_ref + dec_query) / 2.0,
                consistency: c,
            });
        }
        (matches, consistency)
    }

    fn collapse_columns(&self, volume: &FeatureVolume, matches: &mut [NodeMatch]) -> Vec<RayColumn> {
        matches.sort_unstable_by_key(|m| m.ref_pixel_key);
        let to_ref = volume.views[0].world_to_camera;
        let centers = volume.camera_centers();
        let mut columns = Vec::new();
        let mut start = 0usize;
        while start < matches.len() {
            let key = matches[start].ref_pixel_key;
            let mut end = start;
            let mut w = 0.0;
            let mut dec = Point3::zeros();
            let mut pos = Point3::zeros();
            let mut ref_px = Point2::zeros();
            let mut query_px = Point2::zeros();
            while end < matches.len() && matches[end].ref_pixel_key == key {
                let m = &matches[end];
                w += m.consistency;
                dec += m.consistency * m.dec;
                pos += m.consistency * m.pos;
                ref_px += m.consistency * m.ref_pixel;
                query_px += m.consistency * m.query_pixel;
                end += 1;
            }
            start = end;
            if w <= 1e-12 {
                continue;
            }
            let ref_dir = to_ref.rotate(volume.views[0].pixel_ray(ref_px / w));
            let query_dir = to_ref.rotate(volume.views[1].pixel_ray(query_px / w));
            let midpoint = ray_midpoint(centers[0], ref_dir, centers[1], query_dir)
                .unwrap_or(pos / w);
            columns.push(RayColumn {
                weight: w,
                dec: dec / w,
                midpoint,
                ref_origin: centers[0],
                ref_dir,
                query_origin: centers[1],
                query_dir,
            });
        }
        columns
    }

    /// Aligns the model to the collapsed ray columns: each iteration projects
    /// the transformed anchors onto both rays of their column, re-solves the
    /// weighted closed-form alignment (object-space iteration), then applies
    /// an exact line search of the ray-perpendicular cost along the viewing
    /// direction. The projection fixpoint alone barely moves the depth of
    /// the solution at small parallax, where depth is constrained by
    /// apparent scale rather than by ray vergence; the line-search step
    /// applies that constraint in full. Residual reweighting uses
    /// ray-perpendicular distances only, which carry no depth bias.
    fn align(&self, columns: &[RayColumn]) -> Result<Pose, VolumeError> {
        let empty = VolumeError::EmptyField { keypoint: 0 };
        if columns.len() < 3 {
            return Err(empty);
        }
        let mut pose =
            kabsch_from_pairs(columns.iter().map(|c| (c.dec, c.midpoint, c.weight)))
                .map_err(|_| empty.clone())?;

        let inv_tau_r2 = 1.0 / (self.tau_residual * self.tau_residual);
        for iter in 0..self.alignment_iterations {
            let robust = iter >= self.alignment_iterations / 2;
            let weight_of = |col: &RayColumn, p: &Point3| {
                let mut w = col.weight;
                if robust {
                    let d2 = ray_perp_sq(col.ref_origin, col.ref_dir, *p)
                        .max(ray_perp_sq(col.query_origin, col.query_dir, *p));
                    w *= (-d2 * inv_tau_r2).exp();
                }
                w
            };

            let mut pairs: Vec<(Point3, Point3, f64)> = Vec::with_capacity(2 * columns.len());
            for col in columns {
                let p = pose.transform(col.dec);
                let w = weight_of(col, &p);
                if w <= 1e-12 {
                    continue;
                }
                pairs.push((col.dec, foot_on_ray(col.ref_origin, col.ref_dir, p), w));
                pairs.push((col.dec, foot_on_ray(col.query_origin, col.query_dir, p), w));
            }
            let mut next = kabsch_from_pairs(pairs.into_iter()).map_err(|_| empty.clone())?;

            // Depth line search: minimize Σ w·dist⊥²(rays, θ·dec + Δ·ẑ),
            // quadratic in Δ, so the optimum is closed-form.
            let mut centroid = Point3::zeros();
            let mut w_total = 0.0;
            for col in columns {
                centroid += col.weight * next.transform(col.dec);
                w_total += col.weight;
            }
            let z_dir = (centroid / w_total).normalize();
            let mut num = 0.0;
            let mut den = 0.0;
            for col in columns {
                let p = next.transform(col.dec);
                let w = weight_of(col, &p);
                for (o, d) in [
                    (col.ref_origin, col.ref_dir),
                    (col.query_origin, col.query_dir),
                ] {
                    let perp = |v: Point3| v - d * d.dot(&v);
                    let r = perp(p - o);
                    let dz = perp(z_dir);
                    num += w * dz.dot(&r);
                    den += w * dz.norm_squared();
                }
            }
            if den > 1e-12 {
                let delta = -num / den;
                next = Pose::new(*next.rotation(), next.translation() + z_dir * delta)
                    .expect("translated pose keeps its rotation");
            }

            let step = pose.rotation_geodesic(&next) + pose.translation_distance(&next);
            pose = next;
            if step < 1e-12 {
                break;
            }
        }

        // Trim rounds: rim and crease pixels decode millimeter-scale junk
        // that the fixed-τ reweighting keeps; shrink the scale toward the
        // median residual so the self-consistent core carries the fit.
        let mut residuals: Vec<f64> = Vec::with_capacity(columns.len());
        for _ in 0..3 {
            residuals.clear();
            for col in columns {
                let p = pose.transform(col.dec);
                residuals.push(
                    ray_perp_sq(col.ref_origin, col.ref_dir, p)
                        .max(ray_perp_sq(col.query_origin, col.query_dir, p))
                        .sqrt(),
                );
            }
            let mut sorted = residuals.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let tau = (3.0 * sorted[sorted.len() / 2]).max(self.trim_floor);
            let inv_tau2 = 1.0 / (tau * tau);
            let mut pairs: Vec<(Point3, Point3, f64)> = Vec::with_capacity(2 * columns.len());
            for (col, r) in columns.iter().zip(residuals.iter()) {
                let w = col.weight * (-r * r * inv_tau2).exp();
                if w <= 1e-12 {
                    continue;
                }
                let p = pose.transform(col.dec);
                pairs.push((col.dec, foot_on_ray(col.ref_origin, col.ref_dir, p), w));
                pairs.push((col.dec, foot_on_ray(col.query_origin, col.query_dir, p), w));
            }
            pose = kabsch_from_pairs(pairs.into_iter()).unwrap_or(pose);
        }
        Ok(pose)
    }
}

impl MatchingRegularizer {
    /// The model-to-volume pose implied by the consistent voxels; exposed
    /// for diagnostics and tests.
    pub fn align_pose(&self, volume: &FeatureVolume) -> Result<Pose, VolumeError> {
        let (mut matches, _) = self.collect_matches(volume);
        let columns = self.collapse_columns(volume, &mut matches);
        self.align(&columns)
    }
}

/// Closest point to `p` on the ray `origin + s·dir`, `s > 0`.
fn foot_on_ray(origin: Point3, dir: Point3, p: Point3) -> Point3 {
    let s = dir.dot(&(p - origin)).max(1e-3);
    origin + dir * s
}

fn ray_perp_sq(origin: Point3, dir: Point3, p: Point3) -> f64 {
    (p - foot_on_ray(origin, dir, p)).norm_squared()
}

/// Midpoint of the closest approach between two rays; `None` when they are
/// near parallel.
fn ray_midpoint(o1: Point3, d1: Point3, o2: Point3, d2: Point3) -> Option<Point3> {
    let cross_dot = d1.dot(&d2);
    let denom = 1.0 - cross_dot * cross_dot;
    if denom < 1e-10 {
        return None;
    }
    let delta = o2 - o1;
    let s1 = (delta.dot(&d1) - cross_dot * delta.dot(&d2)) / denom;
    let s2 = (cross_dot * delta.dot(&d1) - delta.dot(&d2)) / denom;
    Some((o1 + d1 * s1 + o2 + d2 * s2) / 2.0)
}

impl VolumeRegularizer for MatchingRegularizer {
    fn regularize(
        &self,
        volume: &FeatureVolume,
        model: &ObjectModel,
    ) -> Result<HeatmapField, VolumeError> {
        let spec = volume.spec;
        let n = spec.node_count();
        let (mut matches, consistency) = self.collect_matches(volume);
        let columns = self.collapse_columns(volume, &mut matches);
        let aligned = self.align(&columns)?;

        let n_kp = model.keypoint_count();
        let mut raw = vec![0.0f64; n_kp * n];
        let sigma = self.sigma_cells * spec.mean_cell();
        let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
        let inv_tau_a2 = 1.0 / (self.tau_affinity * self.tau_affinity);
        let reach = 4.0 * sigma;

        // Decoded coordinates per matched node, for the affinity term.
        let mut decoded: Vec<Option<Point3>> = vec![None; n];
        for m in &matches {
            decoded[m.node] = Some(m.dec);
        }

        for (kp_idx, kp) in model.keypoints().iter().enumerate() {
            let center = aligned.transform(*kp);
            let out = &mut raw[kp_idx * n..(kp_idx + 1) * n];
            let lo = spec.grid_coords(center - Point3::new(reach, reach, reach));
            let hi = spec.grid_coords(center + Point3::new(reach, reach, reach));
            let mut range = [(0usize, 0usize); 3];
            let mut empty = false;
            for axis in 0..3 {
                let lo_i = lo[axis].ceil().max(0.0) as usize;
                let hi_i = hi[axis].floor().min((spec.dims[axis] - 1) as f64);
                if hi_i < 0.0 || lo_i as f64 > hi_i {
                    empty = true;
                    break;
                }
                range[axis] = (lo_i, hi_i as usize);
            }
            if empty {
                continue; // normalization reports the empty field
            }
            for k in range[2].0..=range[2].1 {
                for j in range[1].0..=range[1].1 {
                    for i in range[0].0..=range[0].1 {
                        let node = spec.node_index(i, j, k);
                        let prox =
                            (-(spec.node_position(i, j, k) - center).norm_squared()
                                * inv_two_sigma2)
                                .exp();
                        let evidence = match decoded[node] {
                            Some(dec) => {
                                consistency[node]
                                    * (-(dec - kp).norm_squared() * inv_tau_a2).exp()
                            }
                            None => 0.0,
                        };
                        out[node] = (self.prior_blend + evidence) * prox;
                    }
                }
            }
        }
        HeatmapField::from_raw_scores(spec, n_kp, raw)
    }
}

/// Coarse-to-fine pipeline parameters; grid sizes follow the evaluation
/// setup (1 cm coarse cells over ±0.3 m, 5 mm fine cells over a
/// diameter-dependent range).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidFusionConfig {
    pub coarse_cell: f64,
    pub coarse_half_extent: f64,
    pub fine_cell: f64,
    /// Fine-volume half extent as a fraction of the object diameter.
    pub fine_half_extent_diameters: f64,
}

impl Default for MidFusionConfig {
    fn default() -> Self {
        Self {
            coarse_cell: 0.01,
            coarse_half_extent: 0.3,
            fine_cell: 0.005,
            fine_half_extent_diameters: 0.75,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MidFusionResult {
    pub coarse: Keypoints3D,
    pub fine: Keypoints3D,
    pub coarse_spec: VolumeSpec,
    pub fine_spec: VolumeSpec,
    /// Fields are retained only when requested; they are large.
    pub coarse_field: Option<HeatmapField>,
    pub fine_field: Option<HeatmapField>,
}

/// Runs build → regularize → extract at the coarse level, recenters a fine
/// volume at the coarse keypoint centroid, and returns both levels.
#[allow(clippy::too_many_arguments)]
pub fn refine_coarse_to_fine<R: VolumeRegularizer>(
    f_ref: &FeatureMap,
    f_query: &FeatureMap,
    ref_view: &CameraView,
    query_view: &CameraView,
    initial_guess: Point3,
    model: &ObjectModel,
    config: &MidFusionConfig,
    regularizer: &R,
    keep_fields: bool,
) -> Result<MidFusionResult, VolumeError> {
    let coarse_spec = VolumeSpec::from_half_extent(
        initial_guess,
        [config.coarse_half_extent; 3],
        config.coarse_cell,
    )?;
    let coarse_vol = build_volume(f_ref, f_query, ref_view, query_view, &coarse_spec)?;
    let coarse_field = regularizer.regularize(&coarse_vol, model)?;
    let coarse = extract_keypoints(&coarse_field)?;

    let mut fine_center = Point3::zeros();
    for (_, p) in coarse.iter_valid() {
        fine_center += p;
    }
    fine_center /= coarse.valid_count() as f64;

    let half = config.fine_half_extent_diameters * model.diameter();
    let fine_spec = VolumeSpec::from_half_extent(fine_center, [half; 3], config.fine_cell)?;
    let fine_vol = build_volume(f_ref, f_query, ref_view, query_view, &fine_spec)?;
    let fine_field = regularizer.regularize(&fine_vol, model)?;
    let fine = extract_keypoints(&fine_field)?;

    Ok(MidFusionResult {
        coarse,
        fine,
        coarse_spec,
        fine_spec,
        coarse_field: keep_fields.then_some(coarse_field),
        fine_field: keep_fields.then_some(fine_field),
    })
}

/// Initial volume-center guess: the detection centroid of the reference view
/// backprojected at `depth` (reference-camera frame).
pub fn detection_center_guess(
    detection: &Detection2D,
    view: &CameraView,
    depth: f64,
) -> Option<Point3> {
    if detection.keypoints.is_empty() {
        return None;
    }
    let mut centroid = Point2::zeros();
    for p in &detection.keypoints {
        centroid += p;
    }
    centroid /= detection.keypoints.len() as f64;
    let world = backproject(view, centroid, depth).ok()?;
    Some(view.world_to_camera.transform(world))
}

/// Gaussian target heatmaps centered on the ground-truth keypoints.
pub fn gt_targets(
    model: &ObjectModel,
    gt_pose: &Pose,
    sigma: f64,
) -> Result<Vec<TargetHeatmap>, VolumeError> {
    model
        .keypoints()
        .iter()
        .map(|kp| TargetHeatmap::new(gt_pose.transform(*kp), sigma))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::synth_feature_map;
    use crate::scene::{sample_scene, NoiseModel, SceneConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_model() -> ObjectModel {
        ObjectModel::parametric_box([0.08, 0.12, 0.05], 0.001, 9)
    }

    fn feature_maps(
        model: &ObjectModel,
        scene: &crate::scene::SceneSample,
        noise: &NoiseModel,
        seed: u64,
    ) -> (FeatureMap, FeatureMap) {
        let mut rng_r = ChaCha8Rng::seed_from_u64(seed);
        let mut rng_q = ChaCha8Rng::seed_from_u64(seed ^ 0xFEED);
        (
            synth_feature_map(model, &scene.ref_view, &scene.gt_pose, noise, &mut rng_r),
            synth_feature_map(model, &scene.query_view, &scene.gt_pose, noise, &mut rng_q),
        )
    }

    #[test]
    fn zero_noise_gt_centered_argmax_lands_near_keypoints() {
        let model = test_model();
        let cfg = SceneConfig::default();
        let scene = sample_scene(&model, &cfg, 0.15, 21).unwrap();
        let (f_ref, f_query) = feature_maps(&model, &scene, &NoiseModel::noiseless(), 1);
        let spec = VolumeSpec::from_half_extent(scene.gt_pose.translation(), [0.3; 3], 0.01)
            .unwrap();
        let vol = build_volume(&f_ref, &f_query, &scene.ref_view, &scene.query_view, &spec)
            .unwrap();
        let reg = MatchingRegularizer::default();
        let field = reg.regularize(&vol, &model).unwrap();
        for (kp_idx, kp) in model.keypoints().iter().enumerate() {
            let gt = scene.gt_pose.transform(*kp);
            let vals = field.values(kp_idx);
            let mut best = 0;
            for (i, v) in vals.iter().enumerate() {
                if *v > vals[best] {
                    best = i;
                }
            }
            let (i, j, k) = spec.node_coords(best);
            let err = (spec.node_position(i, j, k) - gt).norm();
            let cell_diag = (3.0f64).sqrt() * spec.mean_cell();
            assert!(err <= cell_diag + 1e-9, "kp {kp_idx}: argmax off by {err}");
        }
    }

    #[test]
    fn off_object_volume_yields_empty_field() {
        let model = test_model();
        let cfg = SceneConfig::default();
        let scene = sample_scene(&model, &cfg, 0.1, 5).unwrap();
        let (f_ref, f_query) = feature_maps(&model, &scene, &NoiseModel::noiseless(), 2);
        // Volume far off to the side of the object.
        let center = scene.gt_pose.translation() + Point3::new(5.0, 0.0, 0.0);
        let spec = VolumeSpec::from_half_extent(center, [0.3; 3], 0.01).unwrap();
        let vol = build_volume(&f_ref, &f_query, &scene.ref_view, &scene.query_view, &spec)
            .unwrap();
        let reg = MatchingRegularizer::default();
        assert!(matches!(
            reg.regularize(&vol, &model),
            Err(VolumeError::EmptyField { .. })
        ));
    }

    #[test]
    fn fields_are_normalized_distributions() {
        let model = test_model();
        let cfg = SceneConfig::default();
        let scene = sample_scene(&model, &cfg, 0.1, 9).unwrap();
        let (f_ref, f_query) = feature_maps(&model, &scene, &NoiseModel::default(), 3);
        let spec = VolumeSpec::from_half_extent(scene.gt_pose.translation(), [0.3; 3], 0.01)
            .unwrap();
        let vol = build_volume(&f_ref, &f_query, &scene.ref_view, &scene.query_view, &spec)
            .unwrap();
        let field = MatchingRegularizer::default().regularize(&vol, &model).unwrap();
        for kp in 0..field.keypoint_count() {
            let sum: f64 = field.values(kp).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(field.values(kp).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_noise_fine_keypoints_within_one_fine_cell() {
        let model = test_model();
        let cfg = SceneConfig::default();
        for seed in 30..40u64 {
            let scene = sample_scene(&model, &cfg, 0.12, seed).unwrap();
            let (f_ref, f_query) = feature_maps(&model, &scene, &NoiseModel::noiseless(), seed);
            let result = refine_coarse_to_fine(
                &f_ref,
                &f_query,
                &scene.ref_view,
                &scene.query_view,
                scene.gt_pose.translation(),
                &model,
                &MidFusionConfig::default(),
                &MatchingRegularizer::default(),
                false,
            )
            .unwrap();
            for (i, gt) in scene.gt_keypoints(&model).iter().enumerate() {
                let err = (result.fine.point(i).unwrap() - gt).norm();
                assert!(err < 0.005, "seed {seed} kp {i}: fine error {err}");
            }
        }
    }

    #[test]
    fn fine_level_improves_on_coarse_on_average() {
        let model = test_model();
        let cfg = SceneConfig::default();
        let mut coarse_total = 0.0;
        let mut fine_total = 0.0;
        for seed in 50..80u64 {
            let scene = sample_scene(&model, &cfg, 0.1, seed).unwrap();
            let (f_ref, f_query) = feature_maps(&model, &scene, &NoiseModel::noiseless(), seed);
            let result = refine_coarse_to_fine(
                &f_ref,
                &f_query,
                &scene.ref_view,
                &scene.query_view,
                scene.gt_pose.translation(),
                &model,
                &MidFusionConfig::default(),
                &MatchingRegularizer::default(),
                false,
            )
            .unwrap();
            for (i, gt) in scene.gt_keypoints(&model).iter().enumerate() {
                coarse_total += (result.coarse.point(i).unwrap() - gt).norm();
                fine_total += (result.fine.point(i).unwrap() - gt).norm();
            }
        }
        assert!(
            fine_total <= coarse_total,
            "fine {fine_total} vs coarse {coarse_total}"
        );
    }

    #[test]
    fn grid_sizes_follow_defaults() {
        let cfg = MidFusionConfig::default();
        assert_eq!(cfg.coarse_cell, 0.01);
        assert_eq!(cfg.fine_cell, 0.005);
    }
}
