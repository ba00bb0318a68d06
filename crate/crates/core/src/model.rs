//! Object models: surface point sets, diameters and keypoint selection.
//!
//! Models are point clouds in a model-local frame whose origin is the surface
//! centroid. Parametric generators (box, cylinder, tri-block) sample surfaces
//! on regular grids so that everything downstream is deterministic.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use thiserror::Error;

use crate::geometry::Point3;

pub const DEFAULT_KEYPOINT_COUNT: usize = 9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model has {got} points, need at least {need}")]
    TooFewPoints { got: usize, need: usize },
    #[error("stated diameter {stated:.6} does not match recomputed {actual:.6}")]
    DiameterMismatch { stated: f64, actual: f64 },
    #[error("keypoint {index} lies outside the model bounding sphere")]
    KeypointOutsideModel { index: usize },
    #[error("model file is malformed: {0}")]
    MalformedPly(String),
}

/// A rigid object: surface samples, diameter and the N pose keypoints,
/// all in the model frame (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    name: String,
    surface_points: Vec<Point3>,
    diameter: f64,
    keypoints: Vec<Point3>,
}

impl ObjectModel {
    /// Builds a model from surface points, recentering them on their centroid
    /// and selecting `n_keypoints` keypoints (centroid + farthest point
    /// sampling). The diameter is recomputed from the points.
    pub fn from_surface_points(
        name: &str,
        points: Vec<Point3>,
        n_keypoints: usize,
    ) -> Result<Self, ModelError> {
        if points.len() < n_keypoints.max(1) {
            return Err(ModelError::TooFewPoints {
                got: points.len(),
                need: n_keypoints.max(1),
            });
        }
        let centroid = centroid(&points);
        let surface_points: Vec<Point3> = points.iter().map(|p| p - centroid).collect();
        let diameter = max_pairwise_distance(&surface_points);
        let keypoints = select_keypoints(&surface_points, n_keypoints)?;
        let model = Self {
            name: name.to_string(),
            surface_points,
            diameter,
            keypoints,
        };
        model.check_invariants()?;
        Ok(model)
    }

    fn check_invariants(&self) -> Result<(), ModelError> {
        let actual = max_pairwise_distance(&self.surface_points);
        if (actual - self.diameter).abs() > 1e-9 {
            return Err(ModelError::DiameterMismatch {
                stated: self.diameter,
                actual,
            });
        }
        let center = centroid(&self.surface_points);
        let radius = self
            .surface_points
            .iter()
            .map(|p| (p - center).norm())
            .fold(0.0, f64::max);
        for (index, kp) in self.keypoints.iter().enumerate() {
            if (kp - center).norm() > radius + 1e-9 {
                return Err(ModelError::KeypointOutsideModel { index });
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn surface_points(&self) -> &[Point3] {
        &self.surface_points
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn keypoints(&self) -> &[Point3] {
        &self.keypoints
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoints.len()
    }

    /// Axis-aligned box with the given edge lengths, surfaces sampled at
    /// `step` meters.
    pub fn parametric_box(extents: [f64; 3], step: f64, n_keypoints: usize) -> Self {
        let pts = sample_box_surface(extents, step);
        Self::from_surface_points("box", pts, n_keypoints).expect("parametric box is well-formed")
    }

    /// Cylinder along +z; rotationally symmetric, used for ADD-S cases.
    pub fn parametric_cylinder(radius: f64, height: f64, step: f64, n_keypoints: usize) -> Self {
        let mut pts = Vec::new();
        let circumference = 2.0 * core::f64::consts::PI * radius;
        let n_around = (circumference / step).ceil().max(3.0) as usize;
        let n_along = (height / step).ceil().max(1.0) as usize;
        for i in 0..n_around {
            let phi = 2.0 * core::f64::consts::PI * i as f64 / n_around as f64;
            let (s, c) = phi.sin_cos();
            for j in 0..=n_along {
                let z = -height / 2.0 + height * j as f64 / n_along as f64;
                pts.push(Point3::new(radius * c, radius * s, z));
            }
        }
        // End caps on a polar grid.
        let n_rad = (radius / step).ceil().max(1.0) as usize;
        for k in 0..n_rad {
            let r = radius * k as f64 / n_rad as f64;
            let n_ring = ((2.0 * core::f64::consts::PI * r / step).ceil() as usize).max(1);
            for i in 0..n_ring {
                let phi = 2.0 * core::f64::consts::PI * i as f64 / n_ring as f64;
                let (s, c) = phi.sin_cos();
                pts.push(Point3::new(r * c, r * s, height / 2.0));
                pts.push(Point3::new(r * c, r * s, -height / 2.0));
            }
        }
        Self::from_surface_points("cylinder", pts, n_keypoints)
            .expect("parametric cylinder is well-formed")
    }

    /// Three stacked boxes of unequal size; breaks every symmetry so that
    /// ADD and pose errors are unambiguous.
    pub fn parametric_tri_block(scale: f64, step: f64, n_keypoints: usize) -> Self {
        let mut pts = sample_box_surface([1.0 * scale, 0.6 * scale, 0.25 * scale], step);
        let upper = sample_box_surface([0.45 * scale, 0.35 * scale, 0.25 * scale], step);
        pts.extend(upper.into_iter().map(|p| {
            Point3::new(
                p.x - 0.22 * scale,
                p.y + 0.05 * scale,
                p.z + 0.25 * scale,
            )
        }));
        let nose = sample_box_surface([0.2 * scale, 0.2 * scale, 0.4 * scale], step);
        pts.extend(
            nose.into_iter()
                .map(|p| Point3::new(p.x + 0.35 * scale, p.y - 0.12 * scale, p.z + 0.2 * scale)),
        );
        Self::from_surface_points("tri-block", pts, n_keypoints)
            .expect("parametric tri-block is well-formed")
    }

    /// Parses an ASCII PLY (vertex positions only).
    pub fn from_ply_str(name: &str, text: &str, n_keypoints: usize) -> Result<Self, ModelError> {
        let points = parse_ascii_ply(text)?;
        Self::from_surface_points(name, points, n_keypoints)
    }
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let mut sum = Point3::zeros();
    for p in points {
        sum += p;
    }
    sum / points.len() as f64
}

/// Maximum pairwise distance (exact).
///
/// Brute force would be O(M²); instead a lower bound from directional
/// extremes prunes the candidate set. For any pair, `‖p−q‖ ≤ r_p + r_q`
/// (radii about the centroid), so any pair beating the bound has both radii
/// above `bound − r_max` and survives the filter.
pub fn max_pairwise_distance(points: &[Point3]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let c = centroid(points);
    let radii: Vec<f64> = points.iter().map(|p| (p - c).norm()).collect();
    let r_max = radii.iter().cloned().fold(0.0, f64::max);

    // Extremal points along a direction fan.
    let mut dirs = Vec::with_capacity(26);
    for x in -1i32..=1 {
        for y in -1i32..=1 {
            for z in -1i32..=1 {
                if (x, y, z) != (0, 0, 0) {
                    dirs.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
    }
    let mut lower2 = 0.0f64;
    for dir in &dirs {
        let ext = argmax_by(points, |p| (p - c).dot(dir));
        for p in points {
            lower2 = lower2.max((p - points[ext]).norm_squared());
        }
    }

    let threshold = lower2.sqrt() - r_max;
    let candidates: Vec<usize> = (0..points.len())
        .filter(|&i| radii[i] >= threshold)
        .collect();
    let mut best2 = lower2;
    for (a, &i) in candidates.iter().enumerate() {
        for &j in &candidates[a + 1..] {
            let d2 = (points[i] - points[j]).norm_squared();
            if d2 > best2 {
                best2 = d2;
            }
        }
    }
    best2.sqrt()
}

/// Centroid plus `n - 1` farthest-point-sampled surface points.
///
/// The greedy set starts from the point farthest from the centroid and each
/// step adds the point maximizing the minimum distance to those already
/// chosen; ties break on the lowest index, so the selection is deterministic.
pub fn select_keypoints(model_points: &[Point3], n: usize) -> Result<Vec<Point3>, ModelError> {
    if n == 0 {
        return Err(ModelError::TooFewPoints { got: 0, need: 1 });
    }
    if model_points.len() < n {
        return Err(ModelError::TooFewPoints {
            got: model_points.len(),
            need: n,
        });
    }
    let c = centroid(model_points);
    let mut keypoints = Vec::with_capacity(n);
    keypoints.push(c);
    if n == 1 {
        return Ok(keypoints);
    }

    let start = argmax_by(model_points, |p| (p - c).norm_squared());
    let mut selected = Vec::with_capacity(n - 1);
    selected.push(start);
    let mut min_d2: Vec<f64> = model_points
        .iter()
        .map(|p| (p - model_points[start]).norm_squared())
        .collect();
    while selected.len() < n - 1 {
        let mut best_idx = 0;
        let mut best = f64::NEG_INFINITY;
        for (i, &d2) in min_d2.iter().enumerate() {
            if d2 > best {
                best = d2;
                best_idx = i;
            }
        }
        selected.push(best_idx);
        for (i, p) in model_points.iter().enumerate() {
            let d2 = (p - model_points[best_idx]).norm_squared();
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
        }
    }
    keypoints.extend(selected.into_iter().map(|i| model_points[i]));
    Ok(keypoints)
}

fn argmax_by(points: &[Point3], f: impl Fn(&Point3) -> f64) -> usize {
    let mut best_idx = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let v = f(p);
        if v > best {
            best = v;
            best_idx = i;
        }
    }
    best_idx
}

fn sample_box_surface(extents: [f64; 3], step: f64) -> Vec<Point3> {
    let h = [extents[0] / 2.0, extents[1] / 2.0, extents[2] / 2.0];
    let counts = [
        (extents[0] / step).ceil().max(1.0) as usize,
        (extents[1] / step).ceil().max(1.0) as usize,
        (extents[2] / step).ceil().max(1.0) as usize,
    ];
    let mut pts = Vec::new();
    let lin = |half: f64, n: usize, i: usize| -half + 2.0 * half * i as f64 / n as f64;
    // Two faces per axis.
    for ix in 0..=counts[0] {
        for iy in 0..=counts[1] {
            let (x, y) = (lin(h[0], counts[0], ix), lin(h[1], counts[1], iy));
            pts.push(Point3::new(x, y, -h[2]));
            pts.push(Point3::new(x, y, h[2]));
        }
    }
    for ix in 0..=counts[0] {
        for iz in 1..counts[2] {
            let (x, z) = (lin(h[0], counts[0], ix), lin(h[2], counts[2], iz));
            pts.push(Point3::new(x, -h[1], z));
            pts.push(Point3::new(x, h[1], z));
        }
    }
    for iy in 1..counts[1] {
        for iz in 1..counts[2] {
            let (y, z) = (lin(h[1], counts[1], iy), lin(h[2], counts[2], iz));
            pts.push(Point3::new(-h[0], y, z));
            pts.push(Point3::new(h[0], y, z));
        }
    }
    pts
}

fn parse_ascii_ply(text: &str) -> Result<Vec<Point3>, ModelError> {
    let mut lines = text.lines();
    let magic = lines.next().map(str::trim);
    if magic != Some("ply") {
        return Err(ModelError::MalformedPly("missing 'ply' magic".into()));
    }
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex_element = false;
    let mut property_names: Vec<String> = Vec::new();
    for line in lines.by_ref() {
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(ModelError::MalformedPly("only ascii format supported".into()));
                }
            }
            Some("element") => {
                let kind = tok.next().unwrap_or("");
                in_vertex_element = kind == "vertex";
                if in_vertex_element {
                    let count = tok
                        .next()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or_else(|| ModelError::MalformedPly("bad vertex count".into()))?;
                    vertex_count = Some(count);
                }
            }
            Some("property") if in_vertex_element => {
                let _ty = tok.next();
                if let Some(name) = tok.next() {
                    property_names.push(name.to_string());
                }
            }
            _ => {}
        }
    }
    let count = vertex_count.ok_or_else(|| ModelError::MalformedPly("no vertex element".into()))?;
    let ix = |name: &str| property_names.iter().position(|p| p == name);
    let (xi, yi, zi) = match (ix("x"), ix("y"), ix("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(ModelError::MalformedPly("vertex element lacks x/y/z".into())),
    };
    let mut points = Vec::with_capacity(count);
    for line in lines.take(count) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ModelError::MalformedPly(e.to_string()))?;
        if vals.len() < property_names.len() {
            return Err(ModelError::MalformedPly("short vertex line".into()));
        }
        points.push(Point3::new(vals[xi], vals[yi], vals[zi]));
    }
    if points.len() != count {
        return Err(ModelError::MalformedPly("fewer vertices than declared".into()));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn unit_cube_corners() -> Vec<Point3> {
        let mut pts = Vec::new();
        for &x in &[-0.5, 0.5] {
            for &y in &[-0.5, 0.5] {
                for &z in &[-0.5, 0.5] {
                    pts.push(Point3::new(x, y, z));
                }
            }
        }
        pts
    }

    /// Exhaustive re-implementation of the greedy selection used as an oracle.
    fn fps_oracle(points: &[Point3], n: usize) -> Vec<Point3> {
        let c = centroid(points);
        let mut out = vec![c];
        let mut selected: Vec<usize> = Vec::new();
        for _ in 0..n - 1 {
            let mut best_idx = 0;
            let mut best = f64::NEG_INFINITY;
            for (i, p) in points.iter().enumerate() {
                let score = if selected.is_empty() {
                    (p - c).norm_squared()
                } else {
                    selected
                        .iter()
                        .map(|&s| (p - points[s]).norm_squared())
                        .fold(f64::INFINITY, f64::min)
                };
                if score > best {
                    best = score;
                    best_idx = i;
                }
            }
            selected.push(best_idx);
            out.push(points[best_idx]);
        }
        out
    }

    #[test]
    fn cube_keypoints_match_exhaustive_oracle() {
        let pts = unit_cube_corners();
        let got = select_keypoints(&pts, 4).unwrap();
        let expected = fps_oracle(&pts, 4);
        assert_eq!(got.len(), 4);
        for (g, e) in got.iter().zip(expected.iter()) {
            assert_abs_diff_eq!((g - e).norm(), 0.0, epsilon = 1e-15);
        }
        // First surface pick and its antipode are a mutually-far pair.
        assert_abs_diff_eq!((got[1] - got[2]).norm(), 3.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn single_keypoint_is_centroid() {
        let pts = unit_cube_corners();
        let got = select_keypoints(&pts, 1).unwrap();
        assert_eq!(got.len(), 1);
        assert_abs_diff_eq!(got[0].norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn greedy_choice_is_maximal_at_each_step() {
        let model = ObjectModel::parametric_box([0.08, 0.12, 0.05], 0.01, 9);
        let pts = model.surface_points();
        let kps = model.keypoints();
        // Check every selected surface point scored at least as well as any
        // alternative, given the previously selected set.
        for step in 1..kps.len() {
            let prior = &kps[1..step];
            let score = |p: &Point3| {
                if prior.is_empty() {
                    p.norm_squared() // distance to centroid (origin)
                } else {
                    prior
                        .iter()
                        .map(|s| (p - s).norm_squared())
                        .fold(f64::INFINITY, f64::min)
                }
            };
            let chosen = score(&kps[step]);
            let best = pts.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
            assert!(chosen >= best - 1e-12, "step {step}: {chosen} < {best}");
        }
    }

    #[test]
    fn too_few_points_is_rejected() {
        let pts = vec![Point3::zeros(), Point3::new(1.0, 0.0, 0.0)];
        assert!(matches!(
            select_keypoints(&pts, 4),
            Err(ModelError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn diameter_is_recomputed_max_pairwise_distance() {
        let model = ObjectModel::parametric_box([0.08, 0.12, 0.05], 0.01, 9);
        let expected = (0.08f64.powi(2) + 0.12f64.powi(2) + 0.05f64.powi(2)).sqrt();
        assert_abs_diff_eq!(model.diameter(), expected, epsilon = 1e-12);
    }

    #[test]
    fn parametric_models_are_well_formed() {
        for model in [
            ObjectModel::parametric_box([0.08, 0.12, 0.05], 0.004, 9),
            ObjectModel::parametric_cylinder(0.04, 0.12, 0.004, 9),
            ObjectModel::parametric_tri_block(0.12, 0.004, 9),
        ] {
            assert_eq!(model.keypoint_count(), 9);
            assert!(model.diameter() > 0.05);
            // Model frame is centered on the surface centroid.
            assert_abs_diff_eq!(centroid(model.surface_points()).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn ply_round_trip() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 4\n\
                    property float x\nproperty float y\nproperty float z\n\
                    end_header\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n";
        let model = ObjectModel::from_ply_str("tiny", text, 4).unwrap();
        assert_eq!(model.surface_points().len(), 4);
        assert_abs_diff_eq!(model.diameter(), 2.0f64.sqrt(), epsilon = 1e-12);

        assert!(ObjectModel::from_ply_str("bad", "not a ply", 4).is_err());
    }
}
