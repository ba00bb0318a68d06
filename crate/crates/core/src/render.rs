//! Synthetic depth and feature map oracles.
//!
//! Both maps come from one rasterization pass so their object masks agree
//! exactly: surface points are splatted with z-buffering, then every model
//! keypoint stamps its own camera-frame depth (and descriptor) at its
//! projected pixel. The stamps make the maps ground-truth oracles for the
//! quantities the fusion pipelines actually consume — without them an
//! interior keypoint (the centroid) could only ever read the depth of the
//! surface in front of it.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::{project, CameraView, Point3, Pose};
use crate::model::ObjectModel;
use crate::scene::NoiseModel;

/// Descriptor channel count: 3 model-frame coordinates plus a fixed
/// positional encoding.
pub const FEATURE_CHANNELS: usize = 8;
/// Reserved sentinel for background pixels; outside every encoding range.
pub const NULL_DESCRIPTOR: f32 = -1000.0;
/// Spatial frequency of the positional-encoding channels (rad/m).
const ENCODING_FREQ: f64 = core::f64::consts::TAU / 0.3;
/// Surface splat radius in pixels (a (2r+1)² box per point). Zero: each
/// surfel marks only its own pixel, so the rendered mask never dilates past
/// the true silhouette — dilation reads as a coherent "object is larger than
/// the model" signal downstream. Surface sampling must be at least as fine
/// as the smallest pixel footprint to avoid holes.
const SPLAT_RADIUS: i32 = 0;

/// Dense per-pixel descriptors; background pixels hold [`NULL_DESCRIPTOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn descriptor(&self, x: u32, y: u32) -> &[f32] {
        let idx = (y as usize * self.width as usize + x as usize) * self.channels;
        &self.data[idx..idx + self.channels]
    }

    pub fn is_object(&self, x: u32, y: u32) -> bool {
        self.descriptor(x, y)[0] != NULL_DESCRIPTOR
    }
}

/// Per-pixel depth in meters with an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn depth(&self, x: u32, y: u32) -> Option<f64> {
        let idx = y as usize * self.width as usize + x as usize;
        self.valid[idx].then(|| self.data[idx])
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[y as usize * self.width as usize + x as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Encodes a model-frame coordinate into a descriptor.
pub fn encode_descriptor(coord: Point3, out: &mut [f32]) {
    out[0] = coord.x as f32;
    out[1] = coord.y as f32;
    out[2] = coord.z as f32;
    out[3] = (ENCODING_FREQ * coord.x).sin() as f32;
    out[4] = (ENCODING_FREQ * coord.x).cos() as f32;
    out[5] = (ENCODING_FREQ * coord.y).sin() as f32;
    out[6] = (ENCODING_FREQ * coord.y).cos() as f32;
    out[7] = (ENCODING_FREQ * coord.z).sin() as f32;
}

/// Decodes the model-frame coordinate from a descriptor, or `None` for the
/// background sentinel and for the all-zero "unfilled" value a feature volume
/// uses when a voxel projects outside the image.
pub fn decode_descriptor(desc: &[f32]) -> Option<Point3> {
    if desc[0] == NULL_DESCRIPTOR {
        return None;
    }
    if desc.iter().all(|&c| c == 0.0) {
        return None;
    }
    Some(Point3::new(desc[0] as f64, desc[1] as f64, desc[2] as f64))
}

/// Depth tolerance (meters) within which the surfel nearest the pixel center
/// wins over a marginally nearer one. Plain min-z splatting would
/// systematically pick the camera-near surfel of each 3×3 splat on oblique
/// faces, biasing every descriptor toward the near side of its pixel.
const SPLAT_DEPTH_TOL: f64 = 0.004;

/// One rasterized pixel: camera-frame depth, the model-frame coordinate of
/// the point seen there and the distance of its projection to the pixel
/// center.
#[derive(Clone, Copy)]
struct Fragment {
    z: f64,
    coord: Point3,
    pixel_dist: f64,
}

/// Splats surface points (depth-aware nearest-projection z-buffer, radius
/// [`SPLAT_RADIUS`]), then stamps each keypoint's exact depth/coordinate at
/// its projected pixel. Stamps z-buffer among themselves; with
/// `overwrite_stamps` they also take precedence over surface splats (the
/// depth oracle wants exact keypoint depth at keypoint pixels), otherwise
/// they only fill pixels the splats missed (a feature map must keep the
/// visible surfel's descriptor, or interpolated reads near keypoint pixels
/// would blend in off-surface coordinates). Either way the two maps cover
/// exactly the same pixels.
fn rasterize(
    model: &ObjectModel,
    view: &CameraView,
    gt_pose: &Pose,
    overwrite_stamps: bool,
) -> Vec<Option<Fragment>> {
    let w = view.intrinsics.width as i64;
    let h = view.intrinsics.height as i64;
    let mut surface: Vec<Option<Fragment>> = vec![None; (w * h) as usize];

    for p_model in model.surface_points() {
        let p_world = gt_pose.transform(*p_model);
        let Ok((pixel, z)) = project(view, p_world) else {
            continue;
        };
        let cx = pixel.x.round() as i64;
        let cy = pixel.y.round() as i64;
        for dy in -SPLAT_RADIUS as i64..=SPLAT_RADIUS as i64 {
            for dx in -SPLAT_RADIUS as i64..=SPLAT_RADIUS as i64 {
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                let idx = (y * w + x) as usize;
                let pixel_dist =
                    ((pixel.x - x as f64).powi(2) + (pixel.y - y as f64).powi(2)).sqrt();
                let replace = match &surface[idx] {
                    None => true,
                    Some(f) => {
                        z < f.z - SPLAT_DEPTH_TOL
                            || (z < f.z + SPLAT_DEPTH_TOL && pixel_dist < f.pixel_dist)
                    }
                };
                if replace {
                    surface[idx] = Some(Fragment {
                        z,
                        coord: *p_model,
                        pixel_dist,
                    });
                }
            }
        }
    }

    for kp in model.keypoints() {
        let p_world = gt_pose.transform(*kp);
        let Ok((pixel, z)) = project(view, p_world) else {
            continue;
        };
        let (x, y) = (pixel.x.round() as i64, pixel.y.round() as i64);
        if x < 0 || y < 0 || x >= w || y >= h {
            continue;
        }
        let idx = (y * w + x) as usize;
        let replace = match surface[idx] {
            // Another keypoint already stamped here (exactly at its own z):
            // keep the nearer one.
            Some(f) if is_stamp(model, f) => z < f.z,
            Some(_) => overwrite_stamps,
            None => true,
        };
        if replace {
            surface[idx] = Some(Fragment {
                z,
                coord: *kp,
                pixel_dist: 0.0,
            });
        }
    }
    surface
}

fn is_stamp(model: &ObjectModel, fragment: Fragment) -> bool {
    model.keypoints().iter().any(|kp| *kp == fragment.coord)
}

/// Renders the ground-truth depth oracle: rasterized depths with Gaussian
/// noise (`depth_sigma`) and quantization to multiples of `depth_quantum`.
pub fn render_depth_oracle(
    model: &ObjectModel,
    view: &CameraView,
    gt_pose: &Pose,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> DepthMap {
    let fragments = rasterize(model, view, gt_pose, true);
    let n = fragments.len();
    let mut data = vec![0.0f64; n];
    let mut valid = vec![false; n];
    for (idx, frag) in fragments.iter().enumerate() {
        let Some(frag) = frag else { continue };
        let mut z = frag.z;
        if noise.depth_sigma > 0.0 {
            z += noise.depth_sigma * rng.sample::<f64, _>(StandardNormal);
        }
        if noise.depth_quantum > 0.0 {
            z = (z / noise.depth_quantum).round() * noise.depth_quantum;
        }
        if z > 0.0 {
            data[idx] = z;
            valid[idx] = true;
        }
    }
    DepthMap {
        width: view.intrinsics.width,
        height: view.intrinsics.height,
        data,
        valid,
    }
}

/// Renders the feature-extractor oracle: each object pixel's descriptor
/// encodes the model-frame coordinate of the point seen there (perturbed by
/// `feature_sigma`); background pixels carry the null descriptor.
pub fn synth_feature_map(
    model: &ObjectModel,
    view: &CameraView,
    gt_pose: &Pose,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> FeatureMap {
    let fragments = rasterize(model, view, gt_pose, true);
    let mut data = vec![NULL_DESCRIPTOR; fragments.len() * FEATURE_CHANNELS];
    let mut desc = [0.0f32; FEATURE_CHANNELS];
    for (idx, frag) in fragments.iter().enumerate() {
        let Some(frag) = frag else { continue };
        encode_descriptor(frag.coord, &mut desc);
        if noise.feature_sigma > 0.0 {
            for c in desc.iter_mut() {
                *c += (noise.feature_sigma * rng.sample::<f64, _>(StandardNormal)) as f32;
            }
        }
        data[idx * FEATURE_CHANNELS..(idx + 1) * FEATURE_CHANNELS].copy_from_slice(&desc);
    }
    FeatureMap {
        width: view.intrinsics.width,
        height: view.intrinsics.height,
        channels: FEATURE_CHANNELS,
        data,
    }
}
