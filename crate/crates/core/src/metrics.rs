//! ADD / ADD-S pose metrics, the diameter-fraction success rule, 3D keypoint
//! errors and recall-vs-baseline curves.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use thiserror::Error;

use crate::fusion::Keypoints3D;
use crate::geometry::Pose;
use crate::model::ObjectModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("model has no points")]
    EmptyModel,
    #[error("no valid keypoints to compare")]
    NoValidPoints,
}

/// Mean distance between model points under the two poses (index-matched).
pub fn add_metric(model: &ObjectModel, pred: &Pose, gt: &Pose) -> Result<f64, MetricError> {
    let points = model.surface_points();
    if points.is_empty() {
        return Err(MetricError::EmptyModel);
    }
    let sum: f64 = points
        .iter()
        .map(|p| (gt.transform(*p) - pred.transform(*p)).norm())
        .sum();
    Ok(sum / points.len() as f64)
}

/// Mean closest-point distance between the two transformed models, for
/// symmetric objects. Exhaustive O(M²) nearest neighbor.
pub fn adds_metric(model: &ObjectModel, pred: &Pose, gt: &Pose) -> Result<f64, MetricError> {
    let points = model.surface_points();
    if points.is_empty() {
        return Err(MetricError::EmptyModel);
    }
    let gt_points: Vec<_> = points.iter().map(|p| gt.transform(*p)).collect();
    let mut sum = 0.0;
    for p in points {
        let q = pred.transform(*p);
        let best = gt_points
            .iter()
            .map(|g| (g - q).norm_squared())
            .fold(f64::INFINITY, f64::min);
        sum += best.sqrt();
    }
    Ok(sum / points.len() as f64)
}

/// Success rule: the metric is strictly below `fraction` of the diameter.
pub fn success(add_or_adds: f64, diameter: f64, fraction: f64) -> bool {
    add_or_adds < fraction * diameter
}

pub const SUCCESS_FRACTION: f64 = 0.1;

/// Per-point Euclidean errors and their mean over valid points.
pub struct KeypointError {
    /// One entry per keypoint; `None` where either point is invalid.
    pub per_point: Vec<Option<f64>>,
    pub mean: f64,
    pub valid_count: usize,
}

pub fn keypoint_error(
    pred: &Keypoints3D,
    gt: &Keypoints3D,
) -> Result<KeypointError, MetricError> {
    assert_eq!(pred.len(), gt.len());
    let mut per_point = Vec::with_capacity(pred.len());
    let mut sum = 0.0;
    let mut valid_count = 0usize;
    for i in 0..pred.len() {
        match (pred.point(i), gt.point(i)) {
            (Some(p), Some(g)) => {
                let d = (p - g).norm();
                per_point.push(Some(d));
                sum += d;
                valid_count += 1;
            }
            _ => per_point.push(None),
        }
    }
    if valid_count == 0 {
        return Err(MetricError::NoValidPoints);
    }
    Ok(KeypointError {
        per_point,
        mean: sum / valid_count as f64,
        valid_count,
    })
}

/// One recall bin: baseline range, recall fraction and sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallBin {
    pub baseline_low: f64,
    pub baseline_high: f64,
    pub recall: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecallCurve {
    pub bins: Vec<RecallBin>,
}

pub const RECALL_THRESHOLD: f64 = 0.03;

/// Bins keypoint errors by baseline; recall is the fraction of errors
/// strictly below `threshold` per bin. Empty bins are omitted.
pub fn recall_curve(
    samples: &[(f64, Vec<f64>)],
    threshold: f64,
    bin_width: f64,
) -> RecallCurve {
    let mut totals: Vec<(usize, usize, usize)> = Vec::new(); // (bin, hits, count)
    for (baseline, errors) in samples {
        let bin = (baseline / bin_width).floor() as usize;
        let entry = match totals.iter_mut().find(|(b, _, _)| *b == bin) {
            Some(e) => e,
            None => {
                totals.push((bin, 0, 0));
                totals.last_mut().unwrap()
            }
        };
        for e in errors {
            entry.2 += 1;
            if *e < threshold {
                entry.1 += 1;
            }
        }
    }
    totals.sort_by_key(|(b, _, _)| *b);
    RecallCurve {
        bins: totals
            .into_iter()
            .filter(|(_, _, count)| *count > 0)
            .map(|(bin, hits, count)| RecallBin {
                baseline_low: bin as f64 * bin_width,
                baseline_high: (bin + 1) as f64 * bin_width,
                recall: hits as f64 / count as f64,
                count,
            })
            .collect(),
    }
}
