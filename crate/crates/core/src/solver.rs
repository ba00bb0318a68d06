//! Closed-form rigid alignment and the soft RANSAC pose solver.
//!
//! The solver enumerates every 3-subset of valid keypoints, solves each by
//! SVD, scores each hypothesis by a soft inlier count
//! `s_k = Σ_i sigmoid(γ₁(γ₂ − d_{k,i}))` and aggregates the hypotheses into
//! one pose with the normalized scores: the translation as the weighted mean,
//! the rotation as the weighted chordal-L2 mean (SVD projection of the
//! weighted rotation sum). The aggregation is smooth in the predicted
//! keypoints; analytic derivatives of the weights and of the aggregated
//! translation are provided and validated against finite differences.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
#[cfg(not(feature = "std"))]
use num_traits::Float;
use thiserror::Error;

use crate::fusion::Keypoints3D;
use crate::geometry::{nearest_rotation, Point3, Pose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("need at least {need} valid keypoints, got {got}")]
    InsufficientKeypoints { got: usize, need: usize },
    #[error("degenerate point configuration (collinear or coincident)")]
    DegenerateConfiguration,
    #[error("all pose hypotheses were degenerate")]
    AllHypothesesDegenerate,
    #[error("total hypothesis weight {total:.3e} below the configured floor")]
    ZeroTotalWeight { total: f64 },
    #[error("gradient is undefined here (repeated singular values or zero residual)")]
    DegenerateGradient,
}

/// Soft RANSAC parameters: `sigmoid(γ₁(−d + γ₂))` per keypoint residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Sigmoid sharpness γ₁ (1/meters).
    pub gamma1: f64,
    /// Soft inlier distance threshold γ₂ (meters).
    pub gamma2: f64,
    /// Minimum total hypothesis weight before the solve is rejected.
    pub min_hypothesis_weight: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma1: 300.0,
            gamma2: 0.02,
            min_hypothesis_weight: 1e-9,
        }
    }
}

/// Diagnostics from a soft RANSAC solve: every non-degenerate hypothesis,
/// its raw soft inlier score and the skipped-triplet count.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    pub poses: Vec<Pose>,
    pub weights: Vec<f64>,
    pub triplets: Vec<[usize; 3]>,
    pub degenerate_count: usize,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weighted Kabsch over explicit `(model, predicted, weight)` pairs.
pub(crate) fn kabsch_from_pairs(
    pairs: impl Iterator<Item = (Point3, Point3, f64)>,
) -> Result<Pose, SolverError> {
    let mut w_sum = 0.0;
    let mut m_sum = Vector3::zeros();
    let mut p_sum = Vector3::zeros();
    let mut pm_sum = Matrix3::zeros();
    let mut count = 0usize;
    for (m, p, w) in pairs {
        if w <= 0.0 {
            continue;
        }
        w_sum += w;
        m_sum += w * m;
        p_sum += w * p;
        pm_sum += w * p * m.transpose();
        count += 1;
    }
    if count < 3 || w_sum <= 0.0 {
        return Err(SolverError::InsufficientKeypoints { got: count, need: 3 });
    }
    let m_bar = m_sum / w_sum;
    let p_bar = p_sum / w_sum;
    let cross = pm_sum - w_sum * p_bar * m_bar.transpose();
    let (rotation, _) = rotation_from_cross_covariance(&cross)?;
    let translation = p_bar - rotation * m_bar;
    Ok(Pose::new(rotation, translation).expect("kabsch rotation is orthonormal"))
}

/// SVD of the weighted cross-covariance with determinant-sign correction.
/// Returns the rotation and the SVD pieces needed by the gradient path.
fn rotation_from_cross_covariance(
    cross: &Matrix3<f64>,
) -> Result<(Matrix3<f64>, KabschSvd), SolverError> {
    let svd = cross.svd(true, true);
    let u = svd.u.ok_or(SolverError::DegenerateConfiguration)?;
    let v_t = svd.v_t.ok_or(SolverError::DegenerateConfiguration)?;
    let s = svd.singular_values;
    // Collinear or coincident points leave the cross-covariance rank ≤ 1.
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if sorted[0] <= 0.0 || sorted[1] < 1e-12 * sorted[0] {
        return Err(SolverError::DegenerateConfiguration);
    }
    let sign = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let rotation = u * d * v_t;
    Ok((
        rotation,
        KabschSvd {
            u,
            v: v_t.transpose(),
            singular_values: s,
            sign,
        },
    ))
}

struct KabschSvd {
    u: Matrix3<f64>,
    v: Matrix3<f64>,
    singular_values: Vector3<f64>,
    sign: f64,
}

/// Closed-form weighted rigid alignment of predicted keypoints to model
/// keypoints: `argmin_θ Σ w_i ‖θ·m_i − p̂_i‖²`. Invalid predictions are
/// skipped; at least 3 non-collinear valid pairs are required.
pub fn kabsch_align(
    model_kps: &[Point3],
    pred_kps: &Keypoints3D,
    weights: Option<&[f64]>,
) -> Result<Pose, SolverError> {
    assert_eq!(model_kps.len(), pred_kps.len());
    if let Some(w) = weights {
        assert_eq!(w.len(), model_kps.len());
    }
    let valid = pred_kps.valid_count();
    if valid < 3 {
        return Err(SolverError::InsufficientKeypoints { got: valid, need: 3 });
    }
    kabsch_from_pairs(pred_kps.iter_valid().map(|(i, p)| {
        let w = weights.map_or(1.0, |w| w[i]);
        (model_kps[i], p, w)
    }))
}

/// Distance of every predicted keypoint to its model keypoint under the
/// hypothesis pose; invalid predictions yield `+∞`.
pub fn hypothesis_distances(
    pose: &Pose,
    model_kps: &[Point3],
    pred_kps: &Keypoints3D,
) -> Vec<f64> {
    assert_eq!(model_kps.len(), pred_kps.len());
    (0..model_kps.len())
        .map(|i| match pred_kps.point(i) {
            Some(p) => (pose.transform(model_kps[i]) - p).norm(),
            None => f64::INFINITY,
        })
        .collect()
}

fn soft_score(distances: &[f64], cfg: &SolverConfig) -> f64 {
    distances
        .iter()
        .map(|d| {
            if d.is_finite() {
                sigmoid(cfg.gamma1 * (cfg.gamma2 - d))
            } else {
                0.0
            }
        })
        .sum()
}

/// Soft RANSAC: exhaustive 3-point hypotheses, soft inlier scores and
/// convex-combination aggregation.
pub fn soft_ransac(
    model_kps: &[Point3],
    pred_kps: &Keypoints3D,
    cfg: &SolverConfig,
) -> Result<(Pose, HypothesisSet), SolverError> {
    assert_eq!(model_kps.len(), pred_kps.len());
    let valid: Vec<usize> = pred_kps
        .iter_valid()
        .map(|(i, _)| i)
        .collect();
    if valid.len() < 4 {
        return Err(SolverError::InsufficientKeypoints {
            got: valid.len(),
            need: 4,
        });
    }

    let mut poses = Vec::new();
    let mut weights = Vec::new();
    let mut triplets = Vec::new();
    let mut degenerate_count = 0usize;
    for a in 0..valid.len() {
        for b in (a + 1)..valid.len() {
            for c in (b + 1)..valid.len() {
                let triplet = [valid[a], valid[b], valid[c]];
                let pose = kabsch_from_pairs(
                    triplet
                        .iter()
                        .map(|&i| (model_kps[i], pred_kps.point(i).unwrap(), 1.0)),
                );
                match pose {
                    Ok(pose) => {
                        let distances = hypothesis_distances(&pose, model_kps, pred_kps);
                        weights.push(soft_score(&distances, cfg));
                        poses.push(pose);
                        triplets.push(triplet);
                    }
                    Err(_) => degenerate_count += 1,
                }
            }
        }
    }
    if poses.is_empty() {
        return Err(SolverError::AllHypothesesDegenerate);
    }
    let total: f64 = weights.iter().sum();
    if total < cfg.min_hypothesis_weight {
        return Err(SolverError::ZeroTotalWeight { total });
    }

    let mut translation = Vector3::zeros();
    let mut rotation_sum = Matrix3::zeros();
    for (pose, w) in poses.iter().zip(weights.iter()) {
        translation += (w / total) * pose.translation();
        rotation_sum += (w / total) * pose.rotation();
    }
    let rotation = nearest_rotation(&rotation_sum);
    let aggregated = Pose::new(rotation, translation).expect("projected rotation is orthonormal");
    Ok((
        aggregated,
        HypothesisSet {
            poses,
            weights,
            triplets,
            degenerate_count,
        },
    ))
}

/// Analytic derivatives of a soft RANSAC solve with respect to the predicted
/// keypoint coordinates.
#[derive(Debug, Clone)]
pub struct SoftRansacGradients {
    /// `weight_grads[k][j]` = ∇_{p̂_j} s_k.
    pub weight_grads: Vec<Vec<Vector3<f64>>>,
    /// `translation_jacobians[j]` = ∂t̂/∂p̂_j (columns are input components).
    pub translation_jacobians: Vec<Matrix3<f64>>,
}

/// Soft RANSAC together with its analytic gradients. The derivatives include
/// the dependence of each 3-point hypothesis pose on its defining keypoints
/// (via the SVD differential of the Kabsch alignment).
pub fn soft_ransac_with_gradients(
    model_kps: &[Point3],
    pred_kps: &Keypoints3D,
    cfg: &SolverConfig,
) -> Result<(Pose, HypothesisSet, SoftRansacGradients), SolverError> {
    let n = model_kps.len();
    let (aggregated, hypotheses) = soft_ransac(model_kps, pred_kps, cfg)?;

    let k_count = hypotheses.poses.len();
    let mut weight_grads = vec![vec![Vector3::zeros(); n]; k_count];
    // d t_k / d p_j and d s_k / d p_j accumulation for the quotient rule.
    let total: f64 = hypotheses.weights.iter().sum();
    let mut numerator_grads = vec![Matrix3::zeros(); n]; // Σ_k (∂s_k t_k + s_k ∂t_k)
    let mut total_grads = vec![Vector3::zeros(); n]; // Σ_k ∂s_k

    for (k, pose) in hypotheses.poses.iter().enumerate() {
        let triplet = hypotheses.triplets[k];
        let grads = hypothesis_gradients(model_kps, pred_kps, pose, triplet, cfg)?;
        for j in 0..n {
            weight_grads[k][j] = grads.score[j];
            total_grads[j] += grads.score[j];
            numerator_grads[j] += pose.translation() * grads.score[j].transpose();
        }
        // s_k · ∂t_k/∂p_j is nonzero only for triplet members.
        for (slot, &j) in triplet.iter().enumerate() {
            numerator_grads[j] += hypotheses.weights[k] * grads.translation[slot];
        }
    }

    let t_hat = aggregated.translation();
    let translation_jacobians: Vec<Matrix3<f64>> = (0..n)
        .map(|j| (numerator_grads[j] - t_hat * total_grads[j].transpose()) / total)
        .collect();

    Ok((
        aggregated,
        hypotheses,
        SoftRansacGradients {
            weight_grads,
            translation_jacobians,
        },
    ))
}

struct HypothesisGradients {
    /// ∇_{p̂_j} s_k for every keypoint j.
    score: Vec<Vector3<f64>>,
    /// ∂t_k/∂p̂_j (3×3, columns = input components) for the three triplet slots.
    translation: [Matrix3<f64>; 3],
}

/// Differentiates one hypothesis: the Kabsch pose w.r.t. its three defining
/// keypoints (SVD perturbation) and the soft score w.r.t. every keypoint.
fn hypothesis_gradients(
    model_kps: &[Point3],
    pred_kps: &Keypoints3D,
    pose: &Pose,
    triplet: [usize; 3],
    cfg: &SolverConfig,
) -> Result<HypothesisGradients, SolverError> {
    let n = model_kps.len();

    // Recompute the Kabsch pieces for the triplet.
    let m_bar = triplet.iter().map(|&i| model_kps[i]).sum::<Vector3<f64>>() / 3.0;
    let p_bar = triplet
        .iter()
        .map(|&i| pred_kps.point(i).unwrap())
        .sum::<Vector3<f64>>()
        / 3.0;
    let mut cross = Matrix3::zeros();
    for &i in &triplet {
        cross += (pred_kps.point(i).unwrap() - p_bar) * (model_kps[i] - m_bar).transpose();
    }
    let (rotation, svd) = rotation_from_cross_covariance(&cross)?;
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, svd.sign));
    let s = svd.singular_values;
    for i in 0..3 {
        for j in (i + 1)..3 {
            if (s[i] * s[i] - s[j] * s[j]).abs() < 1e-12 * s[0] * s[0] {
                return Err(SolverError::DegenerateGradient);
            }
        }
    }

    // dR and dt for each triplet slot and axis.
    let mut d_rotation = [[Matrix3::zeros(); 3]; 3]; // [slot][axis]
    let mut d_translation = [Matrix3::zeros(); 3]; // [slot], columns = axis
    for (slot, &j) in triplet.iter().enumerate() {
        let m_centered = model_kps[j] - m_bar;
        for axis in 0..3 {
            let mut e = Vector3::zeros();
            e[axis] = 1.0;
            // Σ_i (δ_ij − 1/3)(m_i − m̄)ᵀ collapses because Σ(m_i − m̄) = 0.
            let d_cross = e * m_centered.transpose();
            let g = svd.u.transpose() * d_cross * svd.v;
            let mut omega_u = Matrix3::zeros();
            let mut omega_v = Matrix3::zeros();
            for i in 0..3 {
                for jj in (i + 1)..3 {
                    let denom = s[jj] * s[jj] - s[i] * s[i];
                    let ou = (s[jj] * g[(i, jj)] + s[i] * g[(jj, i)]) / denom;
                    let ov = (s[i] * g[(i, jj)] + s[jj] * g[(jj, i)]) / denom;
                    omega_u[(i, jj)] = ou;
                    omega_u[(jj, i)] = -ou;
                    omega_v[(i, jj)] = ov;
                    omega_v[(jj, i)] = -ov;
                }
            }
            let dr = svd.u * (omega_u * d - d * omega_v) * svd.v.transpose();
            d_rotation[slot][axis] = dr;
            let dt = e / 3.0 - dr * m_bar;
            d_translation[slot].set_column(axis, &dt);
        }
    }

    // Score gradients.
    let mut score = vec![Vector3::zeros(); n];
    for i in 0..n {
        let Some(p_i) = pred_kps.point(i) else { continue };
        let residual = pose.transform(model_kps[i]) - p_i;
        let dist = residual.norm();
        if dist < 1e-12 {
            return Err(SolverError::DegenerateGradient);
        }
        let unit = residual / dist;
        let x = cfg.gamma1 * (cfg.gamma2 - dist);
        let sig = sigmoid(x);
        let factor = cfg.gamma1 * sig * (1.0 - sig); // dσ/dd = −γ₁σ(1−σ), signs below

        // Direct dependence: ∂d/∂p_i = −unit.
        score[i] += factor * unit;
        // Through the hypothesis pose, for triplet members.
        for (slot, &j) in triplet.iter().enumerate() {
            let mut grad = Vector3::zeros();
            for axis in 0..3 {
                let dres = d_rotation[slot][axis] * model_kps[i]
                    + d_translation[slot].column(axis).into_owned();
                grad[axis] = unit.dot(&dres);
            }
            score[j] -= factor * grad;
        }
    }
    let _ = rotation;

    Ok(HypothesisGradients {
        score,
        translation: d_translation,
    })
}

/// Pose-loss weights (α) and joint-loss weights (β₁, β₂, β₃).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta1: 1.0,
            beta2: 1.0,
            beta3: 1.0,
        }
    }
}

/// `‖t̂ − t‖₂ + α‖R̂Rᵀ − I‖_F`.
pub fn pose_loss(pred: &Pose, gt: &Pose, cfg: &LossConfig) -> f64 {
    let t_err = (pred.translation() - gt.translation()).norm();
    let r_err = (pred.rotation() * gt.rotation().transpose() - Matrix3::identity()).norm();
    t_err + cfg.alpha * r_err
}

/// Per-level diagnostic terms for the joint loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelLosses {
    pub pose: f64,
    /// Mean Euclidean distance between predicted and ground-truth keypoints.
    pub keypoint: f64,
    pub kl: f64,
}

/// `Σ_levels β₁·pose + β₂·keypoint + β₃·KL` over the coarse and fine levels.
pub fn joint_loss(levels: &[LevelLosses], cfg: &LossConfig) -> f64 {
    levels
        .iter()
        .map(|l| cfg.beta1 * l.pose + cfg.beta2 * l.keypoint + cfg.beta3 * l.kl)
        .sum()
}
