//! Metrics for scale-ambiguous box estimates: per-pose error decomposition,
//! 3D-IoU average precision, and temporal keypoint jitter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_between, iou3d, rotation_angle_between, BoxPose, KeypointSet2D, NUM_KEYPOINTS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("average precision is undefined without ground truth")]
    NoGroundTruth,
    #[error("jitter needs at least one pair of consecutive frames with both estimate and ground truth")]
    TooFewFrames,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Geodesic rotation error, radians.
    pub rotation_err: f64,
    /// Angle between the estimated and true center directions, radians.
    pub translation_dir_err: f64,
    /// Estimated over true center depth.
    pub depth_ratio: f64,
    /// Geometric-mean size ratio after depth alignment.
    pub size_ratio: f64,
}

fn geometric_mean(v: &nalgebra::Vector3<f64>) -> f64 {
    v.product().cbrt()
}

pub fn pose_error(est: &BoxPose, gt: &BoxPose) -> PoseError {
    let depth_ratio = est.translation.z / gt.translation.z;
    PoseError {
        rotation_err: rotation_angle_between(&est.rotation, &gt.rotation),
        translation_dir_err: angle_between(&est.translation, &gt.translation),
        depth_ratio,
        size_ratio: geometric_mean(&est.size) / (geometric_mean(&gt.size) * depth_ratio),
    }
}

/// Scale `est` about the camera center so its center depth matches `gt`.
pub fn depth_aligned(est: &BoxPose, gt: &BoxPose) -> BoxPose {
    est.scaled(gt.translation.z / est.translation.z)
}

/// 3D IoU after depth alignment.
pub fn aligned_iou(est: &BoxPose, gt: &BoxPose) -> f64 {
    iou3d(&depth_aligned(est, gt), gt)
}

/// A scored estimate for AP; `group` is the frame (or image) it belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredEstimate {
    pub group: u64,
    pub pose: BoxPose,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub group: u64,
    pub pose: BoxPose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Score of the estimate that adds this point.
    pub threshold: f64,
}

/// Mark each estimate true or false positive, in descending score order
/// (ties keep input order). Returns the sorted scores with their flags.
pub fn match_estimates<F>(ests: &[ScoredEstimate], gts: &[GroundTruth], iou_thresh: f64, iou: F) -> Vec<(f64, bool)>
where
    F: Fn(&BoxPose, &BoxPose) -> f64,
{
    let mut order: Vec<usize> = (0..ests.len()).collect();
    order.sort_by(|&a, &b| ests[b].score.total_cmp(&ests[a].score));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|i| {
            let e = &ests[i];
            let best = gts
                .iter()
                .enumerate()
                .filter(|(j, g)| !taken[*j] && g.group == e.group)
                .map(|(j, g)| (j, iou(&e.pose, &g.pose)))
                .filter(|(_, v)| *v >= iou_thresh)
                .fold(None, |best: Option<(usize, f64)>, (j, v)| match best {
                    Some((_, bv)) if bv >= v => best,
                    _ => Some((j, v)),
                });
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            (e.score, best.is_some())
        })
        .collect()
}

/// Precision-recall sweep over flags already in score order.
pub fn pr_curve(flags: &[(f64, bool)], n_gt: usize) -> Result<Vec<PrPoint>, EvalError> {
    if n_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let mut tp = 0usize;
    Ok(flags
        .iter()
        .enumerate()
        .map(|(i, &(score, is_tp))| {
            tp += usize::from(is_tp);
            PrPoint {
                recall: tp as f64 / n_gt as f64,
                precision: tp as f64 / (i + 1) as f64,
                threshold: score,
            }
        })
        .collect())
}

/// All-point interpolated AP: area under the precision envelope
/// `p̃(r) = max{p(r') : r' ≥ r}`.
pub fn ap_from_curve(curve: &[PrPoint]) -> f64 {
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (p, env) in curve.iter().zip(envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap
}

/// Average precision at a 3D IoU threshold. Each estimate is aligned to
/// every candidate ground truth by center-depth ratio before measuring IoU.
pub fn average_precision(ests: &[ScoredEstimate], gts: &[GroundTruth], iou_thresh: f64) -> Result<f64, EvalError> {
    let flags = match_estimates(ests, gts, iou_thresh, aligned_iou);
    Ok(ap_from_curve(&pr_curve(&flags, gts.len())?))
}

/// Mean over consecutive frame pairs of the mean keypoint displacement
/// error `‖(p̂ₜ − p̂ₜ₋₁) − (gₜ − gₜ₋₁)‖`. Both inputs are `(frame, keypoints)`
/// lists; only frames present in both count, and a pair needs both frames.
pub fn jitter(est: &[(u64, KeypointSet2D)], gt: &[(u64, KeypointSet2D)]) -> Result<f64, EvalError> {
    use std::collections::BTreeMap;
    let gt: BTreeMap<u64, &KeypointSet2D> = gt.iter().map(|(f, k)| (*f, k)).collect();
    let est: BTreeMap<u64, &KeypointSet2D> = est.iter().map(|(f, k)| (*f, k)).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (&f, e1) in &est {
        let Some(prev) = f.checked_sub(1) else { continue };
        let (Some(e0), Some(g0), Some(g1)) = (est.get(&prev), gt.get(&prev), gt.get(&f)) else {
            continue;
        };
        let per_point: f64 = (0..NUM_KEYPOINTS)
            .map(|i| ((e1.points[i] - e0.points[i]) - (g1.points[i] - g0.points[i])).norm())
            .sum::<f64>()
            / NUM_KEYPOINTS as f64;
        total += per_point;
        pairs += 1;
    }
    if pairs == 0 {
        return Err(EvalError::TooFewFrames);
    }
    Ok(total / pairs as f64)
}
