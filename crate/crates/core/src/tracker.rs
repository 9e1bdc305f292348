//! Detection-plus-tracking: tracks start from a lifted detection, follow
//! their support plane between detections, and are corrected whenever a
//! (possibly late) detection overlaps them.
//!
//! Each track assumes its box rests on a plane through its local `-z` face
//! (the keypoints with the z bit clear). Between frames the tracker estimates
//! the homography of that plane from gated correspondences. In the default
//! [`Propagation::PlaneMotion`] mode the homography is decomposed, using the
//! track's own plane, into the rigid motion of the box relative to the
//! camera, and that motion is refined against the inlier correspondences.
//! The keypoints are then warped by the plane and shifted by the parallax
//! the motion predicts for off-plane vertices. [`Propagation::Pointwise`]
//! instead warps the nine keypoints directly with the homography; this is
//! exact only for on-plane points, so top vertices pick up parallax error
//! whenever the camera translates.

use std::collections::VecDeque;

use log::{debug, info, warn};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::Detection;
use crate::epnp::{lift, rescale_to_canonical, LiftError};
use crate::geometry::{
    box_vertices, fit_pose_from_vertices, iou2d_rect, nearest_rotation, project_vertices, BoxPose, CameraIntrinsics,
    GeometryError, KeypointSet2D, OrientedBoxVertices, RigidTransform,
};
use crate::homography::{apply, compose, estimate_ransac, Correspondence, Homography, HomographyError, RansacConfig};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackError {
    #[error("lift failed: {0}")]
    Lift(#[from] LiftError),
    #[error("homography: {0}")]
    Homography(#[from] HomographyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("support plane passes through the camera center")]
    DegeneratePlane,
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("frame {got} delivered out of order (expected {expected})")]
    OutOfOrder { expected: u64, got: u64 },
}

/// How a track's keypoints are carried from one frame to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Propagation {
    /// Recover the rigid box motion from the support plane and correct
    /// off-plane keypoints for parallax.
    #[default]
    PlaneMotion,
    /// Apply the homography to every keypoint.
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Minimum 2D IoU between a forwarded detection and a track to match them.
    pub consolidation_iou: f64,
    /// Detector runs a track may go unmatched before it is dropped.
    pub max_missed: u32,
    /// Growth of the track's 2D extent, per side, for correspondence gating.
    pub region_margin: f64,
    /// Weight of the detection when merging it into a matched track.
    pub blend_weight: f64,
    pub ransac: RansacConfig,
    pub propagation: Propagation,
    /// Frames of correspondences kept for replaying late detections that
    /// start new tracks.
    pub replay_window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            consolidation_iou: 0.5,
            max_missed: 3,
            region_margin: 0.25,
            blend_weight: 1.0,
            ransac: RansacConfig::default(),
            propagation: Propagation::PlaneMotion,
            replay_window: 16,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        if !(self.consolidation_iou > 0.0 && self.consolidation_iou < 1.0) {
            return Err(TrackError::InvalidConfig(format!(
                "consolidation_iou must lie in (0, 1), got {}",
                self.consolidation_iou
            )));
        }
        if !(0.0..=1.0).contains(&self.blend_weight) {
            return Err(TrackError::InvalidConfig(format!(
                "blend_weight must lie in [0, 1], got {}",
                self.blend_weight
            )));
        }
        if !(self.region_margin >= 0.0) || !self.region_margin.is_finite() {
            return Err(TrackError::InvalidConfig(format!(
                "region_margin must be non-negative, got {}",
                self.region_margin
            )));
        }
        self.ransac.validate()?;
        Ok(())
    }
}

/// One propagation step into `frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub frame: u64,
    pub homography: Homography,
    /// Camera-frame rigid motion of the box over the step (identity in
    /// pointwise mode, where it is not estimated).
    pub motion: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: u64,
    pub keypoints: KeypointSet2D,
    pub pose: BoxPose,
    pub canonical_size: Vector3<f64>,
    /// Composition of the homographies since `chain_origin`.
    pub chain: Homography,
    pub chain_origin: u64,
    pub last_detection_frame: u64,
    pub missed_detections: u32,
    pub last_residual: f64,
    /// Frame the state describes.
    pub frame: u64,
    /// Steps since `chain_origin`, oldest first.
    pub history: Vec<StepRecord>,
}

/// Vertices of a lifted keypoint set at the given canonical size.
fn lift_canonical(
    k: &CameraIntrinsics,
    kp: &KeypointSet2D,
    canonical: &Vector3<f64>,
) -> Result<(OrientedBoxVertices, f64), TrackError> {
    let lifted = lift(k, kp)?;
    Ok((
        rescale_to_canonical(&lifted.vertices, canonical)?,
        lifted.reprojection_rms,
    ))
}

fn fit(vertices: &OrientedBoxVertices) -> Result<BoxPose, TrackError> {
    Ok(fit_pose_from_vertices(vertices)?.pose)
}

/// Start a track from a detection. The lifted box is scaled so its largest
/// size component is exactly 1, which fixes the track's canonical size.
pub fn init_track(d: &Detection, k: &CameraIntrinsics, id: u64) -> Result<TrackState, TrackError> {
    let lifted = lift(k, &d.keypoints)?;
    let lengths = lifted.vertices.mean_edge_lengths();
    if lengths.iter().any(|&l| !(l > crate::geometry::DEGENERATE_EDGE_LENGTH)) {
        return Err(GeometryError::DegenerateVertices {
            lengths: lengths.into(),
        }
        .into());
    }
    let vertices = lifted.vertices.scaled(1.0 / lengths.max());
    let mut pose = fit(&vertices)?;
    let canonical_size = pose.size / pose.size.max();
    pose.size = canonical_size;
    Ok(TrackState {
        id,
        keypoints: d.keypoints,
        pose,
        canonical_size,
        chain: Homography::identity(),
        chain_origin: d.frame_id,
        last_detection_frame: d.frame_id,
        missed_detections: 0,
        last_residual: lifted.reprojection_rms,
        frame: d.frame_id,
        history: Vec::new(),
    })
}

/// Rigid camera-frame motion of a box resting on the plane through its local
/// `-z` face, given the image homography `h` of that plane.
///
/// With plane `n·X = d` in the previous camera frame, the calibrated
/// homography is `A = K⁻¹HK = λ(R + t·nᵀ/d)`. Vectors in the plane give
/// `A·w = λR·w`, which fixes `λ` and two columns of `R` in the plane basis;
/// `A·n = λ(R·n + t/d)` then yields `t`.
pub fn plane_motion(k: &CameraIntrinsics, h: &Homography, pose: &BoxPose) -> Result<RigidTransform, TrackError> {
    let (n, d) = support_plane(pose);
    let half_height = pose.size.z / 2.0;
    let scale = pose.translation.norm().max(pose.size.amax());
    if !(d.abs() > 1e-9 * scale) {
        return Err(TrackError::DegeneratePlane);
    }

    let a = k.inverse_matrix() * h.matrix() * k.matrix();
    let seed = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vector3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let w1 = n.cross(&seed).normalize();
    let w2 = n.cross(&w1);
    let (a1, a2) = (a * w1, a * w2);
    let bottom_center = pose.translation - n * half_height;
    let sign = (a * bottom_center).z.signum();
    let lambda = sign * (a1.norm() + a2.norm()) / 2.0;
    if !(lambda.abs() > 0.0) || !lambda.is_finite() {
        return Err(HomographyError::DegenerateInput.into());
    }

    let (r1, r2) = (a1 / lambda, a2 / lambda);
    let image_basis = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let plane_basis = Matrix3::from_columns(&[w1, w2, n]);
    let rotation = nearest_rotation(&(image_basis * plane_basis.transpose()));
    let translation = (a * n / lambda - rotation * n) * d;
    Ok(RigidTransform::new(rotation, translation))
}

/// Plane `(n, d)` of the box's resting face in its camera frame.
fn support_plane(pose: &BoxPose) -> (Vector3<f64>, f64) {
    let n: Vector3<f64> = pose.rotation.column(2).into_owned();
    (n, n.dot(&pose.translation) - pose.size.z / 2.0)
}

/// Image homography a rigid motion induces on the plane `n·X = d`.
fn induced_homography(k: &CameraIntrinsics, m: &RigidTransform, n: &Vector3<f64>, d: f64) -> Matrix3<f64> {
    k.matrix() * (m.rotation + m.translation * n.transpose() / d) * k.inverse_matrix()
}

/// Least-squares refinement of a plane motion against the correspondences
/// it should explain. A rigid motion has six degrees of freedom against the
/// homography's eight; the two it lacks are the perspective terms that a
/// small image region pins down worst, so fitting the motion directly is
/// much less noisy than decomposing the estimated homography.
pub fn refine_plane_motion(
    k: &CameraIntrinsics,
    pose: &BoxPose,
    initial: &RigidTransform,
    corrs: &[Correspondence],
) -> RigidTransform {
    const ITERATIONS: usize = 10;
    const STEP: f64 = 1e-7;
    let (n, d) = support_plane(pose);
    if corrs.len() < 3 || !(d.abs() > 0.0) {
        return *initial;
    }
    // Parameters: rotation increment (left-multiplied) and t/d.
    let motion = |x: &nalgebra::SVector<f64, 6>| {
        let r = nalgebra::Rotation3::new(Vector3::new(x[0], x[1], x[2])).into_inner() * initial.rotation;
        RigidTransform::new(r, Vector3::new(x[3], x[4], x[5]) * d)
    };
    let residuals = |x: &nalgebra::SVector<f64, 6>| -> Option<nalgebra::DVector<f64>> {
        let h = induced_homography(k, &motion(x), &n, d);
        let mut r = nalgebra::DVector::zeros(2 * corrs.len());
        for (i, c) in corrs.iter().enumerate() {
            let q = h * c.prev.push(1.0);
            if !(q.z.abs() > 1e-12) {
                return None;
            }
            r[2 * i] = q.x / q.z - c.curr.x;
            r[2 * i + 1] = q.y / q.z - c.curr.y;
        }
        Some(r)
    };
    let t0 = initial.translation / d;
    let mut x = nalgebra::SVector::<f64, 6>::new(0.0, 0.0, 0.0, t0.x, t0.y, t0.z);
    let Some(mut r) = residuals(&x) else { return *initial };
    let mut cost = r.norm_squared();
    let mut damping = 1e-3;
    for _ in 0..ITERATIONS {
        let mut jac = nalgebra::DMatrix::zeros(r.len(), 6);
        for j in 0..6 {
            let mut xp = x;
            xp[j] += STEP;
            let Some(rp) = residuals(&xp) else { return motion(&x) };
            jac.set_column(j, &((rp - &r) / STEP));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..8 {
            let mut a: nalgebra::SMatrix<f64, 6, 6> = jtj.fixed_view::<6, 6>(0, 0).into_owned();
            for i in 0..6 {
                a[(i, i)] *= 1.0 + damping;
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&-g.fixed_rows::<6>(0).into_owned())) else {
                damping *= 10.0;
                continue;
            };
            let candidate = x + step;
            if let Some(rc) = residuals(&candidate).filter(|rc| rc.norm_squared() < cost) {
                x = candidate;
                cost = rc.norm_squared();
                r = rc;
                damping = (damping / 10.0).max(1e-9);
                improved = true;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    motion(&x)
}

fn transform_vertices(m: &RigidTransform, v: &OrientedBoxVertices) -> OrientedBoxVertices {
    OrientedBoxVertices::new(v.points.map(|p| m.apply(&p)))
}

/// Advance a track by one frame using the correspondences between its frame
/// and the next.
pub fn track_step(
    s: &TrackState,
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<TrackState, TrackError> {
    let frame = s.frame + 1;
    let region = s.keypoints.bounding_rect().expanded(cfg.region_margin);
    let gated: Vec<Correspondence> = corrs
        .iter()
        .copied()
        .filter(|c| region.contains(c.prev.x, c.prev.y))
        .collect();
    let ransac = RansacConfig {
        seed: derive_seed(cfg.ransac.seed, &[s.id, frame]),
        ..cfg.ransac
    };
    let fitted = estimate_ransac(&gated, &ransac)?;
    let h = fitted.homography;

    let (keypoints, motion) = match cfg.propagation {
        Propagation::PlaneMotion => {
            // Warp the carried keypoints with `h` and add the parallax the
            // rigid motion predicts on top of that warp. Off-plane points
            // need the correction; on-plane points get none. Noise in the
            // recovered rotation largely cancels between the two terms.
            let inliers: Vec<Correspondence> = gated
                .iter()
                .zip(&fitted.inliers)
                .filter(|(_, &keep)| keep)
                .map(|(c, _)| *c)
                .collect();
            let motion = refine_plane_motion(k, &s.pose, &plane_motion(k, &h, &s.pose)?, &inliers);
            let (n, d) = support_plane(&s.pose);
            let warp = Homography::new(induced_homography(k, &motion, &n, d))?;
            let model = box_vertices(&s.pose);
            let moved = project_vertices(k, &transform_vertices(&motion, &model))?;
            let modelled = project_vertices(k, &model)?;
            let mut pts = s.keypoints.points;
            for (i, p) in pts.iter_mut().enumerate() {
                *p = apply(&warp, p)? + moved.points[i] - apply(&warp, &modelled.points[i])?;
            }
            (KeypointSet2D::new(pts), motion)
        }
        Propagation::Pointwise => {
            let pts = s
                .keypoints
                .points
                .iter()
                .map(|p| apply(&h, p))
                .collect::<Result<Vec<_>, _>>()?;
            (
                KeypointSet2D::new(std::array::from_fn(|i| pts[i])),
                RigidTransform::identity(),
            )
        }
    };

    let (vertices, residual) = lift_canonical(k, &keypoints, &s.canonical_size)?;
    let pose = fit(&vertices)?;
    let mut history = s.history.clone();
    history.push(StepRecord {
        frame,
        homography: h,
        motion,
    });
    Ok(TrackState {
        keypoints,
        pose,
        chain: compose(&h, &s.chain),
        last_residual: residual,
        frame,
        history,
        ..s.clone()
    })
}

/// Carry a detection captured at `d.frame_id` forward to the track's
/// current frame using the track's steps since then. `None` when the
/// detection predates the track's chain origin.
fn forward_detection(
    s: &TrackState,
    d: &Detection,
    k: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Option<Result<KeypointSet2D, TrackError>> {
    if d.frame_id < s.chain_origin || d.frame_id > s.frame {
        return None;
    }
    let steps = s.history.iter().filter(|r| r.frame > d.frame_id);
    Some(match cfg.propagation {
        Propagation::Pointwise => {
            let segment = steps.fold(Homography::identity(), |acc, r| compose(&r.homography, &acc));
            d.keypoints
                .points
                .iter()
                .map(|p| apply(&segment, p))
                .collect::<Result<Vec<_>, _>>()
                .map(|pts| KeypointSet2D::new(std::array::from_fn(|i| pts[i])))
                .map_err(TrackError::from)
        }
        Propagation::PlaneMotion => {
            if d.frame_id == s.frame {
                return Some(Ok(d.keypoints));
            }
            let segment = steps.fold(RigidTransform::identity(), |acc, r| r.motion.compose(&acc));
            lift_canonical(k, &d.keypoints, &s.canonical_size)
                .and_then(|(v, _)| Ok(project_vertices(k, &transform_vertices(&segment, &v))?))
        }
    })
}

/// Merge a detection, already forwarded to the track's frame, into it.
fn absorb(
    s: &TrackState,
    forwarded: &KeypointSet2D,
    capture_frame: u64,
    k: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<TrackState, TrackError> {
    let w = cfg.blend_weight;
    let keypoints = KeypointSet2D::new(std::array::from_fn(|i| {
        forwarded.points[i] * w + s.keypoints.points[i] * (1.0 - w)
    }));
    let (vertices, residual) = lift_canonical(k, &keypoints, &s.canonical_size)?;
    let pose = fit(&vertices)?;
    Ok(TrackState {
        keypoints,
        pose,
        chain: Homography::identity(),
        chain_origin: s.frame,
        last_detection_frame: capture_frame,
        missed_detections: 0,
        last_residual: residual,
        history: Vec::new(),
        ..s.clone()
    })
}

/// Per-frame inputs to the pipeline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameInput {
    pub frame_id: u64,
    /// Correspondences from the previous frame to this one.
    pub correspondences: Vec<Correspondence>,
    /// Detections delivered at this frame, stamped with their capture frame.
    pub detections: Vec<Detection>,
}

/// Output for one live track at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub frame: u64,
    pub id: u64,
    pub keypoints: KeypointSet2D,
    pub pose: BoxPose,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEvent {
    pub frame: u64,
    pub id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscardedDetection {
    pub capture_frame: u64,
    pub delivered_frame: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineOutput {
    pub records: Vec<TrackRecord>,
    /// Tracks that died because propagation failed.
    pub lost: Vec<TrackEvent>,
    /// Tracks dropped after too many unmatched detector runs.
    pub dropped: Vec<TrackEvent>,
    pub discarded: Vec<DiscardedDetection>,
}

/// Frame-by-frame pipeline state.
#[derive(Debug, Clone)]
pub struct Tracker {
    k: CameraIntrinsics,
    cfg: PipelineConfig,
    tracks: Vec<TrackState>,
    next_id: u64,
    buffer: VecDeque<(u64, Vec<Correspondence>)>,
    next_frame: Option<u64>,
    output: PipelineOutput,
}

impl Tracker {
    pub fn new(k: CameraIntrinsics, cfg: PipelineConfig) -> Result<Self, TrackError> {
        k.validate()?;
        cfg.validate()?;
        Ok(Self {
            k,
            cfg,
            tracks: Vec::new(),
            next_id: 0,
            buffer: VecDeque::new(),
            next_frame: None,
            output: PipelineOutput::default(),
        })
    }

    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Process one frame: propagate every live track, then consolidate the
    /// detections delivered at this frame in ascending capture order.
    /// Returns the records of the tracks alive after the frame.
    pub fn advance(&mut self, input: &FrameInput) -> Result<Vec<TrackRecord>, TrackError> {
        let frame = input.frame_id;
        if let Some(expected) = self.next_frame {
            if frame != expected {
                return Err(TrackError::OutOfOrder { expected, got: frame });
            }
        }
        self.next_frame = Some(frame + 1);

        let mut survivors = Vec::with_capacity(self.tracks.len());
        for t in std::mem::take(&mut self.tracks) {
            match track_step(&t, &input.correspondences, &self.k, &self.cfg) {
                Ok(next) => survivors.push(next),
                Err(e) => {
                    warn!("track {} lost at frame {frame}: {e}", t.id);
                    self.output.lost.push(TrackEvent {
                        frame,
                        id: t.id,
                        reason: e.to_string(),
                    });
                }
            }
        }
        self.tracks = survivors;

        self.buffer.push_back((frame, input.correspondences.clone()));
        while self.buffer.len() > self.cfg.replay_window {
            self.buffer.pop_front();
        }

        let mut order: Vec<&Detection> = input.detections.iter().collect();
        // Stable sort: ascending capture frame, then descending score.
        order.sort_by(|a, b| a.frame_id.cmp(&b.frame_id).then(b.score.total_cmp(&a.score)));
        let mut start = 0;
        while start < order.len() {
            let capture = order[start].frame_id;
            let end = start + order[start..].iter().take_while(|d| d.frame_id == capture).count();
            self.consolidate_batch(&order[start..end], frame);
            start = end;
        }

        let records: Vec<TrackRecord> = self
            .tracks
            .iter()
            .map(|t| TrackRecord {
                frame,
                id: t.id,
                keypoints: t.keypoints,
                pose: t.pose,
                residual: t.last_residual,
            })
            .collect();
        self.output.records.extend(records.iter().cloned());
        Ok(records)
    }

    fn discard(&mut self, d: &Detection, frame: u64, reason: String) {
        info!(
            "detection captured at frame {} discarded at frame {frame}: {reason}",
            d.frame_id
        );
        self.output.discarded.push(DiscardedDetection {
            capture_frame: d.frame_id,
            delivered_frame: frame,
            reason,
        });
    }

    /// Consolidate the detections of one detector run (one capture frame).
    fn consolidate_batch(&mut self, batch: &[&Detection], frame: u64) {
        let capture = batch[0].frame_id;
        if capture > frame {
            for d in batch {
                self.discard(d, frame, "captured after the current frame".into());
            }
            return;
        }
        let eligible: Vec<u64> = self
            .tracks
            .iter()
            .filter(|t| t.chain_origin <= capture)
            .map(|t| t.id)
            .collect();
        let mut matched: Vec<u64> = Vec::new();

        for d in batch {
            let mut best: Option<(usize, f64, KeypointSet2D)> = None;
            for (i, t) in self.tracks.iter().enumerate() {
                if !eligible.contains(&t.id) || matched.contains(&t.id) {
                    continue;
                }
                let forwarded = match forward_detection(t, d, &self.k, &self.cfg) {
                    Some(Ok(kp)) => kp,
                    Some(Err(e)) => {
                        debug!("cannot forward detection to track {}: {e}", t.id);
                        continue;
                    }
                    None => continue,
                };
                let iou = iou2d_rect(&forwarded.bounding_rect(), &t.keypoints.bounding_rect());
                if best.as_ref().is_none_or(|(_, b, _)| iou > *b) {
                    best = Some((i, iou, forwarded));
                }
            }

            match best {
                Some((i, iou, forwarded)) if iou >= self.cfg.consolidation_iou => {
                    let t = &self.tracks[i];
                    match absorb(t, &forwarded, capture, &self.k, &self.cfg) {
                        Ok(next) => {
                            debug!("detection from frame {capture} matched track {} (iou {iou:.3})", t.id);
                            matched.push(t.id);
                            self.tracks[i] = next;
                        }
                        Err(e) => {
                            self.discard(d, frame, format!("re-lift after merge with track {} failed: {e}", t.id))
                        }
                    }
                }
                _ => {
                    let raw = d.keypoints.bounding_rect();
                    let overlapping = self.tracks.iter().find(|t| {
                        (!eligible.contains(&t.id) || matched.contains(&t.id))
                            && iou2d_rect(&raw, &t.keypoints.bounding_rect()) >= self.cfg.consolidation_iou
                    });
                    if let Some(t) = overlapping {
                        let reason = format!(
                            "stale or duplicate for track {} (chain origin {})",
                            t.id, t.chain_origin
                        );
                        self.discard(d, frame, reason);
                    } else {
                        self.spawn(d, frame);
                    }
                }
            }
        }

        let max_missed = self.cfg.max_missed;
        let mut dropped = Vec::new();
        self.tracks.retain_mut(|t| {
            if !eligible.contains(&t.id) || matched.contains(&t.id) {
                return true;
            }
            t.missed_detections += 1;
            if t.missed_detections > max_missed {
                dropped.push(TrackEvent {
                    frame,
                    id: t.id,
                    reason: format!("{} detector runs unmatched", t.missed_detections),
                });
                false
            } else {
                true
            }
        });
        for e in dropped {
            info!("track {} dropped at frame {frame}: {}", e.id, e.reason);
            self.output.dropped.push(e);
        }
    }

    /// Start a track at the detection's capture frame and replay buffered
    /// correspondences up to the current frame.
    fn spawn(&mut self, d: &Detection, frame: u64) {
        let oldest = self.buffer.front().map_or(frame, |(f, _)| *f);
        if d.frame_id < oldest {
            self.discard(
                d,
                frame,
                format!("capture frame older than the replay window (oldest {oldest})"),
            );
            return;
        }
        let mut track = match init_track(d, &self.k, self.next_id) {
            Ok(t) => t,
            Err(e) => return self.discard(d, frame, format!("track initialization failed: {e}")),
        };
        for (f, corrs) in self.buffer.iter().filter(|(f, _)| *f > d.frame_id) {
            match track_step(&track, corrs, &self.k, &self.cfg) {
                Ok(next) => track = next,
                Err(e) => {
                    return self.discard(d, frame, format!("replay to frame {frame} failed at frame {f}: {e}"));
                }
            }
        }
        info!(
            "track {} started at frame {frame} from detection captured at {}",
            track.id, d.frame_id
        );
        self.next_id += 1;
        self.tracks.push(track);
    }

    pub fn finish(self) -> PipelineOutput {
        self.output
    }
}

/// Run the pipeline over a frame stream.
pub fn run_pipeline(
    inputs: &[FrameInput],
    cfg: &PipelineConfig,
    k: &CameraIntrinsics,
) -> Result<PipelineOutput, TrackError> {
    let mut tracker = Tracker::new(*k, *cfg)?;
    for input in inputs {
        tracker.advance(input)?;
    }
    Ok(tracker.finish())
}

/// Pipeline inputs for a simulated scene.
pub fn scene_inputs(scene: &crate::sim::Scene) -> Vec<FrameInput> {
    scene
        .frames
        .iter()
        .map(|f| FrameInput {
            frame_id: f.frame_id,
            correspondences: f.correspondences.clone(),
            detections: f.detection_events.clone(),
        })
        .collect()
}
