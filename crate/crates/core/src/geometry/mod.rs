//! Pinhole camera, the 9-keypoint box parameterization, and pose recovery
//! from box vertices.
//!
//! Keypoint order is shared by every module: index 0 is the box center and
//! index `i` in `1..=8` encodes the corner sign bits `b = i - 1`
//! (bit 0 → x, bit 1 → y, bit 2 → z; set = `+size/2`, clear = `-size/2`).

mod iou;

pub use iou::{iou2d_rect, iou3d, Rect};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of keypoints per box (center + 8 corners).
pub const NUM_KEYPOINTS: usize = 9;

/// Object-frame sign vector of every keypoint, in canonical order.
pub const KEYPOINT_SIGNS: [[f64; 3]; NUM_KEYPOINTS] = {
    let mut table = [[0.0; 3]; NUM_KEYPOINTS];
    let mut i = 1;
    while i < NUM_KEYPOINTS {
        let b = i - 1;
        table[i] = [
            if b & 1 != 0 { 1.0 } else { -1.0 },
            if b & 2 != 0 { 1.0 } else { -1.0 },
            if b & 4 != 0 { 1.0 } else { -1.0 },
        ];
        i += 1;
    }
    table
};

/// The 12 box edges as keypoint index pairs (corners differing in one bit).
pub const BOX_EDGES: [(usize, usize); 12] = {
    let mut edges = [(0, 0); 12];
    let mut n = 0;
    let mut axis = 0;
    while axis < 3 {
        let bit = 1 << axis;
        let mut b = 0;
        while b < 8 {
            if b & bit == 0 {
                edges[n] = (b + 1, (b | bit) + 1);
                n += 1;
            }
            b += 1;
        }
        axis += 1;
    }
    edges
};

/// Mean edge lengths below this are treated as a collapsed box.
pub const DEGENERATE_EDGE_LENGTH: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point has non-positive depth {depth}")]
    BehindCamera { depth: f64 },
    #[error("box vertex {index} has non-positive depth {depth}")]
    VertexBehindCamera { index: usize, depth: f64 },
    #[error("degenerate box vertices: mean edge lengths {lengths:?}")]
    DegenerateVertices { lengths: [f64; 3] },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid box pose: {0}")]
    InvalidPose(String),
}

/// Pinhole projection parameters and viewport size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || !(self.fx > 0.0) || !(self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("viewport must be non-empty".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }
}

impl Default for CameraIntrinsics {
    /// 640×480 viewport with a 500 px focal length.
    fn default() -> Self {
        Self {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

/// 9-DoF box state in the camera frame. Translation and size share one
/// (arbitrary) unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxPoseRepr", into = "BoxPoseRepr")]
pub struct BoxPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub size: Vector3<f64>,
}

const ROTATION_TOLERANCE: f64 = 1e-9;

impl BoxPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, size: Vector3<f64>) -> Result<Self, GeometryError> {
        let pose = Self {
            rotation,
            translation,
            size,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let r = &self.rotation;
        if !r
            .iter()
            .chain(self.translation.iter())
            .chain(self.size.iter())
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::InvalidPose("non-finite component".into()));
        }
        let orth = (r.transpose() * r - Matrix3::identity()).amax();
        if orth > ROTATION_TOLERANCE || (r.determinant() - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidPose(format!(
                "rotation is not a proper rotation (orthogonality error {orth:e}, det {})",
                r.determinant()
            )));
        }
        if self.size.iter().any(|&s| !(s > 0.0)) {
            return Err(GeometryError::InvalidPose(format!(
                "size must be positive, got {:?}",
                self.size.as_slice()
            )));
        }
        if !(self.translation.z > 0.0) {
            return Err(GeometryError::InvalidPose(format!(
                "center depth must be positive, got {}",
                self.translation.z
            )));
        }
        Ok(())
    }

    /// The same box scaled by `lambda` about the camera center.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            rotation: self.rotation,
            translation: self.translation * lambda,
            size: self.size * lambda,
        }
    }

    pub fn volume(&self) -> f64 {
        self.size.product()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxPoseRepr {
    /// Row-major.
    rotation: [f64; 9],
    translation: [f64; 3],
    size: [f64; 3],
}

impl From<BoxPose> for BoxPoseRepr {
    fn from(p: BoxPose) -> Self {
        let r = p.rotation;
        Self {
            rotation: std::array::from_fn(|k| r[(k / 3, k % 3)]),
            translation: p.translation.into(),
            size: p.size.into(),
        }
    }
}

impl TryFrom<BoxPoseRepr> for BoxPose {
    type Error = GeometryError;

    fn try_from(r: BoxPoseRepr) -> Result<Self, Self::Error> {
        BoxPose::new(
            Matrix3::from_row_slice(&r.rotation),
            Vector3::from(r.translation),
            Vector3::from(r.size),
        )
    }
}

/// The nine projected keypoints in pixels, canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 2]; NUM_KEYPOINTS]", into = "[[f64; 2]; NUM_KEYPOINTS]")]
pub struct KeypointSet2D {
    pub points: [Vector2<f64>; NUM_KEYPOINTS],
}

impl KeypointSet2D {
    pub fn new(points: [Vector2<f64>; NUM_KEYPOINTS]) -> Self {
        Self { points }
    }

    /// Axis-aligned extent of all nine points.
    pub fn bounding_rect(&self) -> Rect {
        let mut r = Rect::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            r.x0 = r.x0.min(p.x);
            r.y0 = r.y0.min(p.y);
            r.x1 = r.x1.max(p.x);
            r.y1 = r.y1.max(p.y);
        }
        r
    }

    pub fn map(&self, mut f: impl FnMut(&Vector2<f64>) -> Vector2<f64>) -> Self {
        Self {
            points: std::array::from_fn(|i| f(&self.points[i])),
        }
    }

    /// Root-mean-square point distance to `other`.
    pub fn rms_distance(&self, other: &Self) -> f64 {
        let ss: f64 = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a - b).norm_squared())
            .sum();
        (ss / NUM_KEYPOINTS as f64).sqrt()
    }

    pub fn max_distance(&self, other: &Self) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.x.is_finite() && p.y.is_finite())
    }
}

impl From<[[f64; 2]; NUM_KEYPOINTS]> for KeypointSet2D {
    fn from(a: [[f64; 2]; NUM_KEYPOINTS]) -> Self {
        Self {
            points: a.map(Vector2::from),
        }
    }
}

impl From<KeypointSet2D> for [[f64; 2]; NUM_KEYPOINTS] {
    fn from(k: KeypointSet2D) -> Self {
        k.points.map(|p| [p.x, p.y])
    }
}

/// Camera-frame box keypoints in canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBoxVertices {
    pub points: [Vector3<f64>; NUM_KEYPOINTS],
}

impl OrientedBoxVertices {
    pub fn new(points: [Vector3<f64>; NUM_KEYPOINTS]) -> Self {
        Self { points }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            points: self.points.map(|p| p * s),
        }
    }

    /// Mean of the four parallel edge vectors along each object axis.
    pub fn mean_edges(&self) -> [Vector3<f64>; 3] {
        std::array::from_fn(|axis| {
            let bit = 1 << axis;
            let mut sum = Vector3::zeros();
            for b in (0..8).filter(|b| b & bit == 0) {
                sum += self.points[(b | bit) + 1] - self.points[b + 1];
            }
            sum / 4.0
        })
    }

    /// Mean of the four parallel edge lengths along each object axis.
    pub fn mean_edge_lengths(&self) -> Vector3<f64> {
        Vector3::from_fn(|axis, _| {
            let bit = 1 << axis;
            (0..8)
                .filter(|b| b & bit == 0)
                .map(|b| (self.points[(b | bit) + 1] - self.points[b + 1]).norm())
                .sum::<f64>()
                / 4.0
        })
    }
}

/// Rigid map `x ↦ rotation·x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigidRepr", into = "RigidRepr")]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &Self) -> Self {
        Self {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    /// Move a box rigidly.
    pub fn apply_pose(&self, pose: &BoxPose) -> BoxPose {
        BoxPose {
            rotation: self.rotation * pose.rotation,
            translation: self.apply(&pose.translation),
            size: pose.size,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigidRepr {
    /// Row-major.
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<RigidTransform> for RigidRepr {
    fn from(t: RigidTransform) -> Self {
        Self {
            rotation: std::array::from_fn(|k| t.rotation[(k / 3, k % 3)]),
            translation: t.translation.into(),
        }
    }
}

impl TryFrom<RigidRepr> for RigidTransform {
    type Error = GeometryError;

    fn try_from(r: RigidRepr) -> Result<Self, Self::Error> {
        let rotation = Matrix3::from_row_slice(&r.rotation);
        if (rotation.transpose() * rotation - Matrix3::identity()).amax() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidPose(
                "rigid transform rotation is not orthonormal".into(),
            ));
        }
        Ok(Self {
            rotation,
            translation: r.translation.into(),
        })
    }
}

/// Pinhole projection `u = fx·x/z + cx`, `v = fy·y/z + cy`.
pub fn project(k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    if !(p.z > 0.0) {
        return Err(GeometryError::BehindCamera { depth: p.z });
    }
    Ok(Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Back-project a pixel to the viewing ray direction with unit depth.
pub fn unproject(k: &CameraIntrinsics, p: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new((p.x - k.cx) / k.fx, (p.y - k.cy) / k.fy, 1.0)
}

pub fn box_vertices(pose: &BoxPose) -> OrientedBoxVertices {
    let half = pose.size / 2.0;
    OrientedBoxVertices {
        points: std::array::from_fn(|i| {
            let s = KEYPOINT_SIGNS[i];
            let local = Vector3::new(s[0] * half.x, s[1] * half.y, s[2] * half.z);
            pose.translation + pose.rotation * local
        }),
    }
}

pub fn project_vertices(k: &CameraIntrinsics, v: &OrientedBoxVertices) -> Result<KeypointSet2D, GeometryError> {
    let mut out = [Vector2::zeros(); NUM_KEYPOINTS];
    for (i, p) in v.points.iter().enumerate() {
        out[i] = project(k, p).map_err(|_| GeometryError::VertexBehindCamera { index: i, depth: p.z })?;
    }
    Ok(KeypointSet2D { points: out })
}

pub fn project_box(k: &CameraIntrinsics, pose: &BoxPose) -> Result<KeypointSet2D, GeometryError> {
    project_vertices(k, &box_vertices(pose))
}

/// A pose recovered from (possibly noisy) vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedPose {
    pub pose: BoxPose,
    /// RMS distance between the input points and the fitted box's vertices.
    pub residual: f64,
}

/// Fit a rigid box to nine vertices.
///
/// Each axis direction is the mean of its four parallel edges and each size
/// the mean of their lengths; the direction matrix is projected onto SO(3)
/// with a determinant-corrected SVD. The translation is point 0.
pub fn fit_pose_from_vertices(verts: &OrientedBoxVertices) -> Result<FittedPose, GeometryError> {
    let lengths = verts.mean_edge_lengths();
    let edges = verts.mean_edges();
    let degenerate = |l: f64| !(l > DEGENERATE_EDGE_LENGTH);
    if lengths.iter().any(|&l| degenerate(l)) || edges.iter().any(|e| degenerate(e.norm())) {
        return Err(GeometryError::DegenerateVertices {
            lengths: lengths.into(),
        });
    }
    let directions = Matrix3::from_columns(&edges.map(|e| e.normalize()));
    let rotation = nearest_rotation(&directions);

    let pose = BoxPose {
        rotation,
        translation: verts.points[0],
        size: lengths,
    };
    let fitted = box_vertices(&pose);
    let ss: f64 = fitted
        .points
        .iter()
        .zip(&verts.points)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok(FittedPose {
        pose,
        residual: (ss / NUM_KEYPOINTS as f64).sqrt(),
    })
}

/// Orthogonal Procrustes: the rotation closest to `m` in Frobenius norm.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    let cos = (r.trace() - 1.0) / 2.0;
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = skew.norm() / 2.0;
    sin.atan2(cos)
}

/// Angle between two vectors, in radians.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Rotation of `angle` radians about a (not necessarily unit) axis.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).into_inner()
}
