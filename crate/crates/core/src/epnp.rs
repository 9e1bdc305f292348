//! Scale-free EPnP lifting of the nine box keypoints.
//!
//! The four control points are the box center and the center displaced by
//! each half-axis, so every keypoint is a fixed affine combination of them
//! regardless of the (unknown) box dimensions. The stacked control points
//! span the one-dimensional null space of an 18×12 linear system; the free
//! direction is the global scale about the camera center.

use nalgebra::{SMatrix, SVector, Vector3};
use thiserror::Error;

use crate::geometry::{
    project_vertices, CameraIntrinsics, GeometryError, KeypointSet2D, OrientedBoxVertices, KEYPOINT_SIGNS,
    NUM_KEYPOINTS,
};
use crate::linalg::symmetric_eigen;

/// Lifts whose normal matrix has a smaller second-to-first eigenvalue ratio
/// are rejected as ambiguous.
pub const MIN_SPECTRAL_GAP: f64 = 10.0;

/// Relative size of the second eigenvalue below which the null space is
/// numerically at least two-dimensional, whatever the ratio says.
const NULL_SPACE_FLOOR: f64 = 1e-13;

const EIGEN_TOLERANCE: f64 = 1e-15;

pub type DesignMatrix = SMatrix<f64, 18, 12>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiftError {
    #[error("ambiguous lift: spectral gap {spectral_gap:.3e} below {MIN_SPECTRAL_GAP}")]
    AmbiguousLift { spectral_gap: f64 },
    #[error("lifted vertex {index} has non-positive depth {depth}")]
    NegativeDepth { index: usize, depth: f64 },
    #[error("non-finite keypoints")]
    NonFinite,
    #[error("canonical size must be positive, got {0:?}")]
    InvalidCanonicalSize([f64; 3]),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Barycentric coefficients of the nine keypoints with respect to the
/// control points `(C0, C0 + hx, C0 + hy, C0 + hz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarycentricTable {
    pub rows: [[f64; 4]; NUM_KEYPOINTS],
}

pub fn barycentric_table() -> BarycentricTable {
    BarycentricTable {
        rows: std::array::from_fn(|i| {
            let [sx, sy, sz] = KEYPOINT_SIGNS[i];
            [1.0 - sx - sy - sz, sx, sy, sz]
        }),
    }
}

impl BarycentricTable {
    /// Combine four control points into the nine keypoints.
    pub fn vertices(&self, control: &[Vector3<f64>; 4]) -> OrientedBoxVertices {
        OrientedBoxVertices::new(std::array::from_fn(|i| {
            let a = self.rows[i];
            control[0] * a[0] + control[1] * a[1] + control[2] * a[2] + control[3] * a[3]
        }))
    }
}

/// The 18×12 EPnP system `M·x = 0` over stacked control-point coordinates
/// `x = (C0, C1, C2, C3)`.
pub fn build_design_matrix(k: &CameraIntrinsics, kp: &KeypointSet2D) -> DesignMatrix {
    let table = barycentric_table();
    let mut m = DesignMatrix::zeros();
    for (i, p) in kp.points.iter().enumerate() {
        for (j, &a) in table.rows[i].iter().enumerate() {
            m[(2 * i, 3 * j)] = a * k.fx;
            m[(2 * i, 3 * j + 2)] = a * (k.cx - p.x);
            m[(2 * i + 1, 3 * j + 1)] = a * k.fy;
            m[(2 * i + 1, 3 * j + 2)] = a * (k.cy - p.y);
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftResult {
    /// Camera-frame keypoints normalized so the center has depth 1.
    pub vertices: OrientedBoxVertices,
    pub reprojection_rms: f64,
    /// Ratio of the second-smallest to the smallest eigenvalue of `MᵀM`.
    pub spectral_gap: f64,
}

/// Recover the camera-frame box from its nine projected keypoints.
pub fn lift(k: &CameraIntrinsics, kp: &KeypointSet2D) -> Result<LiftResult, LiftError> {
    if !kp.is_finite() {
        return Err(LiftError::NonFinite);
    }
    let m = build_design_matrix(k, kp);
    let normal = m.transpose() * m;
    let eig = symmetric_eigen(&normal, EIGEN_TOLERANCE);

    let smallest = eig.values[0].max(0.0);
    let second = eig.values[1];
    let largest = eig.values[11];
    let spectral_gap = if smallest > 0.0 {
        second / smallest
    } else {
        f64::INFINITY
    };
    if !(spectral_gap >= MIN_SPECTRAL_GAP) || !(second > NULL_SPACE_FLOOR * largest) {
        return Err(LiftError::AmbiguousLift {
            spectral_gap: if second > 0.0 { spectral_gap } else { 1.0 },
        });
    }

    let x: SVector<f64, 12> = eig.smallest_vector();
    let control: [Vector3<f64>; 4] = std::array::from_fn(|j| Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]));
    let raw = barycentric_table().vertices(&control);

    let mean_depth = raw.points[1..].iter().map(|p| p.z).sum::<f64>() / 8.0;
    if !(mean_depth.abs() > 0.0) {
        return Err(LiftError::AmbiguousLift { spectral_gap });
    }
    // Center depth equals the mean corner depth, so this fixes sign and scale together.
    let vertices = raw.scaled(1.0 / mean_depth);
    if let Some((index, p)) = vertices.points.iter().enumerate().find(|(_, p)| !(p.z > 0.0)) {
        return Err(LiftError::NegativeDepth { index, depth: p.z });
    }

    let reprojected = project_vertices(k, &vertices)?;
    Ok(LiftResult {
        vertices,
        reprojection_rms: reprojected.rms_distance(kp),
        spectral_gap,
    })
}

/// Scale vertices about the camera center so the geometric mean of the
/// recovered edge lengths matches that of `canonical_size`.
pub fn rescale_to_canonical(
    v: &OrientedBoxVertices,
    canonical_size: &Vector3<f64>,
) -> Result<OrientedBoxVertices, LiftError> {
    if canonical_size.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(LiftError::InvalidCanonicalSize((*canonical_size).into()));
    }
    let recovered = v.mean_edge_lengths();
    if recovered
        .iter()
        .any(|&l| !(l > crate::geometry::DEGENERATE_EDGE_LENGTH))
    {
        return Err(GeometryError::DegenerateVertices {
            lengths: recovered.into(),
        }
        .into());
    }
    let scale = (canonical_size.product() / recovered.product()).cbrt();
    Ok(v.scaled(scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, box_vertices, fit_pose_from_vertices, project_box, BoxPose};
    use nalgebra::Vector2;

    fn sample_pose() -> BoxPose {
        BoxPose::new(
            axis_angle(&Vector3::new(0.4, 1.0, -0.3), 0.9),
            Vector3::new(0.3, -0.2, 2.5),
            Vector3::new(0.6, 0.4, 0.9),
        )
        .unwrap()
    }

    #[test]
    fn table_rows() {
        let t = barycentric_table();
        assert_eq!(t.rows[0], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.rows[1], [4.0, -1.0, -1.0, -1.0]);
        assert_eq!(t.rows[8], [-2.0, 1.0, 1.0, 1.0]);
        for row in t.rows {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn table_reconstructs_box() {
        let pose = sample_pose();
        let h = pose.size / 2.0;
        let c0 = pose.translation;
        let control = [
            c0,
            c0 + pose.rotation.column(0) * h.x,
            c0 + pose.rotation.column(1) * h.y,
            c0 + pose.rotation.column(2) * h.z,
        ];
        let v = barycentric_table().vertices(&control);
        let truth = box_vertices(&pose);
        for i in 0..9 {
            assert!((v.points[i] - truth.points[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn design_matrix_annihilates_true_control_points() {
        let k = CameraIntrinsics::default();
        let pose = sample_pose();
        let kp = project_box(&k, &pose).unwrap();
        let m = build_design_matrix(&k, &kp);
        let h = pose.size / 2.0;
        let c0 = pose.translation;
        let mut x = SVector::<f64, 12>::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&c0);
        for a in 0..3 {
            let c = c0 + pose.rotation.column(a) * h[a];
            x.fixed_rows_mut::<3>(3 * (a + 1)).copy_from(&c);
        }
        assert!((m * x).norm() < 1e-9 * x.norm());
    }

    #[test]
    fn design_matrix_at_principal_point() {
        let k = CameraIntrinsics::default();
        let kp = KeypointSet2D::new([Vector2::new(k.cx, k.cy); 9]);
        let m = build_design_matrix(&k, &kp);
        let t = barycentric_table();
        for i in 0..9 {
            for j in 0..4 {
                assert_eq!(m[(2 * i, 3 * j)], t.rows[i][j] * k.fx);
                assert_eq!(m[(2 * i + 1, 3 * j + 1)], t.rows[i][j] * k.fy);
                assert_eq!(m[(2 * i, 3 * j + 2)], 0.0);
                assert_eq!(m[(2 * i + 1, 3 * j + 2)], 0.0);
            }
        }
    }

    #[test]
    fn lift_recovers_box_up_to_scale() {
        let k = CameraIntrinsics::default();
        let pose = sample_pose();
        let kp = project_box(&k, &pose).unwrap();
        let lifted = lift(&k, &kp).unwrap();
        let truth = box_vertices(&pose).scaled(1.0 / pose.translation.z);
        for i in 0..9 {
            assert!((lifted.vertices.points[i] - truth.points[i]).norm() < 1e-6 * truth.points[i].norm());
        }
        assert!(lifted.reprojection_rms < 1e-6);
        assert!(lifted.spectral_gap > 1e6);
    }

    #[test]
    fn lift_is_defined_on_scale_classes() {
        let k = CameraIntrinsics::default();
        let pose = sample_pose();
        let a = lift(&k, &project_box(&k, &pose).unwrap()).unwrap();
        let b = lift(&k, &project_box(&k, &pose.scaled(0.5)).unwrap()).unwrap();
        for i in 0..9 {
            assert!((a.vertices.points[i] - b.vertices.points[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn collinear_keypoints_are_ambiguous() {
        let k = CameraIntrinsics::default();
        let kp = KeypointSet2D::new(std::array::from_fn(|i| {
            Vector2::new(100.0 + 10.0 * i as f64, 50.0 + 5.0 * i as f64)
        }));
        assert!(matches!(lift(&k, &kp), Err(LiftError::AmbiguousLift { .. })));
        let same = KeypointSet2D::new([Vector2::new(300.0, 200.0); 9]);
        assert!(matches!(lift(&k, &same), Err(LiftError::AmbiguousLift { .. })));
    }

    #[test]
    fn rescale_examples() {
        let pose = sample_pose();
        let v = box_vertices(&pose);
        let recovered = v.mean_edge_lengths();
        let same = rescale_to_canonical(&v, &recovered).unwrap();
        for i in 0..9 {
            assert!((same.points[i] - v.points[i]).norm() < 1e-12);
        }
        let doubled = rescale_to_canonical(&v, &(recovered * 2.0)).unwrap();
        for i in 0..9 {
            assert!((doubled.points[i] - v.points[i] * 2.0).norm() < 1e-12);
        }
        assert!(rescale_to_canonical(&v, &Vector3::new(1.0, 0.0, 1.0)).is_err());
        let collapsed = OrientedBoxVertices::new([Vector3::new(0.0, 0.0, 1.0); 9]);
        assert!(rescale_to_canonical(&collapsed, &Vector3::repeat(1.0)).is_err());
    }

    #[test]
    fn rescale_then_fit_matches_canonical_geometric_mean() {
        let k = CameraIntrinsics::default();
        let pose = sample_pose();
        let lifted = lift(&k, &project_box(&k, &pose).unwrap()).unwrap();
        let canonical = Vector3::new(0.3, 1.0, 0.45);
        let fitted = fit_pose_from_vertices(&rescale_to_canonical(&lifted.vertices, &canonical).unwrap()).unwrap();
        let ratio = (fitted.pose.size.product() / canonical.product()).cbrt();
        assert!((ratio - 1.0).abs() < 1e-9);
        // Same projection as before rescaling.
        let before = crate::geometry::project_vertices(&k, &lifted.vertices).unwrap();
        let after = project_box(&k, &fitted.pose).unwrap();
        assert!(before.max_distance(&after) < 1e-6);
    }
}
