//! Detection-plus-tracking of 9-DoF oriented 3D bounding boxes from a single
//! calibrated camera.
//!
//! A detector supplies the nine projected box keypoints (center + corners),
//! [`epnp::lift`] recovers the camera-frame box up to one global scale, and
//! the [`tracker`] propagates the keypoints between detections with a robust
//! plane-motion tracker built on [`homography`]. [`sim`] produces
//! deterministic synthetic scenes and [`eval`] scores the results.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod epnp;
pub mod eval;
pub mod geometry;
pub mod homography;
pub mod linalg;
pub mod seeding;
pub mod sim;
pub mod tracker;

pub use detector::{Detection, StubConfig};
pub use epnp::{lift, rescale_to_canonical, LiftError, LiftResult};
pub use eval::{average_precision, jitter, pose_error, EvalError, GroundTruth, PoseError, ScoredEstimate};
pub use geometry::{
    box_vertices, fit_pose_from_vertices, iou2d_rect, iou3d, project, project_box, BoxPose, CameraIntrinsics,
    FittedPose, GeometryError, KeypointSet2D, OrientedBoxVertices, Rect, RigidTransform, BOX_EDGES, KEYPOINT_SIGNS,
    NUM_KEYPOINTS,
};
pub use homography::{estimate_dlt, estimate_ransac, Correspondence, Homography, HomographyError, RansacConfig};
pub use sim::{generate_scene, CameraMotion, ObjectMotion, Scene, TrajectoryConfig};
pub use tracker::{run_pipeline, FrameInput, PipelineConfig, PipelineOutput, Propagation, TrackRecord};
