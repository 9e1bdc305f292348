//! Deterministic synthetic scenes: boxes resting on a ground plane, a moving
//! camera, and plane-point correspondence streams between consecutive frames.
//!
//! World frame: `z = 0` is the ground, `+z` up. Each object's local `+z` axis
//! points up, so its bottom face (keypoints with the z bit clear) rests on
//! the ground. Every object owns a square "support patch" of ground points
//! around its footprint; the patch follows the object's in-plane motion and
//! supplies that object's correspondences.
//!
//! Random draws come from one `ChaCha8Rng` seeded with `TrajectoryConfig::seed`
//! in this order:
//! 1. per object: yaw (uniform in `[-π, π)`), then sizes x, y, z (uniform in
//!    `[size_min, size_max]`);
//! 2. per object: its share of the plane points, two uniforms each;
//! 3. per frame (handheld camera only): three standard normals of jitter;
//! 4. per frame `t ≥ 1`, per plane point in order: one uniform deciding
//!    outlier replacement, four standard normals of noise (prev x/y, curr
//!    x/y), and for outliers two uniforms for the replacement position.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{stub_detect_pose, Detection, StubConfig};
use crate::geometry::{axis_angle, project, project_box, BoxPose, CameraIntrinsics, GeometryError, RigidTransform};
use crate::homography::{Correspondence, Homography};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid trajectory config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("object {object} is behind the camera at frame {frame}")]
    ObjectBehindCamera { frame: usize, object: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SimError {
    SimError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CameraMotion {
    /// Circle the scene center at constant height, always looking at it.
    Orbit {
        /// Radians per frame.
        rate: f64,
    },
    /// Constant-velocity translation with fixed orientation.
    Translate {
        /// World units per frame.
        velocity: [f64; 3],
    },
    /// Smooth sway about the start position plus seeded per-frame jitter,
    /// looking at the scene center.
    HandheldNoise {
        /// Sway amplitude, world units.
        amplitude: f64,
        /// Sway period, frames.
        period: f64,
        /// Jitter standard deviation, world units.
        jitter: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectMotion {
    Static,
    /// Slide along the ground; the support patch moves along.
    Translate {
        /// World units per frame along ground x, y.
        velocity: [f64; 2],
    },
    /// Rotate about the object's local x axis through its center. The support
    /// patch stays put, so the object leaves its plane.
    Roll {
        /// Radians per frame.
        rate: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub intrinsics: CameraIntrinsics,
    pub n_frames: usize,
    pub n_objects: usize,
    pub camera_motion: CameraMotion,
    pub object_motion: ObjectMotion,
    /// Total number of tracked ground points, split across objects.
    pub plane_points: usize,
    /// Per-coordinate correspondence noise, pixels.
    pub corr_noise_sigma: f64,
    /// Fraction of correspondences whose current point is replaced by a
    /// uniform viewport position.
    pub outlier_rate: f64,
    pub seed: u64,
    /// Horizontal camera distance from the scene center at frame 0.
    pub camera_distance: f64,
    pub camera_height: f64,
    /// Ground distance between neighboring objects.
    pub object_spacing: f64,
    pub size_min: f64,
    pub size_max: f64,
    /// Half-width of each support patch relative to the object's larger
    /// footprint dimension.
    pub patch_scale: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            n_frames: 200,
            n_objects: 1,
            camera_motion: CameraMotion::Orbit { rate: 0.01 },
            object_motion: ObjectMotion::Static,
            plane_points: 200,
            corr_noise_sigma: 0.0,
            outlier_rate: 0.0,
            seed: 0,
            camera_distance: 2.5,
            camera_height: 1.5,
            object_spacing: 1.2,
            size_min: 0.3,
            size_max: 0.6,
            patch_scale: 0.8,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.intrinsics.validate()?;
        if self.n_frames < 2 {
            return Err(invalid(
                "n_frames",
                format!("must be at least 2, got {}", self.n_frames),
            ));
        }
        if self.n_objects < 1 {
            return Err(invalid("n_objects", "must be at least 1"));
        }
        if self.plane_points < self.n_objects * 4 {
            return Err(invalid("plane_points", "need at least 4 per object"));
        }
        if !(self.outlier_rate >= 0.0 && self.outlier_rate < 1.0) {
            return Err(invalid("outlier_rate", "must lie in [0, 1)"));
        }
        if !(self.corr_noise_sigma >= 0.0) || !self.corr_noise_sigma.is_finite() {
            return Err(invalid("corr_noise_sigma", "must be non-negative and finite"));
        }
        if !(self.size_min > 0.0 && self.size_max >= self.size_min && self.size_max.is_finite()) {
            return Err(invalid("size_min", "need 0 < size_min <= size_max"));
        }
        for (field, v) in [
            ("camera_distance", self.camera_distance),
            ("camera_height", self.camera_height),
            ("object_spacing", self.object_spacing),
            ("patch_scale", self.patch_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(field, "must be finite and non-negative"));
            }
        }
        if !(self.patch_scale > 0.0) {
            return Err(invalid("patch_scale", "must be positive"));
        }
        let finite = match self.camera_motion {
            CameraMotion::Orbit { rate } => rate.is_finite(),
            CameraMotion::Translate { velocity } => velocity.iter().all(|v| v.is_finite()),
            CameraMotion::HandheldNoise {
                amplitude,
                period,
                jitter,
            } => amplitude.is_finite() && jitter.is_finite() && jitter >= 0.0 && period.is_finite() && period > 0.0,
        };
        if !finite {
            return Err(invalid(
                "camera_motion",
                "magnitudes must be finite (period > 0, jitter >= 0)",
            ));
        }
        let finite = match self.object_motion {
            ObjectMotion::Static => true,
            ObjectMotion::Translate { velocity } => velocity.iter().all(|v| v.is_finite()),
            ObjectMotion::Roll { rate } => rate.is_finite(),
        };
        if !finite {
            return Err(invalid("object_motion", "magnitudes must be finite"));
        }
        Ok(())
    }
}

/// Ground truth and observations for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFrame {
    pub frame_id: u64,
    /// World-to-camera transform.
    pub camera: RigidTransform,
    /// Camera-frame box per object.
    pub gt_poses: Vec<BoxPose>,
    /// World pose of each object's support patch.
    pub supports: Vec<RigidTransform>,
    /// Correspondences between frame `frame_id - 1` and this frame.
    pub correspondences: Vec<Correspondence>,
    /// Detections delivered at this frame, stamped with their capture frame.
    pub detection_events: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeta {
    pub trajectory: TrajectoryConfig,
    pub stub: Option<StubConfig>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<SceneFrame>,
    pub meta: SceneMeta,
}

impl Scene {
    pub fn n_objects(&self) -> usize {
        self.meta.trajectory.n_objects
    }

    pub fn validate(&self) -> Result<(), String> {
        self.intrinsics.validate().map_err(|e| e.to_string())?;
        for (i, f) in self.frames.iter().enumerate() {
            if f.frame_id != i as u64 {
                return Err(format!(
                    "frame ids must be contiguous from 0; frame {i} has id {}",
                    f.frame_id
                ));
            }
            if let Some(p) = f.gt_poses.iter().find(|p| !(p.translation.z > 0.0)) {
                return Err(format!(
                    "frame {i}: gt pose with non-positive depth {}",
                    p.translation.z
                ));
            }
            if f.detection_events.iter().any(|d| d.frame_id > f.frame_id) {
                return Err(format!("frame {i}: detection captured after its delivery frame"));
            }
        }
        Ok(())
    }
}

fn look_at(position: &Vector3<f64>, target: &Vector3<f64>) -> RigidTransform {
    let forward = (target - position).normalize();
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    RigidTransform::new(rotation, -(rotation * position))
}

struct ObjectSeed {
    yaw: f64,
    size: Vector3<f64>,
    ground: Vector2<f64>,
}

/// World pose of object `k` at frame `t`, plus its support patch pose.
fn object_world(obj: &ObjectSeed, motion: &ObjectMotion, t: usize) -> (BoxPose, RigidTransform) {
    let tf = t as f64;
    let yaw = axis_angle(&Vector3::z(), obj.yaw);
    let (ground, rotation) = match *motion {
        ObjectMotion::Static => (obj.ground, yaw),
        ObjectMotion::Translate { velocity } => (obj.ground + Vector2::from(velocity) * tf, yaw),
        ObjectMotion::Roll { rate } => (obj.ground, yaw * axis_angle(&Vector3::x(), rate * tf)),
    };
    let center = Vector3::new(ground.x, ground.y, obj.size.z / 2.0);
    let pose = BoxPose {
        rotation,
        translation: center,
        size: obj.size,
    };
    let support = RigidTransform::new(yaw, Vector3::new(ground.x, ground.y, 0.0));
    (pose, support)
}

/// Generate a scene. Detection events are left empty; see [`attach_detections`].
pub fn generate_scene(cfg: &TrajectoryConfig) -> Result<Scene, SimError> {
    cfg.validate()?;
    let k = cfg.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let offset = (cfg.n_objects as f64 - 1.0) / 2.0;
    let objects: Vec<ObjectSeed> = (0..cfg.n_objects)
        .map(|i| {
            let yaw = rng.random_range(-PI..PI);
            let size = Vector3::from_fn(|_, _| rng.random_range(cfg.size_min..=cfg.size_max));
            ObjectSeed {
                yaw,
                size,
                ground: Vector2::new((i as f64 - offset) * cfg.object_spacing, 0.0),
            }
        })
        .collect();

    // Patch-local ground coordinates per object.
    let patches: Vec<Vec<Vector2<f64>>> = objects
        .iter()
        .enumerate()
        .map(|(i, obj)| {
            let share = cfg.plane_points / cfg.n_objects + usize::from(i < cfg.plane_points % cfg.n_objects);
            let half = cfg.patch_scale * obj.size.x.max(obj.size.y);
            (0..share)
                .map(|_| Vector2::new(rng.random_range(-half..half), rng.random_range(-half..half)))
                .collect()
        })
        .collect();

    let target = {
        let c = objects.iter().map(|o| o.ground).sum::<Vector2<f64>>() / cfg.n_objects as f64;
        Vector3::new(c.x, c.y, 0.2)
    };
    let start_angle = -PI / 2.0;
    let start = target
        + Vector3::new(
            cfg.camera_distance * start_angle.cos(),
            cfg.camera_distance * start_angle.sin(),
            cfg.camera_height - target.z,
        );

    let cameras: Vec<RigidTransform> = (0..cfg.n_frames)
        .map(|t| {
            let tf = t as f64;
            match cfg.camera_motion {
                CameraMotion::Orbit { rate } => {
                    let a = start_angle + rate * tf;
                    let pos = Vector3::new(
                        target.x + cfg.camera_distance * a.cos(),
                        target.y + cfg.camera_distance * a.sin(),
                        cfg.camera_height,
                    );
                    look_at(&pos, &target)
                }
                CameraMotion::Translate { velocity } => {
                    let base = look_at(&start, &target);
                    let pos = start + Vector3::from(velocity) * tf;
                    RigidTransform::new(base.rotation, -(base.rotation * pos))
                }
                CameraMotion::HandheldNoise {
                    amplitude,
                    period,
                    jitter,
                } => {
                    let w = 2.0 * PI * tf / period;
                    let sway = Vector3::new(w.sin(), (w / 1.3).sin(), 0.5 * (w / 0.7).sin()) * amplitude;
                    let noise = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)) * jitter;
                    look_at(&(start + sway + noise), &target)
                }
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut prev_world: Vec<Vec<Vector3<f64>>> = Vec::new();
    for t in 0..cfg.n_frames {
        let camera = cameras[t];
        let mut gt_poses = Vec::with_capacity(cfg.n_objects);
        let mut supports = Vec::with_capacity(cfg.n_objects);
        for (i, obj) in objects.iter().enumerate() {
            let (world_pose, support) = object_world(obj, &cfg.object_motion, t);
            let pose = camera.apply_pose(&world_pose);
            if project_box(&k, &pose).is_err() {
                return Err(SimError::ObjectBehindCamera { frame: t, object: i });
            }
            gt_poses.push(pose);
            supports.push(support);
        }

        let world: Vec<Vec<Vector3<f64>>> = patches
            .iter()
            .zip(&supports)
            .map(|(pts, s)| pts.iter().map(|p| s.apply(&Vector3::new(p.x, p.y, 0.0))).collect())
            .collect();

        let mut correspondences = Vec::new();
        if t > 0 {
            let prev_camera = cameras[t - 1];
            for (prev_pts, curr_pts) in prev_world.iter().zip(&world) {
                for (xp, xc) in prev_pts.iter().zip(curr_pts) {
                    let outlier_draw: f64 = rng.random();
                    let noise: [f64; 4] =
                        std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) * cfg.corr_noise_sigma);
                    let is_outlier = outlier_draw < cfg.outlier_rate;
                    let replacement = if is_outlier {
                        Some(Vector2::new(
                            rng.random_range(0.0..k.width as f64),
                            rng.random_range(0.0..k.height as f64),
                        ))
                    } else {
                        None
                    };
                    let (Ok(p), Ok(c)) = (project(&k, &prev_camera.apply(xp)), project(&k, &camera.apply(xc))) else {
                        continue;
                    };
                    if !k.contains(&p) || !k.contains(&c) {
                        continue;
                    }
                    let prev = p + Vector2::new(noise[0], noise[1]);
                    let curr = replacement.unwrap_or(c + Vector2::new(noise[2], noise[3]));
                    correspondences.push(Correspondence::new(prev, curr));
                }
            }
        }
        prev_world = world;

        frames.push(SceneFrame {
            frame_id: t as u64,
            camera,
            gt_poses,
            supports,
            correspondences,
            detection_events: Vec::new(),
        });
    }

    Ok(Scene {
        intrinsics: k,
        frames,
        meta: SceneMeta {
            trajectory: *cfg,
            stub: None,
            seed: cfg.seed,
        },
    })
}

/// Run the synthetic detector over the scene and file each detection under
/// its delivery frame (`capture + latency`). Detections due after the last
/// frame are dropped. Replaces any existing events.
pub fn attach_detections(scene: &mut Scene, stub: &StubConfig) {
    let n = scene.frames.len() as u64;
    for f in scene.frames.iter_mut() {
        f.detection_events.clear();
    }
    for capture in 0..n {
        let delivery = capture + stub.latency;
        if delivery >= n {
            break;
        }
        let dets: Vec<Detection> = scene.frames[capture as usize]
            .gt_poses
            .iter()
            .enumerate()
            .filter_map(|(i, pose)| stub_detect_pose(&scene.intrinsics, pose, capture, i, stub))
            .collect();
        scene.frames[delivery as usize].detection_events.extend(dets);
    }
    scene.meta.stub = Some(*stub);
}

/// Image-to-image homography induced by a world plane attached to
/// `support_prev`/`support_curr` (plane-local `z = 0`).
fn induced_homography(
    k: &CameraIntrinsics,
    cam_prev: &RigidTransform,
    cam_curr: &RigidTransform,
    support_prev: &RigidTransform,
    support_curr: &RigidTransform,
) -> Homography {
    // Columns r1, r2, t of the plane-to-camera transform.
    let plane_to_image = |cam: &RigidTransform, s: &RigidTransform| {
        let m = cam.compose(s);
        Matrix3::from_columns(&[
            m.rotation.column(0).into_owned(),
            m.rotation.column(1).into_owned(),
            m.translation,
        ])
    };
    let g_prev = plane_to_image(cam_prev, support_prev);
    let g_curr = plane_to_image(cam_curr, support_curr);
    let h = k.matrix() * g_curr * g_prev.try_inverse().expect("camera not on the plane") * k.inverse_matrix();
    Homography::new(h).expect("plane-induced homography is invertible")
}

/// Homography induced by the world ground plane between frames `t - 1` and `t`.
pub fn plane_homography(scene: &Scene, frame_t: usize) -> Homography {
    assert!(frame_t >= 1 && frame_t < scene.frames.len(), "frame_t out of range");
    let id = RigidTransform::identity();
    induced_homography(
        &scene.intrinsics,
        &scene.frames[frame_t - 1].camera,
        &scene.frames[frame_t].camera,
        &id,
        &id,
    )
}

/// Homography induced by object `object`'s support patch between frames
/// `t - 1` and `t`. Equals [`plane_homography`] for static objects.
pub fn support_homography(scene: &Scene, frame_t: usize, object: usize) -> Homography {
    assert!(frame_t >= 1 && frame_t < scene.frames.len(), "frame_t out of range");
    let (a, b) = (&scene.frames[frame_t - 1], &scene.frames[frame_t]);
    induced_homography(
        &scene.intrinsics,
        &a.camera,
        &b.camera,
        &a.supports[object],
        &b.supports[object],
    )
}

/// Rotation drawn uniformly from SO(3) (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        if q.norm() > 1e-6 {
            return nalgebra::UnitQuaternion::from_quaternion(q)
                .to_rotation_matrix()
                .into_inner();
        }
    }
}

/// Ranges for [`random_box_pose`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSampling {
    pub depth: (f64, f64),
    pub size: (f64, f64),
    /// Lateral center offset as a fraction of depth, per axis.
    pub lateral: f64,
    /// Minimum depth of every vertex; poses violating it are redrawn.
    pub min_vertex_depth: f64,
}

impl Default for PoseSampling {
    fn default() -> Self {
        Self {
            depth: (0.5, 5.0),
            size: (0.2, 2.0),
            lateral: 0.3,
            min_vertex_depth: 0.1,
        }
    }
}

/// Random camera-frame box: uniform rotation, uniform center depth and
/// sizes, lateral offset proportional to depth. Boxes reaching closer than
/// `min_vertex_depth` to the camera plane are redrawn.
pub fn random_box_pose<R: Rng + ?Sized>(rng: &mut R, s: &PoseSampling) -> BoxPose {
    loop {
        let rotation = random_rotation(rng);
        let z = rng.random_range(s.depth.0..=s.depth.1);
        let x = rng.random_range(-s.lateral..=s.lateral) * z;
        let y = rng.random_range(-s.lateral..=s.lateral) * z;
        let size = Vector3::from_fn(|_, _| rng.random_range(s.size.0..=s.size.1));
        let pose = BoxPose {
            rotation,
            translation: Vector3::new(x, y, z),
            size,
        };
        if crate::geometry::box_vertices(&pose)
            .points
            .iter()
            .all(|p| p.z >= s.min_vertex_depth)
        {
            return pose;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::KEYPOINT_SIGNS;
    use crate::homography::{apply, estimate_dlt};

    fn static_cfg() -> TrajectoryConfig {
        TrajectoryConfig {
            camera_motion: CameraMotion::Orbit { rate: 0.0 },
            n_frames: 5,
            ..Default::default()
        }
    }

    #[test]
    fn static_scene_correspondences_are_fixed_points() {
        let scene = generate_scene(&static_cfg()).unwrap();
        for f in &scene.frames[1..] {
            assert!(!f.correspondences.is_empty());
            for c in &f.correspondences {
                assert_eq!(c.prev, c.curr);
            }
        }
        assert!(plane_homography(&scene, 1).distance(&Homography::identity()) < 1e-12);
    }

    #[test]
    fn translating_camera_is_plane_induced() {
        let cfg = TrajectoryConfig {
            camera_motion: CameraMotion::Translate {
                velocity: [0.01, 0.004, -0.002],
            },
            n_frames: 10,
            ..Default::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        for t in 1..scene.frames.len() {
            let truth = plane_homography(&scene, t);
            let corrs = &scene.frames[t].correspondences;
            for c in corrs {
                assert!((apply(&truth, &c.prev).unwrap() - c.curr).norm() < 1e-9);
            }
            let est = estimate_dlt(corrs).unwrap();
            assert!(est.distance(&truth) < 1e-9, "frame {t}: {}", est.distance(&truth));
        }
    }

    #[test]
    fn pure_rotation_gives_infinite_homography() {
        let cfg = TrajectoryConfig {
            camera_motion: CameraMotion::HandheldNoise {
                amplitude: 0.0,
                period: 10.0,
                jitter: 0.0,
            },
            n_frames: 3,
            ..Default::default()
        };
        let mut scene = generate_scene(&cfg).unwrap();
        // Rotate the camera in place about its center between frames 1 and 2.
        let r = axis_angle(&Vector3::new(0.1, 1.0, 0.2), 0.03);
        let c1 = scene.frames[1].camera;
        scene.frames[2].camera = RigidTransform::new(r * c1.rotation, r * c1.translation);
        let expected = Homography::new(scene.intrinsics.matrix() * r * scene.intrinsics.inverse_matrix()).unwrap();
        assert!(plane_homography(&scene, 2).distance(&expected) < 1e-12);
    }

    #[test]
    fn orbit_bottom_vertices_follow_plane_homography() {
        let cfg = TrajectoryConfig {
            n_frames: 20,
            camera_motion: CameraMotion::Orbit { rate: 0.02 },
            ..Default::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        let k = scene.intrinsics;
        let mut worst_top: f64 = 0.0;
        for t in 1..scene.frames.len() {
            let h = plane_homography(&scene, t);
            let prev = project_box(&k, &scene.frames[t - 1].gt_poses[0]).unwrap();
            let curr = project_box(&k, &scene.frames[t].gt_poses[0]).unwrap();
            for (i, signs) in KEYPOINT_SIGNS.iter().enumerate().skip(1) {
                let moved = apply(&h, &prev.points[i]).unwrap();
                let err = (moved - curr.points[i]).norm();
                if signs[2] < 0.0 {
                    assert!(err < 1e-9, "bottom vertex {i} frame {t}: {err}");
                } else {
                    worst_top = worst_top.max(err);
                }
            }
        }
        // Off-plane vertices carry parallax the homography cannot represent.
        assert!(worst_top > 0.1, "{worst_top}");
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = TrajectoryConfig {
            corr_noise_sigma: 0.5,
            outlier_rate: 0.2,
            seed: 11,
            n_frames: 8,
            ..Default::default()
        };
        let a = serde_json::to_string(&generate_scene(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_scene(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&generate_scene(&TrajectoryConfig { seed: 12, ..cfg }).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scene_json_round_trip() {
        let cfg = TrajectoryConfig {
            corr_noise_sigma: 0.3,
            seed: 5,
            n_frames: 4,
            n_objects: 2,
            ..Default::default()
        };
        let mut scene = generate_scene(&cfg).unwrap();
        attach_detections(
            &mut scene,
            &StubConfig {
                cadence: 2,
                latency: 1,
                noise_sigma: 1.0,
                ..Default::default()
            },
        );
        let json = serde_json::to_string(&scene).unwrap();
        let back: Scene = serde_json::from_str(&json).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = TrajectoryConfig {
            n_frames: 1,
            ..Default::default()
        };
        assert!(matches!(
            generate_scene(&bad),
            Err(SimError::InvalidConfig { field: "n_frames", .. })
        ));
        let bad = TrajectoryConfig {
            outlier_rate: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            generate_scene(&bad),
            Err(SimError::InvalidConfig {
                field: "outlier_rate",
                ..
            })
        ));
    }

    #[test]
    fn camera_inside_object_is_a_generation_error() {
        let cfg = TrajectoryConfig {
            camera_distance: 0.0,
            camera_height: 0.1,
            n_frames: 2,
            ..Default::default()
        };
        assert!(matches!(generate_scene(&cfg), Err(SimError::ObjectBehindCamera { .. })));
    }

    #[test]
    fn detections_filed_at_delivery_frame() {
        let mut scene = generate_scene(&TrajectoryConfig {
            n_frames: 20,
            ..Default::default()
        })
        .unwrap();
        attach_detections(
            &mut scene,
            &StubConfig {
                cadence: 5,
                latency: 2,
                ..Default::default()
            },
        );
        let delivered: Vec<(u64, u64)> = scene
            .frames
            .iter()
            .flat_map(|f| f.detection_events.iter().map(move |d| (f.frame_id, d.frame_id)))
            .collect();
        assert_eq!(delivered, vec![(2, 0), (7, 5), (12, 10), (17, 15)]);
    }

    #[test]
    fn random_poses_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = PoseSampling::default();
        for _ in 0..500 {
            let p = random_box_pose(&mut rng, &s);
            p.validate().unwrap();
            assert!(p.translation.z >= s.depth.0 && p.translation.z <= s.depth.1);
            assert!(p.size.iter().all(|&v| v >= s.size.0 && v <= s.size.1));
            assert!(crate::geometry::box_vertices(&p)
                .points
                .iter()
                .all(|v| v.z >= s.min_vertex_depth));
        }
    }

    #[test]
    fn translating_object_patch_matches_support_homography() {
        let cfg = TrajectoryConfig {
            object_motion: ObjectMotion::Translate {
                velocity: [0.01, 0.005],
            },
            n_frames: 6,
            ..Default::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        for t in 1..scene.frames.len() {
            let h = support_homography(&scene, t, 0);
            for c in &scene.frames[t].correspondences {
                assert!((apply(&h, &c.prev).unwrap() - c.curr).norm() < 1e-9);
            }
        }
    }
}
