//! On-disk JSON documents. Each carries `"schema": "boxtrack9/1"`; floats use
//! the shortest representation that round-trips exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use boxtrack::geometry::{BoxPose, CameraIntrinsics, KeypointSet2D};
use boxtrack::sim::{Scene, SceneFrame, SceneMeta};
use boxtrack::tracker::{DiscardedDetection, PipelineOutput, TrackEvent, TrackRecord};
use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA: &str = "boxtrack9/1";

fn schema_string() -> String {
    SCHEMA.to_string()
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Parse a document, checking its schema tag first so a wrong file type
/// gets a clear message.
pub fn read_document<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    let doc_err = |message: String| CliError::Document {
        path: path.to_owned(),
        message,
    };
    #[derive(Deserialize)]
    struct Tag {
        schema: Option<String>,
    }
    let tag: Tag = serde_json::from_str(&text).map_err(|e| doc_err(e.to_string()))?;
    match tag.schema.as_deref() {
        Some(SCHEMA) => {}
        Some(other) => {
            return Err(doc_err(format!(
                "unsupported schema \"{other}\" (expected \"{SCHEMA}\")"
            )))
        }
        None => return Err(doc_err(format!("missing \"schema\" field (expected \"{SCHEMA}\")"))),
    }
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        doc_err(format!("at `{at}`: {}", e.into_inner()))
    })
}

/// Write a document followed by a newline, creating parent directories.
pub fn write_document<T: Serialize>(path: &Path, doc: &T, pretty: bool) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_owned(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut bytes = if pretty {
        serde_json::to_vec_pretty(doc)
    } else {
        serde_json::to_vec(doc)
    }
    .map_err(|e| CliError::Document {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDoc {
    #[serde(default = "schema_string")]
    pub schema: String,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<SceneFrame>,
    pub meta: SceneMeta,
}

impl From<Scene> for SceneDoc {
    fn from(s: Scene) -> Self {
        Self {
            schema: schema_string(),
            intrinsics: s.intrinsics,
            frames: s.frames,
            meta: s.meta,
        }
    }
}

impl SceneDoc {
    pub fn into_scene(self) -> Result<Scene, String> {
        let scene = Scene {
            intrinsics: self.intrinsics,
            frames: self.frames,
            meta: self.meta,
        };
        scene.validate()?;
        if let Some(f) = scene
            .frames
            .iter()
            .find(|f| f.gt_poses.len() != scene.meta.trajectory.n_objects)
        {
            return Err(format!(
                "frame {} lists {} poses for {} objects",
                f.frame_id,
                f.gt_poses.len(),
                scene.n_objects()
            ));
        }
        Ok(scene)
    }
}

/// One tracked box at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecordDoc {
    pub frame: u64,
    pub id: u64,
    pub keypoints2d: KeypointSet2D,
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub size: [f64; 3],
    pub residual: f64,
}

impl From<&TrackRecord> for PoseRecordDoc {
    fn from(r: &TrackRecord) -> Self {
        let m = r.pose.rotation;
        Self {
            frame: r.frame,
            id: r.id,
            keypoints2d: r.keypoints,
            rotation: std::array::from_fn(|k| m[(k / 3, k % 3)]),
            translation: r.pose.translation.into(),
            size: r.pose.size.into(),
            residual: r.residual,
        }
    }
}

impl PoseRecordDoc {
    pub fn pose(&self) -> Result<BoxPose, String> {
        BoxPose::new(
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from(self.translation),
            Vector3::from(self.size),
        )
        .map_err(|e| format!("record for track {} at frame {}: {e}", self.id, self.frame))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseStreamDoc {
    #[serde(default = "schema_string")]
    pub schema: String,
    pub intrinsics: CameraIntrinsics,
    /// Number of frames the pipeline processed.
    pub n_frames: u64,
    pub records: Vec<PoseRecordDoc>,
    pub lost: Vec<TrackEvent>,
    pub dropped: Vec<TrackEvent>,
    pub discarded: Vec<DiscardedDetection>,
}

impl PoseStreamDoc {
    pub fn new(intrinsics: CameraIntrinsics, n_frames: u64, out: &PipelineOutput) -> Self {
        Self {
            schema: schema_string(),
            intrinsics,
            n_frames,
            records: out.records.iter().map(PoseRecordDoc::from).collect(),
            lost: out.lost.clone(),
            dropped: out.dropped.clone(),
            discarded: out.discarded.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameError {
    pub frame: u64,
    /// Ground-truth object the record was matched to in this frame.
    pub object: usize,
    pub rotation_err: f64,
    pub translation_dir_err: f64,
    pub depth_ratio: f64,
    pub size_ratio: f64,
    /// Depth-aligned 3D IoU with the matched object.
    pub iou3d: f64,
    /// Largest keypoint distance to the object's projection, pixels.
    pub keypoint_max_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackMetrics {
    pub id: u64,
    /// Object the track followed most often.
    pub object: usize,
    pub first_frame: u64,
    pub last_frame: u64,
    pub pose_errors: Vec<FrameError>,
    /// `null` when the track has no consecutive frame pair.
    pub jitter: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApEntry {
    pub iou_threshold: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub n_records: usize,
    pub n_tracks: usize,
    pub n_lost: usize,
    pub mean_rotation_err: Option<f64>,
    pub max_rotation_err: Option<f64>,
    pub max_keypoint_err: Option<f64>,
    pub mean_jitter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDoc {
    #[serde(default = "schema_string")]
    pub schema: String,
    pub ap: Vec<ApEntry>,
    pub tracks: Vec<TrackMetrics>,
    pub summary: Summary,
}
