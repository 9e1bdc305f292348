//! Subcommand implementations. Each returns the process exit status on
//! success paths that still need a non-zero code (lost tracks).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use boxtrack::eval::{
    aligned_iou, ap_from_curve, jitter, match_estimates, pose_error, pr_curve, GroundTruth, ScoredEstimate,
};
use boxtrack::geometry::{project_box, BoxPose, KeypointSet2D};
use boxtrack::sim::{attach_detections, generate_scene, Scene};
use boxtrack::tracker::{scene_inputs, Tracker};
use log::{info, warn};

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_TRACKING_LOST};
use crate::overlay::write_overlays;
use crate::schema::{
    read_document, write_document, ApEntry, FrameError, MetricsDoc, PoseStreamDoc, SceneDoc, Summary, TrackMetrics,
};

fn pick(flag: Option<&Path>, fallback: &Option<PathBuf>, what: &'static str) -> Result<PathBuf, CliError> {
    flag.map(Path::to_owned)
        .or_else(|| fallback.clone())
        .ok_or(CliError::MissingPath(what))
}

pub fn load_scene(path: &Path) -> Result<Scene, CliError> {
    let doc: SceneDoc = read_document(path)?;
    doc.into_scene().map_err(|message| CliError::Document {
        path: path.to_owned(),
        message,
    })
}

/// Generate a scene with detections and write it.
pub fn simulate(cfg: &RunConfig, out: Option<&Path>) -> Result<i32, CliError> {
    let out = pick(out, &cfg.paths.scene, "output path (--out)")?;
    let mut scene = generate_scene(&cfg.trajectory).map_err(|e| CliError::Input(e.to_string()))?;
    attach_detections(&mut scene, &cfg.stub);
    info!("simulated {} frames, {} objects", scene.frames.len(), scene.n_objects());
    write_document(&out, &SceneDoc::from(scene), false)?;
    Ok(0)
}

/// Run the pipeline on a scene and write the pose stream (and overlays).
pub fn track(
    cfg: &RunConfig,
    scene: Option<&Path>,
    out: Option<&Path>,
    overlay: Option<&Path>,
) -> Result<i32, CliError> {
    let scene_path = pick(scene, &cfg.paths.scene, "scene path (--scene)")?;
    let out = pick(out, &cfg.paths.poses, "output path (--out)")?;
    let overlay = overlay.map(Path::to_owned).or_else(|| cfg.paths.overlay.clone());
    let scene = load_scene(&scene_path)?;

    let mut tracker = Tracker::new(scene.intrinsics, cfg.pipeline).map_err(|e| CliError::Input(e.to_string()))?;
    for input in scene_inputs(&scene) {
        tracker.advance(&input).map_err(|e| CliError::Input(e.to_string()))?;
    }
    let output = tracker.finish();
    let n_frames = scene.frames.len() as u64;
    let doc = PoseStreamDoc::new(scene.intrinsics, n_frames, &output);
    write_document(&out, &doc, false)?;
    if let Some(dir) = overlay {
        render_stream(&doc, &dir)?;
    }
    info!(
        "{} pose records, {} lost, {} dropped",
        doc.records.len(),
        doc.lost.len(),
        doc.dropped.len()
    );
    if !doc.lost.is_empty() {
        for l in &doc.lost {
            warn!("track {} lost at frame {}: {}", l.id, l.frame, l.reason);
        }
        return Ok(EXIT_TRACKING_LOST);
    }
    Ok(0)
}

fn render_stream(doc: &PoseStreamDoc, dir: &Path) -> Result<(), CliError> {
    let entries: Vec<(u64, u64, KeypointSet2D)> = doc.records.iter().map(|r| (r.frame, r.id, r.keypoints2d)).collect();
    write_overlays(dir, doc.intrinsics.width, doc.intrinsics.height, doc.n_frames, &entries)
}

/// Draw a pose stream's wireframes, one PPM per frame.
pub fn render(cfg: &RunConfig, poses: Option<&Path>, overlay: Option<&Path>) -> Result<i32, CliError> {
    let poses = pick(poses, &cfg.paths.poses, "pose stream path (--poses)")?;
    let dir = pick(overlay, &cfg.paths.overlay, "overlay directory (--overlay)")?;
    let doc: PoseStreamDoc = read_document(&poses)?;
    render_stream(&doc, &dir)?;
    Ok(0)
}

/// Score a pose stream against a scene and write the metrics document.
pub fn eval(cfg: &RunConfig, poses: Option<&Path>, scene: Option<&Path>, out: Option<&Path>) -> Result<i32, CliError> {
    let poses_path = pick(poses, &cfg.paths.poses, "pose stream path (--poses)")?;
    let scene_path = pick(scene, &cfg.paths.scene, "scene path (--scene)")?;
    let out = pick(out, &cfg.paths.metrics, "output path (--out)")?;
    let stream: PoseStreamDoc = read_document(&poses_path)?;
    let scene = load_scene(&scene_path)?;
    let metrics = evaluate(&stream, &scene, &cfg.eval.iou_thresholds)?;
    write_document(&out, &metrics, true)?;
    Ok(0)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Metrics for a pose stream. Each record is matched to the ground-truth
/// object in its frame with the highest depth-aligned 3D IoU (closest
/// projection when none overlaps). Estimates are scored by
/// `1 / (1 + residual)` for AP, and ground truth is taken from the frame
/// range the stream covers.
pub fn evaluate(stream: &PoseStreamDoc, scene: &Scene, thresholds: &[f64]) -> Result<MetricsDoc, CliError> {
    let k = scene.intrinsics;
    let n_frames = scene.frames.len() as u64;
    if let Some(r) = stream.records.iter().find(|r| r.frame >= n_frames) {
        return Err(CliError::Input(format!(
            "pose stream frame {} lies outside the scene's frames 0..{}",
            r.frame, n_frames
        )));
    }
    let poses: Vec<BoxPose> = stream
        .records
        .iter()
        .map(|r| r.pose())
        .collect::<Result<_, _>>()
        .map_err(CliError::Input)?;
    let gt_kp = |frame: u64, object: usize| {
        project_box(&k, &scene.frames[frame as usize].gt_poses[object]).expect("scene poses project")
    };

    let mut per_track: BTreeMap<u64, Vec<FrameError>> = BTreeMap::new();
    let mut track_kp: BTreeMap<u64, Vec<(u64, KeypointSet2D)>> = BTreeMap::new();
    for (r, pose) in stream.records.iter().zip(&poses) {
        let gts = &scene.frames[r.frame as usize].gt_poses;
        let scored: Vec<(usize, f64, f64)> = gts
            .iter()
            .enumerate()
            .map(|(i, g)| (i, aligned_iou(pose, g), r.keypoints2d.max_distance(&gt_kp(r.frame, i))))
            .collect();
        let (object, iou, kp_err) = *scored
            .iter()
            .reduce(|best, c| {
                if c.1 > best.1 || (c.1 == best.1 && c.2 < best.2) {
                    c
                } else {
                    best
                }
            })
            .expect("scenes have at least one object");
        let e = pose_error(pose, &gts[object]);
        per_track.entry(r.id).or_default().push(FrameError {
            frame: r.frame,
            object,
            rotation_err: e.rotation_err,
            translation_dir_err: e.translation_dir_err,
            depth_ratio: e.depth_ratio,
            size_ratio: e.size_ratio,
            iou3d: iou,
            keypoint_max_err: kp_err,
        });
        track_kp.entry(r.id).or_default().push((r.frame, r.keypoints2d));
    }

    let tracks: Vec<TrackMetrics> = per_track
        .into_iter()
        .map(|(id, errors)| {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for e in &errors {
                *counts.entry(e.object).or_default() += 1;
            }
            let object = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(o, _)| *o)
                .unwrap_or(0);
            let est = &track_kp[&id];
            let gt: Vec<(u64, KeypointSet2D)> = est.iter().map(|(f, _)| (*f, gt_kp(*f, object))).collect();
            TrackMetrics {
                id,
                object,
                first_frame: errors.first().map_or(0, |e| e.frame),
                last_frame: errors.last().map_or(0, |e| e.frame),
                jitter: jitter(est, &gt).ok(),
                pose_errors: errors,
            }
        })
        .collect();

    let (first, last) = match (
        stream.records.iter().map(|r| r.frame).min(),
        stream.records.iter().map(|r| r.frame).max(),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => (0, n_frames.saturating_sub(1)),
    };
    let gts: Vec<GroundTruth> = scene.frames[first as usize..=last as usize]
        .iter()
        .flat_map(|f| {
            f.gt_poses.iter().map(move |p| GroundTruth {
                group: f.frame_id,
                pose: *p,
            })
        })
        .collect();
    let ests: Vec<ScoredEstimate> = stream
        .records
        .iter()
        .zip(&poses)
        .map(|(r, p)| ScoredEstimate {
            group: r.frame,
            pose: *p,
            score: 1.0 / (1.0 + r.residual),
        })
        .collect();
    let ap = thresholds
        .iter()
        .map(|&t| {
            let flags = match_estimates(&ests, &gts, t, aligned_iou);
            let curve = pr_curve(&flags, gts.len()).map_err(|e| CliError::Input(e.to_string()))?;
            Ok(ApEntry {
                iou_threshold: t,
                ap: ap_from_curve(&curve),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let all_errors = || tracks.iter().flat_map(|t| t.pose_errors.iter());
    let summary = Summary {
        n_records: stream.records.len(),
        n_tracks: tracks.len(),
        n_lost: stream.lost.len(),
        mean_rotation_err: mean(all_errors().map(|e| e.rotation_err)),
        max_rotation_err: all_errors().map(|e| e.rotation_err).reduce(f64::max),
        max_keypoint_err: all_errors().map(|e| e.keypoint_max_err).reduce(f64::max),
        mean_jitter: mean(tracks.iter().filter_map(|t| t.jitter)),
    };
    Ok(MetricsDoc {
        schema: crate::schema::SCHEMA.into(),
        ap,
        tracks,
        summary,
    })
}
