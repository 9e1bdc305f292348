//! Runs the `boxtrack` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use boxtrack::geometry::{axis_angle, project_box, BoxPose};
use boxtrack_cli::schema::{MetricsDoc, PoseRecordDoc, PoseStreamDoc, SceneDoc};
use nalgebra::Vector3;

fn boxtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boxtrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p
}

fn read<T: serde::de::DeserializeOwned>(p: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const SMALL: &str = r#"{"trajectory": {"n_frames": 30}, "stub": {"cadence": 1}}"#;

#[test]
fn simulate_records_seed_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let o = boxtrack(&[
            "simulate",
            "--config",
            path_str(&cfg),
            "--seed",
            "42",
            "--out",
            path_str(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let doc: SceneDoc = read(&a);
    assert_eq!(doc.schema, "boxtrack9/1");
    assert_eq!(doc.meta.seed, 42);
    assert_eq!(doc.frames.len(), 30);
}

#[test]
fn invalid_config_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"trajectory": {"n_frames": 0}}"#);
    let o = boxtrack(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&dir.path().join("s.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trajectory.n_frames"));

    let cfg = write_config(dir.path(), r#"{"stub": {"cadense": 3}}"#);
    let o = boxtrack(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&dir.path().join("s.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cadense"));
}

#[test]
fn missing_scene_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = boxtrack(&[
        "track",
        "--scene",
        path_str(&dir.path().join("nope.json")),
        "--out",
        path_str(&dir.path().join("p.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = boxtrack(&["track", "--out", path_str(&dir.path().join("p.json"))]);
    assert_eq!(o.status.code(), Some(2), "no scene path at all");
}

#[test]
fn scene_with_wrong_schema_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s.json");
    fs::write(&scene, r#"{"schema": "other/1"}"#).unwrap();
    let o = boxtrack(&[
        "track",
        "--scene",
        path_str(&scene),
        "--out",
        path_str(&dir.path().join("p.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported schema"));
}

#[test]
fn help_documents_defaults() {
    let o = boxtrack(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for key in [
        "\"n_frames\": 200",
        "\"inlier_threshold\": 2.0",
        "\"blend_weight\": 1.0",
        "\"iou_thresholds\"",
    ] {
        assert!(text.contains(key), "help lacks {key}");
    }
}

fn simulate_and_track(dir: &Path, config: &str, overlay: Option<&Path>) -> (PathBuf, PathBuf, Output) {
    let cfg = write_config(dir, config);
    let scene = dir.join("scene.json");
    let poses = dir.join("poses.json");
    let o = boxtrack(&["simulate", "--config", path_str(&cfg), "--out", path_str(&scene)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut args = vec![
        "track",
        "--config",
        path_str(&cfg),
        "--scene",
        path_str(&scene),
        "--out",
        path_str(&poses),
    ];
    if let Some(d) = overlay {
        args.extend(["--overlay", path_str(d)]);
    }
    let o = boxtrack(&args);
    (scene, poses, o)
}

#[test]
fn overlays_one_ppm_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let overlay = dir.path().join("overlay");
    let (_, poses, o) = simulate_and_track(dir.path(), SMALL, Some(&overlay));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut files: Vec<_> = fs::read_dir(&overlay)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    files.sort();
    assert_eq!(files.len(), 30);
    assert_eq!(files[0], "frame_00000.ppm");
    let img = fs::read(overlay.join("frame_00010.ppm")).unwrap();
    let header = b"P6\n640 480\n255\n";
    assert_eq!(&img[..header.len()], header);
    assert_eq!(img.len(), header.len() + 640 * 480 * 3);
    assert!(img[header.len()..].iter().any(|&v| v != 255), "wireframe drawn");

    // `render` reproduces the same images from the pose stream.
    let again = dir.path().join("again");
    let o = boxtrack(&["render", "--poses", path_str(&poses), "--overlay", path_str(&again)]);
    assert!(o.status.success());
    assert_eq!(fs::read(again.join("frame_00010.ppm")).unwrap(), img);
}

#[test]
fn perfect_tracking_scores_ap_one_and_zero_jitter() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, poses, o) = simulate_and_track(dir.path(), SMALL, None);
    assert!(o.status.success());
    let metrics = dir.path().join("m.json");
    let o = boxtrack(&[
        "eval",
        "--poses",
        path_str(&poses),
        "--scene",
        path_str(&scene),
        "--out",
        path_str(&metrics),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: MetricsDoc = read(&metrics);
    assert_eq!(m.ap.len(), 1);
    assert_eq!(m.ap[0].iou_threshold, 0.5);
    assert!((m.ap[0].ap - 1.0).abs() < 1e-12, "{:?}", m.ap);
    assert!(m.summary.mean_jitter.unwrap() < 1e-6);
    assert!(m.summary.max_rotation_err.unwrap() < 1e-5);
}

/// Hand-built pose streams over a two-frame, one-object scene.
fn fixture(dir: &Path, records: Vec<PoseRecordDoc>) -> (PathBuf, PathBuf) {
    let cfg = write_config(
        dir,
        r#"{"trajectory": {"n_frames": 2, "camera_motion": {"type": "orbit", "rate": 0.0}}}"#,
    );
    let scene = dir.join("scene.json");
    assert!(
        boxtrack(&["simulate", "--config", path_str(&cfg), "--out", path_str(&scene)])
            .status
            .success()
    );
    let doc: SceneDoc = read(&scene);
    let poses = dir.join("poses.json");
    let stream = PoseStreamDoc {
        schema: "boxtrack9/1".into(),
        intrinsics: doc.intrinsics,
        n_frames: 2,
        records,
        lost: vec![],
        dropped: vec![],
        discarded: vec![],
    };
    fs::write(&poses, serde_json::to_string(&stream).unwrap()).unwrap();
    (scene, poses)
}

fn record(frame: u64, pose: &BoxPose, residual: f64) -> PoseRecordDoc {
    let k = boxtrack::CameraIntrinsics::default();
    let r = pose.rotation;
    PoseRecordDoc {
        frame,
        id: frame,
        keypoints2d: project_box(&k, pose).unwrap(),
        rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
        translation: pose.translation.into(),
        size: pose.size.into(),
        residual,
    }
}

fn eval_fixture(dir: &Path, scene: &Path, poses: &Path) -> (Output, PathBuf) {
    let metrics = dir.join("m.json");
    (
        boxtrack(&[
            "eval",
            "--poses",
            path_str(poses),
            "--scene",
            path_str(scene),
            "--out",
            path_str(&metrics),
        ]),
        metrics,
    )
}

#[test]
fn three_detection_fixture_scores_five_sixths() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, _) = fixture(dir.path(), vec![]);
    let gt: SceneDoc = read(&scene);
    let g0 = gt.frames[0].gt_poses[0];
    let g1 = gt.frames[1].gt_poses[0];
    // Scores 1/(1+r): 0.9 TP at frame 0, then an FP far from the object, then a TP at frame 1.
    let far = BoxPose::new(
        axis_angle(&Vector3::z(), 0.3),
        g0.translation + Vector3::new(0.0, 0.0, 5.0),
        g0.size,
    )
    .unwrap();
    let records = vec![
        record(0, &g0.scaled(0.5), 1.0 / 0.9 - 1.0),
        record(0, &far, 0.25),
        record(1, &g1, 1.0 / 0.7 - 1.0),
    ];
    let (scene, poses) = fixture(dir.path(), records);
    let (o, metrics) = eval_fixture(dir.path(), &scene, &poses);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: MetricsDoc = read(&metrics);
    assert!((m.ap[0].ap - 5.0 / 6.0).abs() < 1e-9, "{:?}", m.ap);
}

#[test]
fn empty_stream_scores_zero_with_null_jitter() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, poses) = fixture(dir.path(), vec![]);
    let (o, metrics) = eval_fixture(dir.path(), &scene, &poses);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&metrics).unwrap();
    assert!(text.contains("\"mean_jitter\": null"), "{text}");
    let m: MetricsDoc = read(&metrics);
    assert_eq!(m.ap[0].ap, 0.0);
}

#[test]
fn frames_outside_scene_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, _) = fixture(dir.path(), vec![]);
    let gt: SceneDoc = read(&scene);
    let (scene, poses) = fixture(dir.path(), vec![record(7, &gt.frames[0].gt_poses[0], 0.0)]);
    let (o, _) = eval_fixture(dir.path(), &scene, &poses);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn lost_track_exits_3_with_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"trajectory": {"n_frames": 20, "outlier_rate": 0.97, "plane_points": 60},
                     "stub": {"cadence": 100}}"#;
    let (_, poses, o) = simulate_and_track(dir.path(), config, None);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: PoseStreamDoc = read(&poses);
    assert_eq!(doc.lost.len(), 1);
    assert!(!doc.records.is_empty());
}

#[test]
fn full_run_is_byte_identical() {
    let config = r#"{"trajectory": {"n_frames": 60, "corr_noise_sigma": 0.5, "outlier_rate": 0.2, "n_objects": 2, "plane_points": 300},
                     "stub": {"noise_sigma": 2.0, "cadence": 5, "latency": 1, "dropout": 0.1}}"#;
    let run = |dir: &Path| {
        let (scene, poses, o) = simulate_and_track(dir, config, None);
        assert!(o.status.code() == Some(0) || o.status.code() == Some(3));
        let (o, metrics) = eval_fixture(dir, &scene, &poses);
        assert!(o.status.success());
        [scene, poses, metrics].map(|p| fs::read(p).unwrap())
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(a.path()), run(b.path()));
}
