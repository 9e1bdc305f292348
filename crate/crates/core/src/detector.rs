//! Detection target synthesis, heatmap decoding, and the synthetic detector
//! that stands in for a trained network.
//!
//! The detection target is an axis-aligned Gaussian centered on the projected
//! box centroid whose standard deviations are `beta` times the 2D extent of
//! the projected keypoints. Vertex positions are regressed as per-cell pixel
//! offsets from the cell center.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project_box, BoxPose, CameraIntrinsics, GeometryError, KeypointSet2D, NUM_KEYPOINTS};
use crate::seeding::derive_seed;
use crate::sim::Scene;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("projected center ({u:.2}, {v:.2}) lies outside the viewport")]
    CenterOutsideViewport { u: f64, v: f64 },
    #[error("invalid heatmap parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Grid dimensions of the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub width: usize,
    pub height: usize,
}

impl Default for GridDims {
    fn default() -> Self {
        Self { width: 40, height: 30 }
    }
}

/// Row-major grid of center-likelihood values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// Pixels per cell.
    pub stride: f64,
}

impl Heatmap {
    pub fn zeros(dims: GridDims, stride: f64) -> Self {
        Self {
            width: dims.width,
            height: dims.height,
            values: vec![0.0; dims.width * dims.height],
            stride,
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Vector2<f64> {
        Vector2::new((col as f64 + 0.5) * self.stride, (row as f64 + 0.5) * self.stride)
    }

    /// Bilinear read at a pixel position; clamps to the border cells.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        let gx = (u / self.stride - 0.5).clamp(0.0, (self.width - 1) as f64);
        let gy = (v / self.stride - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (c0, r0) = (gx.floor() as usize, gy.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(self.width - 1), (r0 + 1).min(self.height - 1));
        let (fx, fy) = (gx - c0 as f64, gy - r0 as f64);
        let top = self.get(c0, r0) * (1.0 - fx) + self.get(c1, r0) * fx;
        let bottom = self.get(c0, r1) * (1.0 - fx) + self.get(c1, r1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Add a Gaussian blob, keeping the per-cell maximum.
    fn splat_max(&mut self, center: Vector2<f64>, sigma: Vector2<f64>) {
        for row in 0..self.height {
            for col in 0..self.width {
                let c = self.cell_center(col, row);
                let du = (c.x - center.x) / sigma.x;
                let dv = (c.y - center.y) / sigma.y;
                let value = (-0.5 * (du * du + dv * dv)).exp();
                let cell = &mut self.values[row * self.width + col];
                *cell = cell.max(value);
            }
        }
    }
}

/// Per-cell offsets `(Δu, Δv)` from the cell center to each of the 8 corner
/// keypoints, in keypoint order 1..=8.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexField {
    pub width: usize,
    pub height: usize,
    pub offsets: Vec<[f64; 16]>,
}

impl VertexField {
    pub fn zeros(dims: GridDims) -> Self {
        Self {
            width: dims.width,
            height: dims.height,
            offsets: vec![[0.0; 16]; dims.width * dims.height],
        }
    }
}

/// A detector output: keypoints observed in frame `frame_id`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub keypoints: KeypointSet2D,
    pub score: f64,
    /// Capture frame.
    pub frame_id: u64,
}

fn grid_stride(k: &CameraIntrinsics, dims: GridDims) -> Result<f64, DetectorError> {
    if dims.width == 0 || dims.height == 0 {
        return Err(DetectorError::InvalidParameters(
            "grid dimensions must be positive".into(),
        ));
    }
    Ok(k.width as f64 / dims.width as f64)
}

fn gaussian_params(
    k: &CameraIntrinsics,
    kp: &KeypointSet2D,
    beta: f64,
) -> Result<(Vector2<f64>, Vector2<f64>), DetectorError> {
    if !(beta > 0.0) {
        return Err(DetectorError::InvalidParameters(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let center = kp.points[0];
    if !k.contains(&center) {
        return Err(DetectorError::CenterOutsideViewport {
            u: center.x,
            v: center.y,
        });
    }
    let extent = kp.bounding_rect();
    Ok((center, Vector2::new(beta * extent.width(), beta * extent.height())))
}

/// Ground-truth center heatmap for one object.
pub fn render_gt_heatmap(
    k: &CameraIntrinsics,
    pose: &BoxPose,
    beta: f64,
    dims: GridDims,
) -> Result<Heatmap, DetectorError> {
    let stride = grid_stride(k, dims)?;
    let kp = project_box(k, pose)?;
    let (center, sigma) = gaussian_params(k, &kp, beta)?;
    let mut h = Heatmap::zeros(dims, stride);
    h.splat_max(center, sigma);
    Ok(h)
}

/// Heatmap and vertex field for several objects. Each cell's offsets point
/// at the object whose Gaussian is strongest there.
pub fn render_targets(
    k: &CameraIntrinsics,
    poses: &[BoxPose],
    beta: f64,
    dims: GridDims,
) -> Result<(Heatmap, VertexField), DetectorError> {
    let stride = grid_stride(k, dims)?;
    let mut heat = Heatmap::zeros(dims, stride);
    let mut field = VertexField::zeros(dims);
    let mut owner = vec![f64::NEG_INFINITY; dims.width * dims.height];
    for pose in poses {
        let kp = project_box(k, pose)?;
        let (center, sigma) = gaussian_params(k, &kp, beta)?;
        heat.splat_max(center, sigma);
        for row in 0..dims.height {
            for col in 0..dims.width {
                let c = heat.cell_center(col, row);
                let du = (c.x - center.x) / sigma.x;
                let dv = (c.y - center.y) / sigma.y;
                let strength = -0.5 * (du * du + dv * dv);
                let idx = row * dims.width + col;
                if strength > owner[idx] {
                    owner[idx] = strength;
                    field.offsets[idx] = std::array::from_fn(|j| {
                        let p = kp.points[1 + j / 2];
                        if j % 2 == 0 {
                            p.x - c.x
                        } else {
                            p.y - c.y
                        }
                    });
                }
            }
        }
    }
    Ok((heat, field))
}

/// Ground-truth vertex field for one object.
pub fn render_gt_vertex_field(
    k: &CameraIntrinsics,
    pose: &BoxPose,
    dims: GridDims,
) -> Result<VertexField, DetectorError> {
    Ok(render_targets(k, std::slice::from_ref(pose), 1.0, dims)?.1)
}

/// Peaks of `h` at or above `peak_threshold` that are 8-neighborhood local
/// maxima and survive greedy suppression within `nms_radius` cells
/// (Chebyshev distance). Ordered by score, ties by row-major index.
pub fn decode(h: &Heatmap, f: &VertexField, peak_threshold: f64, nms_radius: usize) -> Vec<Detection> {
    assert_eq!(
        (h.width, h.height),
        (f.width, f.height),
        "heatmap and vertex field grids differ"
    );
    let idx = |c: usize, r: usize| r * h.width + c;
    // Strict total order: larger value first, then smaller index.
    let beats = |a: usize, b: usize| h.values[a] > h.values[b] || (h.values[a] == h.values[b] && a < b);

    let mut candidates = Vec::new();
    for r in 0..h.height {
        for c in 0..h.width {
            let i = idx(c, r);
            if !(h.values[i] >= peak_threshold) {
                continue;
            }
            let mut local_max = true;
            'scan: for nr in r.saturating_sub(1)..=(r + 1).min(h.height - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(h.width - 1) {
                    let j = idx(nc, nr);
                    if j != i && beats(j, i) {
                        local_max = false;
                        break 'scan;
                    }
                }
            }
            if local_max {
                candidates.push(i);
            }
        }
    }
    candidates.sort_by(|&a, &b| {
        if beats(a, b) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });

    let mut kept: Vec<usize> = Vec::new();
    for i in candidates {
        let (c, r) = (i % h.width, i / h.width);
        let suppressed = kept.iter().any(|&j| {
            let (kc, kr) = (j % h.width, j / h.width);
            c.abs_diff(kc).max(r.abs_diff(kr)) <= nms_radius
        });
        if !suppressed {
            kept.push(i);
        }
    }

    kept.into_iter()
        .map(|i| {
            let (c, r) = (i % h.width, i / h.width);
            let center = h.cell_center(c, r);
            let off = &f.offsets[i];
            let points: [Vector2<f64>; NUM_KEYPOINTS] = std::array::from_fn(|k| {
                if k == 0 {
                    center
                } else {
                    center + Vector2::new(off[2 * (k - 1)], off[2 * (k - 1) + 1])
                }
            });
            Detection {
                keypoints: KeypointSet2D::new(points),
                score: h.values[i],
                frame_id: 0,
            }
        })
        .collect()
}

/// Synthetic detector behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StubConfig {
    /// Per-coordinate Gaussian keypoint noise, pixels.
    pub noise_sigma: f64,
    /// Frames between detector runs.
    pub cadence: u64,
    /// Frames between capture and delivery.
    pub latency: u64,
    /// Probability that a scheduled detection is missing.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            cadence: 5,
            latency: 0,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl StubConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.cadence < 1 {
            return Err("cadence must be at least 1".into());
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return Err("dropout must lie in [0, 1)".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err("noise_sigma must be non-negative".into());
        }
        Ok(())
    }

    pub fn runs_at(&self, frame_id: u64) -> bool {
        frame_id.is_multiple_of(self.cadence)
    }
}

/// Synthetic detection of one ground-truth box.
///
/// Random draws come from `ChaCha8Rng` seeded with
/// `derive_seed(cfg.seed, [frame_id, object])`, in this order: one uniform
/// for dropout, then 18 standard normals (x then y for keypoints 0..=8).
pub fn stub_detect_pose(
    k: &CameraIntrinsics,
    pose: &BoxPose,
    frame_id: u64,
    object: usize,
    cfg: &StubConfig,
) -> Option<Detection> {
    if !cfg.runs_at(frame_id) {
        return None;
    }
    let truth = project_box(k, pose).ok()?;
    if !k.contains(&truth.points[0]) {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[frame_id, object as u64]));
    let drop_draw: f64 = rng.random();
    if drop_draw < cfg.dropout {
        return None;
    }
    let noise: [Vector2<f64>; NUM_KEYPOINTS] = std::array::from_fn(|_| {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        Vector2::new(x, y) * cfg.noise_sigma
    });
    let rms = (noise.iter().map(|n| n.norm_squared()).sum::<f64>() / NUM_KEYPOINTS as f64).sqrt();
    let keypoints = KeypointSet2D::new(std::array::from_fn(|i| truth.points[i] + noise[i]));
    Some(Detection {
        keypoints,
        score: 1.0 / (1.0 + rms),
        frame_id,
    })
}

/// Synthetic detection of object `object` in scene frame `frame_id`.
pub fn stub_detect(scene: &Scene, frame_id: u64, object: usize, cfg: &StubConfig) -> Option<Detection> {
    let frame = scene.frames.get(frame_id as usize)?;
    let pose = frame.gt_poses.get(object)?;
    stub_detect_pose(&scene.intrinsics, pose, frame_id, object, cfg)
}
