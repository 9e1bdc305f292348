//! Wireframe overlays written as binary PPM (P6) images.

use std::fs;
use std::path::{Path, PathBuf};

use boxtrack::geometry::{KeypointSet2D, BOX_EDGES};
use nalgebra::Vector2;

use crate::error::CliError;

pub type Rgb = [u8; 3];

const PALETTE: [Rgb; 6] = [
    [220, 40, 40],
    [30, 120, 220],
    [30, 160, 60],
    [200, 120, 0],
    [140, 60, 200],
    [0, 150, 150],
];

pub fn track_color(id: u64) -> Rgb {
    PALETTE[(id % PALETTE.len() as u64) as usize]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Canvas {
    pub fn white(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![255; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    /// Draw the segment `a`–`b` after clipping it to the canvas.
    pub fn line(&mut self, a: Vector2<f64>, b: Vector2<f64>, c: Rgb) {
        let Some((a, b)) = clip_segment(a, b, self.width as f64 - 1.0, self.height as f64 - 1.0) else {
            return;
        };
        let (mut x0, mut y0) = (a.x.round() as i64, a.y.round() as i64);
        let (x1, y1) = (b.x.round() as i64, b.y.round() as i64);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    /// Filled square of side `2·radius + 1` centered on `p`.
    pub fn marker(&mut self, p: Vector2<f64>, radius: i64, c: Rgb) {
        if !p.x.is_finite() || !p.y.is_finite() {
            return;
        }
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for y in cy - radius..=cy + radius {
            for x in cx - radius..=cx + radius {
                self.put(x, y, c);
            }
        }
    }

    pub fn wireframe(&mut self, kp: &KeypointSet2D, c: Rgb) {
        for (i, j) in BOX_EDGES {
            self.line(kp.points[i], kp.points[j], c);
        }
        for p in &kp.points {
            self.marker(*p, 1, c);
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Liang–Barsky clipping to `[0, xmax] × [0, ymax]`.
fn clip_segment(a: Vector2<f64>, b: Vector2<f64>, xmax: f64, ymax: f64) -> Option<(Vector2<f64>, Vector2<f64>)> {
    if !(a.iter().chain(b.iter()).all(|v| v.is_finite())) {
        return None;
    }
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d.x, a.x), (d.x, xmax - a.x), (-d.y, a.y), (d.y, ymax - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then(|| (a + d * t0, a + d * t1))
}

pub fn frame_path(dir: &Path, frame: u64) -> PathBuf {
    dir.join(format!("frame_{frame:05}.ppm"))
}

/// Write one overlay per frame in `0..n_frames`, drawing each `(frame, id,
/// keypoints)` entry onto its frame.
pub fn write_overlays(
    dir: &Path,
    width: u32,
    height: u32,
    n_frames: u64,
    tracks: &[(u64, u64, KeypointSet2D)],
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let mut by_frame: Vec<Vec<(u64, &KeypointSet2D)>> = vec![Vec::new(); n_frames as usize];
    for (frame, id, kp) in tracks {
        if let Some(slot) = by_frame.get_mut(*frame as usize) {
            slot.push((*id, kp));
        }
    }
    for (frame, entries) in by_frame.iter().enumerate() {
        let mut canvas = Canvas::white(width as usize, height as usize);
        for (id, kp) in entries {
            canvas.wireframe(kp, track_color(*id));
        }
        let path = frame_path(dir, frame as u64);
        fs::write(&path, canvas.to_ppm()).map_err(|source| CliError::Io { path, source })?;
    }
    Ok(())
}
