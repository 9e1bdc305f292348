use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{box_vertices, BoxPose};

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Grow each side by `fraction` of the rectangle's extent on that axis.
    pub fn expanded(&self, fraction: f64) -> Self {
        let dx = self.width() * fraction;
        let dy = self.height() * fraction;
        Self::new(self.x0 - dx, self.y0 - dy, self.x1 + dx, self.y1 + dy)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Intersection-over-union of two axis-aligned rectangles.
pub fn iou2d_rect(a: &Rect, b: &Rect) -> f64 {
    let inter = Rect::new(a.x0.max(b.x0), a.y0.max(b.y0), a.x1.min(b.x1), a.y1.min(b.y1)).area();
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Closed convex polytope stored as outward-oriented face polygons.
#[derive(Debug, Clone)]
struct Polytope {
    faces: Vec<Vec<Vector3<f64>>>,
}

/// Half-space `normal · x <= offset`.
#[derive(Debug, Clone, Copy)]
struct HalfSpace {
    normal: Vector3<f64>,
    offset: f64,
}

fn box_polytope(pose: &BoxPose) -> Polytope {
    let v = box_vertices(pose);
    let center = v.points[0];
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0usize, 1] {
            let base = side << axis;
            let corner = |bu: usize, bw: usize| v.points[(base | (bu << u) | (bw << w)) + 1];
            let mut face = vec![corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            let n = (face[1] - face[0]).cross(&(face[2] - face[0]));
            let mid = face.iter().sum::<Vector3<f64>>() / 4.0;
            if n.dot(&(mid - center)) < 0.0 {
                face.reverse();
            }
            faces.push(face);
        }
    }
    Polytope { faces }
}

fn box_half_spaces(pose: &BoxPose) -> [HalfSpace; 6] {
    std::array::from_fn(|k| {
        let axis = k / 2;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let normal: Vector3<f64> = pose.rotation.column(axis) * sign;
        HalfSpace {
            normal,
            offset: normal.dot(&pose.translation) + pose.size[axis] / 2.0,
        }
    })
}

impl Polytope {
    fn clip(&self, h: &HalfSpace, eps: f64) -> Polytope {
        let dist = |p: &Vector3<f64>| h.normal.dot(p) - h.offset;
        let any_outside = self.faces.iter().flatten().any(|p| dist(p) > eps);
        if !any_outside {
            return self.clone();
        }

        let mut faces = Vec::with_capacity(self.faces.len() + 1);
        let mut cap: Vec<Vector3<f64>> = Vec::new();
        for face in &self.faces {
            let mut out = Vec::with_capacity(face.len() + 2);
            for i in 0..face.len() {
                let p = face[i];
                let q = face[(i + 1) % face.len()];
                let (dp, dq) = (dist(&p), dist(&q));
                let p_in = dp <= eps;
                let q_in = dq <= eps;
                if p_in {
                    out.push(p);
                    if dp.abs() <= eps {
                        cap.push(p);
                    }
                }
                if p_in != q_in && (dp.abs() > eps && dq.abs() > eps) {
                    let t = dp / (dp - dq);
                    let x = p + (q - p) * t;
                    out.push(x);
                    cap.push(x);
                }
            }
            if out.len() >= 3 {
                faces.push(out);
            }
        }

        if let Some(cap_face) = order_cap(cap, &h.normal, eps) {
            faces.push(cap_face);
        }
        Polytope { faces }
    }

    /// Volume by the divergence theorem, fanning each face from its first
    /// vertex and measuring against the vertex centroid.
    fn volume(&self) -> f64 {
        let (sum, n) = self
            .faces
            .iter()
            .flatten()
            .fold((Vector3::zeros(), 0usize), |(s, n), p| (s + p, n + 1));
        if n == 0 {
            return 0.0;
        }
        let c = sum / n as f64;
        let mut six_v = 0.0;
        for face in &self.faces {
            let a = face[0] - c;
            for k in 1..face.len() - 1 {
                let b = face[k] - c;
                let d = face[k + 1] - c;
                six_v += a.dot(&b.cross(&d));
            }
        }
        (six_v / 6.0).max(0.0)
    }
}

/// Deduplicate points lying on a clipping plane and order them
/// counter-clockwise about `normal`.
fn order_cap(points: Vec<Vector3<f64>>, normal: &Vector3<f64>, eps: f64) -> Option<Vec<Vector3<f64>>> {
    let mut unique: Vec<Vector3<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if !unique.iter().any(|q| (q - p).norm() <= eps) {
            unique.push(p);
        }
    }
    if unique.len() < 3 {
        return None;
    }
    let centroid = unique.iter().sum::<Vector3<f64>>() / unique.len() as f64;
    let seed = if normal.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = normal.cross(&seed).normalize();
    let e2 = normal.cross(&e1);
    let mut keyed: Vec<(f64, Vector3<f64>)> = unique
        .into_iter()
        .map(|p| {
            let d = p - centroid;
            (d.dot(&e2).atan2(d.dot(&e1)), p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(keyed.into_iter().map(|(_, p)| p).collect())
}

/// Volume of the intersection of two oriented boxes.
pub fn intersection_volume(a: &BoxPose, b: &BoxPose) -> f64 {
    let scale = a
        .size
        .amax()
        .max(b.size.amax())
        .max(a.translation.amax())
        .max(b.translation.amax());
    let eps = 1e-12 * scale.max(1e-300);
    let mut poly = box_polytope(a);
    for h in box_half_spaces(b) {
        poly = poly.clip(&h, eps);
        if poly.faces.len() < 4 {
            return 0.0;
        }
    }
    poly.volume()
}

/// Intersection-over-union of two oriented boxes' volumes.
pub fn iou3d(a: &BoxPose, b: &BoxPose) -> f64 {
    let va = a.volume();
    let vb = b.volume();
    let inter = intersection_volume(a, b).min(va).min(vb);
    let union = va + vb - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::axis_angle;
    use nalgebra::Matrix3;

    fn cube(center: Vector3<f64>, rotation: Matrix3<f64>) -> BoxPose {
        BoxPose::new(rotation, center, Vector3::repeat(1.0)).unwrap()
    }

    #[test]
    fn identical_boxes() {
        let a = cube(
            Vector3::new(0.1, 0.2, 3.0),
            axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7),
        );
        assert!((iou3d(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn axis_aligned_half_overlap() {
        let a = cube(Vector3::new(0.0, 0.0, 3.0), Matrix3::identity());
        let b = cube(Vector3::new(0.5, 0.0, 3.0), Matrix3::identity());
        assert!((iou3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou3d(&b, &a) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_and_touching_boxes() {
        let a = cube(Vector3::new(0.0, 0.0, 3.0), Matrix3::identity());
        let far = cube(Vector3::new(5.0, 0.0, 3.0), Matrix3::identity());
        let touching = cube(Vector3::new(1.0, 0.0, 3.0), Matrix3::identity());
        assert_eq!(iou3d(&a, &far), 0.0);
        assert!(iou3d(&a, &touching) < 1e-12);
    }

    #[test]
    fn contained_box() {
        let a = BoxPose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 3.0), Vector3::repeat(2.0)).unwrap();
        let b = cube(Vector3::new(0.2, -0.1, 3.1), axis_angle(&Vector3::z(), 0.3));
        assert!((iou3d(&a, &b) - 1.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_cube_octagon_prism() {
        // Unit cube vs. itself rotated 45° about z: the overlap is a regular
        // octagonal prism of area 2(√2 − 1) and height 1.
        let a = cube(Vector3::new(0.0, 0.0, 3.0), Matrix3::identity());
        let b = cube(
            Vector3::new(0.0, 0.0, 3.0),
            axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_4),
        );
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expected = inter / (2.0 - inter);
        assert!((iou3d(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn rect_examples() {
        let a = Rect::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou2d_rect(&a, &a), 1.0);
        assert_eq!(iou2d_rect(&a, &Rect::new(3.0, 3.0, 4.0, 4.0)), 0.0);
        assert!((iou2d_rect(&a, &Rect::new(1.0, 0.0, 3.0, 2.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            iou2d_rect(&Rect::new(1.0, 1.0, 1.0, 1.0), &Rect::new(1.0, 1.0, 1.0, 1.0)),
            0.0
        );
    }
}
