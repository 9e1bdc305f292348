//! Plane-motion estimation from sparse point correspondences.
//!
//! [`estimate_dlt`] is the Hartley-normalized direct linear transform;
//! [`estimate_ransac`] wraps a 4-point minimal solver in a seeded,
//! fixed-iteration RANSAC loop scored by symmetric transfer error.
//!
//! Sampling algorithm (stable across releases so runs replay bit for bit):
//! a `ChaCha8Rng` is seeded with `RansacConfig::seed`; each iteration draws
//! indices with `random_range(0..n)`, rejecting repeats, until four distinct
//! indices are collected. Samples with three collinear points on either side
//! are skipped but still consume their iteration.

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::symmetric_eigen;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HomographyError {
    #[error("need at least {need} correspondences, got {got}")]
    NotEnoughCorrespondences { got: usize, need: usize },
    #[error("degenerate correspondence configuration")]
    DegenerateInput,
    #[error("tracking lost: {inliers} inliers, {required} required")]
    TrackingLost { inliers: usize, required: usize },
    #[error("point maps to infinity")]
    PointAtInfinity,
    #[error("homography is not invertible")]
    NotInvertible,
    #[error("invalid RANSAC config: {0}")]
    InvalidConfig(String),
}

/// A point observed in two consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "CorrespondenceRepr", into = "CorrespondenceRepr")]
pub struct Correspondence {
    pub prev: Vector2<f64>,
    pub curr: Vector2<f64>,
}

impl Correspondence {
    pub fn new(prev: Vector2<f64>, curr: Vector2<f64>) -> Self {
        Self { prev, curr }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrespondenceRepr {
    prev: [f64; 2],
    curr: [f64; 2],
}

impl From<CorrespondenceRepr> for Correspondence {
    fn from(r: CorrespondenceRepr) -> Self {
        Self {
            prev: r.prev.into(),
            curr: r.curr.into(),
        }
    }
}

impl From<Correspondence> for CorrespondenceRepr {
    fn from(c: Correspondence) -> Self {
        Self {
            prev: c.prev.into(),
            curr: c.curr.into(),
        }
    }
}

const MIN_DETERMINANT: f64 = 1e-12;
const INFINITY_W: f64 = 1e-12;

/// Projective 3×3 map, stored with unit Frobenius norm and a non-negative
/// bottom-right entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity() / 3f64.sqrt())
    }

    /// Normalize `m` and check invertibility.
    pub fn new(m: Matrix3<f64>) -> Result<Self, HomographyError> {
        let norm = m.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(HomographyError::NotInvertible);
        }
        let mut h = m / norm;
        let pivot = if h[(2, 2)] != 0.0 {
            h[(2, 2)]
        } else {
            h.iter()
                .copied()
                .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a })
        };
        if pivot < 0.0 {
            h = -h;
        }
        if !(h.determinant().abs() > MIN_DETERMINANT) {
            return Err(HomographyError::NotInvertible);
        }
        Ok(Self(h))
    }

    /// Pure translation by `(dx, dy)`.
    pub fn translation(dx: f64, dy: f64) -> Self {
        Self::new(Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0)).expect("translation is invertible")
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let inv = self.0.try_inverse().expect("validated invertible at construction");
        Self::new(inv).expect("inverse of an invertible homography")
    }

    /// Frobenius distance to `other` after both are normalized.
    pub fn distance(&self, other: &Self) -> f64 {
        (self.0 - other.0).norm()
    }

    /// Distance after expressing both maps in the normalized coordinates of
    /// a `width × height` viewport (see [`viewport_normalization`]). Unlike
    /// [`Homography::distance`] this does not depend on pixel units or on
    /// where the image origin sits.
    pub fn viewport_distance(&self, other: &Self, width: f64, height: f64) -> f64 {
        let t = viewport_normalization(width, height);
        let t_inv = t.try_inverse().expect("similarity is invertible");
        let conj = |h: &Self| Self::new(t * h.0 * t_inv).expect("conjugate of an invertible homography");
        conj(self).distance(&conj(other))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        std::array::from_fn(|k| self.0[(k / 3, k % 3)])
    }
}

/// Similarity taking viewport pixels to coordinates centered on the
/// viewport, scaled so points spread uniformly over it have RMS radius √2.
pub fn viewport_normalization(width: f64, height: f64) -> Matrix3<f64> {
    let s = 2f64.sqrt() / ((width * width + height * height) / 12.0).sqrt();
    Matrix3::new(s, 0.0, -s * width / 2.0, 0.0, s, -s * height / 2.0, 0.0, 0.0, 1.0)
}

impl Serialize for Homography {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 9]>::deserialize(d)?;
        Homography::new(Matrix3::from_row_slice(&a)).map_err(serde::de::Error::custom)
    }
}

/// Projective action of `h` on a pixel.
pub fn apply(h: &Homography, p: &Vector2<f64>) -> Result<Vector2<f64>, HomographyError> {
    apply_matrix(&h.0, p).ok_or(HomographyError::PointAtInfinity)
}

fn apply_matrix(m: &Matrix3<f64>, p: &Vector2<f64>) -> Option<Vector2<f64>> {
    let q = m * Vector3::new(p.x, p.y, 1.0);
    if q.z.abs() <= INFINITY_W {
        return None;
    }
    Some(Vector2::new(q.x / q.z, q.y / q.z))
}

/// Product `outer · inner`: applying the result equals applying `inner`
/// first and then `outer`.
pub fn compose(outer: &Homography, inner: &Homography) -> Homography {
    Homography::new(outer.0 * inner.0).expect("product of invertible maps")
}

/// Similarity moving `points` to zero mean and RMS radius √2.
fn normalizing_transform(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let mean = points.clone().fold(Vector2::zeros(), |a, p| a + p) / n;
    let ms = points.map(|p| (p - mean).norm_squared()).sum::<f64>() / n;
    let s = if ms > 0.0 { (2.0 / ms).sqrt() } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
}

fn transform(t: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// Eigenvalue ratio `λ2 / λmax` of the DLT normal matrix below which the
/// solution direction is not unique (singular-value ratio 1e-6; eigenvalues
/// of the normal matrix carry absolute round-off near `1e-16 · λmax`).
const DLT_NULL_SPACE_FLOOR: f64 = 1e-12;

/// Hartley-normalized DLT over all correspondences (maps `prev` to `curr`).
pub fn estimate_dlt(corrs: &[Correspondence]) -> Result<Homography, HomographyError> {
    if corrs.len() < 4 {
        return Err(HomographyError::NotEnoughCorrespondences {
            got: corrs.len(),
            need: 4,
        });
    }
    if corrs
        .iter()
        .any(|c| !(c.prev.iter().chain(c.curr.iter()).all(|v| v.is_finite())))
    {
        return Err(HomographyError::DegenerateInput);
    }
    if corrs.len() == 4 && has_collinear_triple(&corrs.iter().map(|c| c.prev).collect::<Vec<_>>()) {
        return Err(HomographyError::DegenerateInput);
    }
    let tp = normalizing_transform(corrs.iter().map(|c| c.prev));
    let tc = normalizing_transform(corrs.iter().map(|c| c.curr));

    let mut normal = SMatrix::<f64, 9, 9>::zeros();
    for c in corrs {
        let p = transform(&tp, &c.prev);
        let q = transform(&tc, &c.curr);
        let r1 = SVector::<f64, 9>::from_column_slice(&[-p.x, -p.y, -1.0, 0.0, 0.0, 0.0, q.x * p.x, q.x * p.y, q.x]);
        let r2 = SVector::<f64, 9>::from_column_slice(&[0.0, 0.0, 0.0, -p.x, -p.y, -1.0, q.y * p.x, q.y * p.y, q.y]);
        normal += r1 * r1.transpose() + r2 * r2.transpose();
    }
    let eig = symmetric_eigen(&normal, 1e-15);
    if !(eig.values[1] > DLT_NULL_SPACE_FLOOR * eig.values[8]) {
        return Err(HomographyError::DegenerateInput);
    }
    let h = eig.smallest_vector();
    let hn = Matrix3::from_row_slice(h.as_slice());
    let tc_inv = tc.try_inverse().ok_or(HomographyError::DegenerateInput)?;
    Homography::new(tc_inv * hn * tp).map_err(|_| HomographyError::DegenerateInput)
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Whether any three of the four points are collinear (relative to their spread).
fn has_collinear_triple(pts: &[Vector2<f64>]) -> bool {
    let scale = pts.iter().map(|p| (p - pts[0]).norm_squared()).fold(0.0, f64::max);
    if scale == 0.0 {
        return true;
    }
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES
        .iter()
        .any(|&[a, b, c]| cross2(&(pts[b] - pts[a]), &(pts[c] - pts[a])).abs() <= 1e-9 * scale)
}

/// Exact homography through four correspondences (`h33 = 1` in normalized
/// coordinates).
fn solve_minimal(sample: &[Correspondence; 4]) -> Option<Matrix3<f64>> {
    let tp = normalizing_transform(sample.iter().map(|c| c.prev));
    let tc = normalizing_transform(sample.iter().map(|c| c.curr));
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for (i, c) in sample.iter().enumerate() {
        let p = transform(&tp, &c.prev);
        let q = transform(&tc, &c.curr);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[p.x, p.y, 1.0, 0.0, 0.0, 0.0, -q.x * p.x, -q.x * p.y]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, p.x, p.y, 1.0, -q.y * p.x, -q.y * p.y]);
        b[r] = q.x;
        b[r + 1] = q.y;
    }
    let x = a.lu().solve(&b)?;
    let hn = Matrix3::new(x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], 1.0);
    let h = tc.try_inverse()? * hn * tp;
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    /// Symmetric transfer error bound for inliers, in pixels.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
    /// Stop early once the standard confidence bound is met. Sampling order
    /// is unchanged, so an adaptive run is a prefix of the fixed run.
    pub adaptive: bool,
    /// Success probability used by the adaptive stopping rule.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_threshold: 2.0,
            max_iterations: 500,
            min_inliers: 8,
            seed: 0,
            adaptive: false,
            confidence: 0.999,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), HomographyError> {
        if !(self.inlier_threshold > 0.0) || !self.inlier_threshold.is_finite() {
            return Err(HomographyError::InvalidConfig(
                "inlier_threshold must be positive".into(),
            ));
        }
        if self.max_iterations < 1 {
            return Err(HomographyError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if self.min_inliers < 4 {
            return Err(HomographyError::InvalidConfig("min_inliers must be at least 4".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(HomographyError::InvalidConfig("confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub homography: Homography,
    /// Inlier flags in input order.
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// RMS of the forward and backward transfer distances, or `None` when
/// either direction sends the point to infinity.
fn symmetric_transfer_error(h: &Matrix3<f64>, h_inv: &Matrix3<f64>, c: &Correspondence) -> Option<f64> {
    let f = apply_matrix(h, &c.prev)?;
    let b = apply_matrix(h_inv, &c.curr)?;
    Some((((f - c.curr).norm_squared() + (b - c.prev).norm_squared()) / 2.0).sqrt())
}

/// Inlier count and summed squared error of a hypothesis.
fn score(h: &Matrix3<f64>, corrs: &[Correspondence], threshold: f64, mask: &mut [bool]) -> Option<(usize, f64)> {
    let h_inv = h.try_inverse()?;
    let mut count = 0;
    let mut sse = 0.0;
    for (c, m) in corrs.iter().zip(mask.iter_mut()) {
        *m = match symmetric_transfer_error(h, &h_inv, c) {
            Some(e) if e < threshold => {
                count += 1;
                sse += e * e;
                true
            }
            _ => false,
        };
    }
    Some((count, sse))
}

fn draw_sample(rng: &mut ChaCha8Rng, n: usize) -> [usize; 4] {
    let mut idx = [usize::MAX; 4];
    let mut k = 0;
    while k < 4 {
        let i = rng.random_range(0..n);
        if !idx[..k].contains(&i) {
            idx[k] = i;
            k += 1;
        }
    }
    idx
}

/// Robust homography with inlier mask. Deterministic in (input order, config).
pub fn estimate_ransac(corrs: &[Correspondence], cfg: &RansacConfig) -> Result<RansacResult, HomographyError> {
    cfg.validate()?;
    let n = corrs.len();
    if n < cfg.min_inliers {
        return Err(HomographyError::TrackingLost {
            inliers: n,
            required: cfg.min_inliers,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mask = vec![false; n];
    let mut best_mask = vec![false; n];
    let mut best: Option<(usize, f64)> = None;
    let mut needed = cfg.max_iterations;
    let mut iterations = 0;

    while iterations < needed.min(cfg.max_iterations) {
        iterations += 1;
        let idx = draw_sample(&mut rng, n);
        let sample = idx.map(|i| corrs[i]);
        if has_collinear_triple(&sample.map(|c| c.prev)) || has_collinear_triple(&sample.map(|c| c.curr)) {
            continue;
        }
        let Some(h) = solve_minimal(&sample) else { continue };
        let Some((count, sse)) = score(&h, corrs, cfg.inlier_threshold, &mut mask) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((bc, bs)) => count > bc || (count == bc && sse < bs),
        };
        if better {
            best = Some((count, sse));
            best_mask.copy_from_slice(&mask);
            if cfg.adaptive {
                let w = count as f64 / n as f64;
                let p_fail = 1.0 - w.powi(4);
                needed = if p_fail <= 0.0 {
                    iterations
                } else {
                    ((1.0 - cfg.confidence).ln() / p_fail.ln()).ceil().max(1.0) as usize
                };
            }
        }
    }

    let best_count = best.map_or(0, |b| b.0);
    if best_count < cfg.min_inliers {
        return Err(HomographyError::TrackingLost {
            inliers: best_count,
            required: cfg.min_inliers,
        });
    }
    let inlier_set: Vec<Correspondence> = corrs
        .iter()
        .zip(&best_mask)
        .filter(|(_, &m)| m)
        .map(|(c, _)| *c)
        .collect();
    let homography = estimate_dlt(&inlier_set)?;
    let (count, _) =
        score(homography.matrix(), corrs, cfg.inlier_threshold, &mut mask).ok_or(HomographyError::NotInvertible)?;
    if count < cfg.min_inliers {
        return Err(HomographyError::TrackingLost {
            inliers: count,
            required: cfg.min_inliers,
        });
    }
    Ok(RansacResult {
        homography,
        inliers: mask,
        iterations,
    })
}
